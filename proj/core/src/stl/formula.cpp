#include "pastel/stl/formula.hpp"

#include "pastel/common/error.hpp"

#include <algorithm>
#include <set>

namespace pastel::stl {

Interval Interval::checked(long long lo, long long hi) {
  if (lo < 0 || hi < 0) {
    throw Error(ErrorCategory::domain, "malformed interval: negative bound");
  }
  if (hi < lo) {
    throw Error(ErrorCategory::domain, "malformed interval: hi " + std::to_string(hi) +
                                           " < lo " + std::to_string(lo));
  }
  if (hi > 1'000'000) throw Error(ErrorCategory::domain, "malformed interval: bound too large");
  return Interval{static_cast<int>(lo), static_cast<int>(hi)};
}

Formula Formula::region(std::string name, env::Polarity polarity) {
  auto n = std::make_shared<Node>();
  n->op = Op::atom;
  n->atom = RegionAtom{std::move(name), polarity};
  return Formula(std::move(n));
}

Formula Formula::affine(std::vector<double> weights, double offset) {
  while (!weights.empty() && weights.back() == 0.0) weights.pop_back();
  auto n = std::make_shared<Node>();
  n->op = Op::atom;
  n->atom = AffineAtom{std::move(weights), offset};
  return Formula(std::move(n));
}

Formula Formula::negation(Formula f) {
  auto n = std::make_shared<Node>();
  n->op = Op::negation;
  n->children = {std::move(f)};
  return Formula(std::move(n));
}

Formula Formula::conjunction(Formula lhs, Formula rhs) {
  auto n = std::make_shared<Node>();
  n->op = Op::conjunction;
  n->children = {std::move(lhs), std::move(rhs)};
  return Formula(std::move(n));
}

Formula Formula::disjunction(Formula lhs, Formula rhs) {
  auto n = std::make_shared<Node>();
  n->op = Op::disjunction;
  n->children = {std::move(lhs), std::move(rhs)};
  return Formula(std::move(n));
}

Formula Formula::eventually(Interval window, Formula f) {
  auto n = std::make_shared<Node>();
  n->op = Op::eventually;
  n->window = Interval::checked(window.lo, window.hi);
  n->children = {std::move(f)};
  return Formula(std::move(n));
}

Formula Formula::always(Interval window, Formula f) {
  auto n = std::make_shared<Node>();
  n->op = Op::always;
  n->window = Interval::checked(window.lo, window.hi);
  n->children = {std::move(f)};
  return Formula(std::move(n));
}

Formula Formula::until(Interval window, Formula lhs, Formula rhs) {
  auto n = std::make_shared<Node>();
  n->op = Op::until;
  n->window = Interval::checked(window.lo, window.hi);
  n->children = {std::move(lhs), std::move(rhs)};
  return Formula(std::move(n));
}

Op Formula::op() const noexcept { return node_->op; }

bool Formula::is_temporal() const noexcept {
  return node_->op == Op::eventually || node_->op == Op::always || node_->op == Op::until;
}

const Interval& Formula::interval() const {
  if (!is_temporal()) throw Error(ErrorCategory::internal, "interval() on non-temporal node");
  return node_->window;
}

const AtomPayload& Formula::atom() const {
  if (node_->op != Op::atom) throw Error(ErrorCategory::internal, "atom() on operator node");
  return node_->atom;
}

std::span<const Formula> Formula::children() const noexcept { return node_->children; }

bool operator==(const Formula& a, const Formula& b) {
  if (a.node_ == b.node_) return true;
  if (a.op() != b.op()) return false;
  if (a.op() == Op::atom) return a.atom() == b.atom();
  if (a.is_temporal() && !(a.interval() == b.interval())) return false;
  const auto ca = a.children();
  const auto cb = b.children();
  return std::equal(ca.begin(), ca.end(), cb.begin(), cb.end());
}

Signal::Signal(std::size_t dim, std::vector<double> values) : dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw Error(ErrorCategory::domain, "signal dimension must be positive");
  if (values_.empty() || values_.size() % dim_ != 0) {
    throw Error(ErrorCategory::domain, "signal must be non-empty with uniform dimension " +
                                           std::to_string(dim_));
  }
}

Signal Signal::from_states(std::span<const env::State> states) {
  std::vector<double> v;
  v.reserve(states.size() * 4);
  for (const auto& x : states) {
    v.insert(v.end(), {x.px, x.py, x.vx, x.vy});
  }
  return Signal(4, std::move(v));
}

int horizon(const Formula& f) {
  switch (f.op()) {
    case Op::atom: return 0;
    case Op::negation: return horizon(f.child(0));
    case Op::conjunction:
    case Op::disjunction: return std::max(horizon(f.child(0)), horizon(f.child(1)));
    case Op::eventually:
    case Op::always: return f.interval().hi + horizon(f.child(0));
    case Op::until:
      return f.interval().hi + std::max(horizon(f.child(0)), horizon(f.child(1)));
  }
  return 0;
}

int depth(const Formula& f) {
  int d = 0;
  for (const auto& c : f.children()) d = std::max(d, depth(c));
  return d + 1;
}

namespace {
void collect_regions(const Formula& f, std::set<std::string>& out) {
  if (f.op() == Op::atom) {
    if (const auto* r = std::get_if<RegionAtom>(&f.atom())) out.insert(r->region);
    return;
  }
  for (const auto& c : f.children()) collect_regions(c, out);
}
} // namespace

std::vector<std::string> referenced_regions(const Formula& f) {
  std::set<std::string> names;
  collect_regions(f, names);
  return {names.begin(), names.end()};
}

} // namespace pastel::stl
