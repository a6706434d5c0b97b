#include "pastel/stl/semantics.hpp"

#include "pastel/common/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pastel::stl {

namespace {

void check_window(const Formula& f, const Signal& s, int t) {
  if (t < 0) throw Error(ErrorCategory::domain, "evaluation time must be non-negative");
  const long long required = static_cast<long long>(t) + horizon(f) + 1;
  if (required > static_cast<long long>(s.length())) {
    throw Error(ErrorCategory::domain, "signal too short: formula needs " +
                                           std::to_string(required) + " samples from t=" +
                                           std::to_string(t) + ", signal has " +
                                           std::to_string(s.length()));
  }
}

bool holds(const Formula& f, const Signal& s, int t, const env::EnvironmentSpec& env) {
  switch (f.op()) {
    case Op::atom: return atom_value(f.atom(), s.sample(t), env) > 0.0;
    case Op::negation: return !holds(f.child(0), s, t, env);
    case Op::conjunction: return holds(f.child(0), s, t, env) && holds(f.child(1), s, t, env);
    case Op::disjunction: return holds(f.child(0), s, t, env) || holds(f.child(1), s, t, env);
    case Op::eventually: {
      const auto& w = f.interval();
      for (int u = t + w.lo; u <= t + w.hi; ++u) {
        if (holds(f.child(0), s, u, env)) return true;
      }
      return false;
    }
    case Op::always: {
      const auto& w = f.interval();
      for (int u = t + w.lo; u <= t + w.hi; ++u) {
        if (!holds(f.child(0), s, u, env)) return false;
      }
      return true;
    }
    case Op::until: {
      const auto& w = f.interval();
      for (int u = t + w.lo; u <= t + w.hi; ++u) {
        if (!holds(f.child(1), s, u, env)) continue;
        bool guard = true;
        for (int v = t; v <= u && guard; ++v) guard = holds(f.child(0), s, v, env);
        if (guard) return true;
      }
      return false;
    }
  }
  return false;
}

double rho(const Formula& f, const Signal& s, int t, const env::EnvironmentSpec& env) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (f.op()) {
    case Op::atom: return atom_value(f.atom(), s.sample(t), env);
    case Op::negation: return -rho(f.child(0), s, t, env);
    case Op::conjunction: return std::min(rho(f.child(0), s, t, env), rho(f.child(1), s, t, env));
    case Op::disjunction: return std::max(rho(f.child(0), s, t, env), rho(f.child(1), s, t, env));
    case Op::eventually: {
      const auto& w = f.interval();
      double best = -inf;
      for (int u = t + w.lo; u <= t + w.hi; ++u) best = std::max(best, rho(f.child(0), s, u, env));
      return best;
    }
    case Op::always: {
      const auto& w = f.interval();
      double worst = inf;
      for (int u = t + w.lo; u <= t + w.hi; ++u) worst = std::min(worst, rho(f.child(0), s, u, env));
      return worst;
    }
    case Op::until: {
      const auto& w = f.interval();
      double best = -inf;
      double guard = inf;
      // running min of the left operand over [t, u]
      for (int v = t; v < t + w.lo; ++v) guard = std::min(guard, rho(f.child(0), s, v, env));
      for (int u = t + w.lo; u <= t + w.hi; ++u) {
        guard = std::min(guard, rho(f.child(0), s, u, env));
        best = std::max(best, std::min(rho(f.child(1), s, u, env), guard));
      }
      return best;
    }
  }
  return 0.0;
}

} // namespace

double atom_value(const AtomPayload& atom, std::span<const double> sample,
                  const env::EnvironmentSpec& env) {
  if (const auto* r = std::get_if<RegionAtom>(&atom)) {
    if (sample.size() < 2) {
      throw Error(ErrorCategory::domain, "region predicate needs a planar position sample");
    }
    const double m = env::rect_margin(env.region(r->region).bounds, sample[0], sample[1]);
    return r->polarity == env::Polarity::inside ? m : -m;
  }
  const auto& a = std::get<AffineAtom>(atom);
  if (a.weights.size() > sample.size()) {
    throw Error(ErrorCategory::domain, "affine predicate dimension exceeds signal dimension");
  }
  double v = a.offset;
  for (std::size_t k = 0; k < a.weights.size(); ++k) v += a.weights[k] * sample[k];
  return v;
}

bool satisfies(const Formula& f, const Signal& s, int t, const env::EnvironmentSpec& env) {
  check_window(f, s, t);
  return holds(f, s, t, env);
}

double robustness(const Formula& f, const Signal& s, int t, const env::EnvironmentSpec& env) {
  check_window(f, s, t);
  return rho(f, s, t, env);
}

double smooth_robustness(const Formula& f, const Signal& s, int t,
                         const env::EnvironmentSpec& env, double beta) {
  if (!(beta > 0.0)) throw Error(ErrorCategory::domain, "smoothing temperature beta must be > 0");
  check_window(f, s, t);
  return SmoothProgram(f, t, s.length(), s.dim(), &env).evaluate(s, beta);
}

std::size_t max_aggregation_width(const Formula& f) {
  return SmoothProgram(f, 0, static_cast<std::size_t>(horizon(f)) + 1, 4, nullptr).max_width();
}

double smooth_error_bound(const Formula& f, double beta) {
  if (!(beta > 0.0)) throw Error(ErrorCategory::domain, "smoothing temperature beta must be > 0");
  return SmoothProgram(f, 0, static_cast<std::size_t>(horizon(f)) + 1, 4, nullptr)
      .error_bound(beta);
}

// ---------------------------------------------------------------------------
// SmoothProgram

namespace {

bool flips_with_sign(Op op) { return op == Op::conjunction || op == Op::always; }

} // namespace

SmoothProgram::SmoothProgram(const Formula& f, int t, std::size_t signal_length,
                             std::size_t dim, const env::EnvironmentSpec* env)
    : env_(env), length_(signal_length), dim_(dim) {
  if (t < 0 || static_cast<long long>(t) + horizon(f) + 1 > static_cast<long long>(length_)) {
    throw Error(ErrorCategory::domain, "signal too short: formula needs " +
                                           std::to_string(t + horizon(f) + 1) + " samples, have " +
                                           std::to_string(length_));
  }
  root_ = build(f, t, 1.0);
  memo_.clear();
}

int SmoothProgram::add_leaf(const Formula& atom, int t, double sign) {
  Node n;
  n.sign = sign;
  n.time = t;
  if (const auto* r = std::get_if<RegionAtom>(&atom.atom())) {
    n.kind = Kind::region;
    if (r->polarity == env::Polarity::outside) n.sign = -sign;
    if (env_ != nullptr) n.rect = env_->region(r->region).bounds;
    if (dim_ < 2) throw Error(ErrorCategory::domain, "region predicate needs a planar signal");
  } else {
    const auto& a = std::get<AffineAtom>(atom.atom());
    if (a.weights.size() > dim_) {
      throw Error(ErrorCategory::domain, "affine predicate dimension exceeds signal dimension");
    }
    n.kind = Kind::affine;
    n.weights = a.weights;
    n.offset = a.offset;
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int SmoothProgram::build(const Formula& f, int t, double sign) {
  if (f.op() == Op::negation) return build(f.child(0), t, -sign);
  const auto key = std::make_tuple(f.identity(), t, sign > 0);
  if (auto it = memo_.find(key); it != memo_.end()) return it->second;

  int index;
  if (f.op() == Op::atom) {
    index = add_leaf(f, t, sign);
  } else {
    const bool is_min = flips_with_sign(f.op()) == (sign > 0);
    const Kind dir = is_min ? Kind::soft_min : Kind::soft_max;
    std::vector<int> terms;
    expand(f, t, sign, dir, terms);
    if (terms.size() == 1) {
      index = terms.front();
    } else {
      max_width_ = std::max(max_width_, terms.size());
      Node n;
      n.kind = dir;
      n.terms = std::move(terms);
      nodes_.push_back(std::move(n));
      index = static_cast<int>(nodes_.size()) - 1;
    }
  }
  memo_.emplace(key, index);
  return index;
}

void SmoothProgram::add_term(const Formula& f, int t, double sign, Kind dir,
                             std::vector<int>& terms) {
  if (f.op() == Op::negation) {
    add_term(f.child(0), t, -sign, dir, terms);
    return;
  }
  if (f.op() != Op::atom) {
    const bool is_min = flips_with_sign(f.op()) == (sign > 0);
    if ((is_min ? Kind::soft_min : Kind::soft_max) == dir) {
      expand(f, t, sign, dir, terms);
      return;
    }
  }
  terms.push_back(build(f, t, sign));
}

void SmoothProgram::expand(const Formula& f, int t, double sign, Kind dir,
                           std::vector<int>& terms) {
  switch (f.op()) {
    case Op::conjunction:
    case Op::disjunction:
      add_term(f.child(0), t, sign, dir, terms);
      add_term(f.child(1), t, sign, dir, terms);
      return;
    case Op::eventually:
    case Op::always: {
      const auto& w = f.interval();
      for (int u = t + w.lo; u <= t + w.hi; ++u) add_term(f.child(0), u, sign, dir, terms);
      return;
    }
    case Op::until: {
      // outer aggregation over the release time u, inner over {rhs(u), lhs(t..u)}
      const Kind inner_dir = dir == Kind::soft_max ? Kind::soft_min : Kind::soft_max;
      const auto& w = f.interval();
      for (int u = t + w.lo; u <= t + w.hi; ++u) {
        std::vector<int> inner;
        add_term(f.child(1), u, sign, inner_dir, inner);
        for (int v = t; v <= u; ++v) add_term(f.child(0), v, sign, inner_dir, inner);
        if (inner.size() == 1) {
          terms.push_back(inner.front());
          continue;
        }
        max_width_ = std::max(max_width_, inner.size());
        Node n;
        n.kind = inner_dir;
        n.terms = std::move(inner);
        nodes_.push_back(std::move(n));
        terms.push_back(static_cast<int>(nodes_.size()) - 1);
      }
      return;
    }
    case Op::atom:
    case Op::negation: break;
  }
  throw Error(ErrorCategory::internal, "expand() on a non-aggregating node");
}

void SmoothProgram::check_signal(const Signal& s) const {
  if (env_ == nullptr) {
    throw Error(ErrorCategory::internal, "structural SmoothProgram cannot be evaluated");
  }
  if (s.length() != length_ || s.dim() != dim_) {
    throw Error(ErrorCategory::shape, "signal shape differs from the compiled program");
  }
}

double SmoothProgram::evaluate(const Signal& s, double beta) const {
  return evaluate(s, beta, {});
}

double SmoothProgram::evaluate(const Signal& s, double beta, std::span<double> gradient) const {
  if (!(beta > 0.0)) throw Error(ErrorCategory::domain, "smoothing temperature beta must be > 0");
  check_signal(s);
  const bool want_grad = !gradient.empty();
  if (want_grad && gradient.size() != s.values().size()) {
    throw Error(ErrorCategory::shape, "gradient buffer must match the signal size");
  }

  const std::size_t count = nodes_.size();
  std::vector<double> value(count, 0.0);
  // For leaves: index of the active face (region) ; for aggregations: softmax weights.
  std::vector<int> active_face(want_grad ? count : 0, 0);
  std::vector<std::vector<double>> weights(want_grad ? count : 0);

  for (std::size_t i = 0; i < count; ++i) {
    const Node& n = nodes_[i];
    switch (n.kind) {
      case Kind::region: {
        const auto x = s.sample(static_cast<std::size_t>(n.time));
        const double faces[4] = {x[0] - n.rect.xlo, n.rect.xhi - x[0], x[1] - n.rect.ylo,
                                 n.rect.yhi - x[1]};
        int k = 0;
        for (int j = 1; j < 4; ++j) {
          if (faces[j] < faces[k]) k = j;
        }
        value[i] = n.sign * faces[k];
        if (want_grad) active_face[i] = k;
        break;
      }
      case Kind::affine: {
        const auto x = s.sample(static_cast<std::size_t>(n.time));
        double v = n.offset;
        for (std::size_t k = 0; k < n.weights.size(); ++k) v += n.weights[k] * x[k];
        value[i] = n.sign * v;
        break;
      }
      case Kind::soft_max:
      case Kind::soft_min: {
        const double dir = n.kind == Kind::soft_max ? 1.0 : -1.0;
        double peak = -std::numeric_limits<double>::infinity();
        for (int j : n.terms) peak = std::max(peak, dir * value[j]);
        double total = 0.0;
        for (int j : n.terms) total += std::exp(beta * (dir * value[j] - peak));
        value[i] = dir * (peak + std::log(total) / beta);
        if (want_grad) {
          auto& w = weights[i];
          w.resize(n.terms.size());
          for (std::size_t j = 0; j < n.terms.size(); ++j) {
            w[j] = std::exp(beta * (dir * value[n.terms[j]] - peak)) / total;
          }
        }
        break;
      }
    }
  }

  if (want_grad) {
    std::fill(gradient.begin(), gradient.end(), 0.0);
    std::vector<double> adjoint(count, 0.0);
    adjoint[static_cast<std::size_t>(root_)] = 1.0;
    for (std::size_t r = count; r-- > 0;) {
      const Node& n = nodes_[r];
      const double a = adjoint[r];
      if (a == 0.0) continue;
      switch (n.kind) {
        case Kind::region: {
          double* g = gradient.data() + static_cast<std::size_t>(n.time) * dim_;
          switch (active_face[r]) {
            case 0: g[0] += a * n.sign; break;
            case 1: g[0] -= a * n.sign; break;
            case 2: g[1] += a * n.sign; break;
            default: g[1] -= a * n.sign; break;
          }
          break;
        }
        case Kind::affine: {
          double* g = gradient.data() + static_cast<std::size_t>(n.time) * dim_;
          for (std::size_t k = 0; k < n.weights.size(); ++k) g[k] += a * n.sign * n.weights[k];
          break;
        }
        case Kind::soft_max:
        case Kind::soft_min:
          for (std::size_t j = 0; j < n.terms.size(); ++j) {
            adjoint[static_cast<std::size_t>(n.terms[j])] += a * weights[r][j];
          }
          break;
      }
    }
  }
  return value[static_cast<std::size_t>(root_)];
}

double SmoothProgram::error_bound(double beta) const {
  // upper[i]: smooth - exact <= upper ; lower[i]: exact - smooth <= lower
  std::vector<double> upper(nodes_.size(), 0.0);
  std::vector<double> lower(nodes_.size(), 0.0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind != Kind::soft_max && n.kind != Kind::soft_min) continue;
    double up = 0.0;
    double lo = 0.0;
    for (int j : n.terms) {
      up = std::max(up, upper[static_cast<std::size_t>(j)]);
      lo = std::max(lo, lower[static_cast<std::size_t>(j)]);
    }
    const double slack = std::log(static_cast<double>(n.terms.size())) / beta;
    if (n.kind == Kind::soft_max) {
      up += slack;
    } else {
      lo += slack;
    }
    upper[i] = up;
    lower[i] = lo;
  }
  const auto root = static_cast<std::size_t>(root_);
  return std::max(upper[root], lower[root]);
}

} // namespace pastel::stl
