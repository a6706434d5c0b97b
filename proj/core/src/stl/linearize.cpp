#include "pastel/stl/linearize.hpp"

#include "pastel/common/error.hpp"

#include <charconv>
#include <cmath>
#include <limits>

namespace pastel::stl {

namespace {

std::string format_number(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Binding strength used to decide where canonical parentheses are needed.
int precedence(const Formula& f) {
  switch (f.op()) {
    case Op::disjunction: return 1;
    case Op::conjunction: return 2;
    case Op::until: return 3;
    default: return 4;
  }
}

class Linearizer {
public:
  Linearizer(Traversal style, WordForm form, int max_bound)
      : style_(style), form_(form), max_bound_(max_bound) {}

  std::vector<std::string> run(const Formula& f) {
    emit(f);
    return std::move(out_);
  }

private:
  std::string op_name(const Formula& f) const {
    const bool word = form_ == WordForm::word;
    switch (f.op()) {
      case Op::negation: return word ? "not" : "!";
      case Op::conjunction: return word ? "and" : "&";
      case Op::disjunction: return word ? "or" : "|";
      case Op::eventually: return word ? "finally" : "F";
      case Op::always: return word ? "globally" : "G";
      case Op::until: return word ? "until" : "U";
      case Op::atom: break;
    }
    return {};
  }

  std::string bound(int v) const {
    if (v > max_bound_) {
      throw Error(ErrorCategory::domain, "interval bound " + std::to_string(v) +
                                             " exceeds the token vocabulary limit " +
                                             std::to_string(max_bound_));
    }
    return std::to_string(v);
  }

  void emit_atom(const Formula& f) {
    if (const auto* r = std::get_if<RegionAtom>(&f.atom())) {
      if (r->polarity == env::Polarity::outside) {
        out_.push_back(form_ == WordForm::word ? "outside" : "!");
      }
      out_.push_back(r->region);
      return;
    }
    out_.push_back(render_affine(std::get<AffineAtom>(f.atom())));
  }

  void emit_interval(const Formula& f, bool brackets) {
    const Interval& w = f.interval();
    if (brackets) out_.push_back("[");
    out_.push_back(bound(w.lo));
    if (brackets) out_.push_back(",");
    out_.push_back(bound(w.hi));
    if (brackets) out_.push_back("]");
  }

  void emit_wrapped(const Formula& f, bool parens) {
    if (parens) out_.push_back("(");
    emit(f);
    if (parens) out_.push_back(")");
  }

  void emit(const Formula& f) {
    if (f.op() == Op::atom) {
      emit_atom(f);
      return;
    }
    switch (style_) {
      case Traversal::pre_order:
        out_.push_back(op_name(f));
        if (f.is_temporal()) emit_interval(f, false);
        for (const auto& c : f.children()) emit(c);
        return;
      case Traversal::post_order:
        for (const auto& c : f.children()) emit(c);
        out_.push_back(op_name(f));
        if (f.is_temporal()) emit_interval(f, false);
        return;
      case Traversal::in_order: break;
    }
    switch (f.op()) {
      case Op::negation:
      case Op::eventually:
      case Op::always:
        out_.push_back(op_name(f));
        if (f.is_temporal()) emit_interval(f, true);
        emit_wrapped(f.child(0), true);
        return;
      case Op::conjunction:
      case Op::disjunction:
      case Op::until: {
        const int p = precedence(f);
        emit_wrapped(f.child(0), precedence(f.child(0)) < p);
        out_.push_back(op_name(f));
        if (f.is_temporal()) emit_interval(f, true);
        emit_wrapped(f.child(1), precedence(f.child(1)) <= p);
        return;
      }
      case Op::atom: break;
    }
  }

  Traversal style_;
  WordForm form_;
  int max_bound_;
  std::vector<std::string> out_;
};

} // namespace

std::string render_affine(const AffineAtom& atom) {
  std::string lhs;
  for (std::size_t k = 0; k < atom.weights.size(); ++k) {
    const double w = atom.weights[k];
    if (w == 0.0) continue;
    if (k >= kSignalVariables.size()) {
      throw Error(ErrorCategory::domain, "affine predicate over component " + std::to_string(k) +
                                             " has no textual form");
    }
    const std::string var(kSignalVariables.at(k));
    const double mag = std::abs(w);
    const std::string body = mag == 1.0 ? var : format_number(mag) + "*" + var;
    if (lhs.empty()) {
      lhs = (w < 0 ? "-" : "") + body;
    } else {
      lhs += (w < 0 ? "-" : "+") + body;
    }
  }
  if (lhs.empty()) lhs = "0";
  return lhs + ">" + format_number(-atom.offset);
}

TokenStream linearize(const Formula& f, Traversal style, WordForm form, int max_bound) {
  return TokenStream{Linearizer(style, form, max_bound).run(f)};
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (t == "&" || t == "|") {
      out += " " + t + " ";
    } else if (t == "U") {
      out += " U";
    } else {
      out += t;
    }
    // close of the until interval: "U", "[", a, ",", b, "]"
    if (t == "]" && i >= 5 && tokens[i - 5] == "U") out += " ";
  }
  return out;
}

std::string render_canonical(const Formula& f) {
  return join_tokens(linearize(f, Traversal::in_order, WordForm::symbol,
                               std::numeric_limits<int>::max())
                         .tokens);
}

} // namespace pastel::stl
