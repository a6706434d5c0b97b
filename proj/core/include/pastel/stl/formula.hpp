#pragma once

#include "pastel/env/planar_env.hpp"

#include <array>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pastel::stl {

/// Discrete time window [lo, hi] in steps; 0 <= lo <= hi.
struct Interval {
  int lo = 0;
  int hi = 0;

  /// Throws Error(domain) when the bounds violate 0 <= lo <= hi.
  static Interval checked(long long lo, long long hi);
  int width() const noexcept { return hi - lo + 1; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

enum class Op { atom, negation, conjunction, disjunction, eventually, always, until };

/// Membership of (px, py) in a named rectangle of the environment.
struct RegionAtom {
  std::string region;
  env::Polarity polarity = env::Polarity::inside;
  friend bool operator==(const RegionAtom&, const RegionAtom&) = default;
};

/// w . s + c > 0 over the raw signal sample. Trailing zero weights are trimmed.
struct AffineAtom {
  std::vector<double> weights;
  double offset = 0.0;
  friend bool operator==(const AffineAtom&, const AffineAtom&) = default;
};

using AtomPayload = std::variant<RegionAtom, AffineAtom>;

/// Signal component names accepted in affine predicates, in index order.
inline constexpr std::array<std::string_view, 4> kSignalVariables{"px", "py", "vx", "vy"};

/// Immutable STL syntax tree with shared structure; cheap to copy.
class Formula {
public:
  static Formula region(std::string name, env::Polarity polarity = env::Polarity::inside);
  static Formula affine(std::vector<double> weights, double offset);
  static Formula negation(Formula f);
  static Formula conjunction(Formula lhs, Formula rhs);
  static Formula disjunction(Formula lhs, Formula rhs);
  static Formula eventually(Interval window, Formula f);
  static Formula always(Interval window, Formula f);
  static Formula until(Interval window, Formula lhs, Formula rhs);

  Op op() const noexcept;
  bool is_temporal() const noexcept;
  /// Valid only for temporal operators.
  const Interval& interval() const;
  /// Valid only for atoms.
  const AtomPayload& atom() const;
  std::span<const Formula> children() const noexcept;
  const Formula& child(std::size_t i) const { return children()[i]; }

  /// Stable address of the shared node; usable as a memo key.
  const void* identity() const noexcept { return node_.get(); }

  friend bool operator==(const Formula& a, const Formula& b);

private:
  struct Node;
  explicit Formula(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  std::shared_ptr<const Node> node_;
};

struct Formula::Node {
  Op op = Op::atom;
  Interval window{};
  AtomPayload atom{};
  std::vector<Formula> children;
};

/// Uniform-dimension sequence of samples indexed by integer time.
class Signal {
public:
  Signal(std::size_t dim, std::vector<double> values);
  static Signal from_states(std::span<const env::State> states);

  std::size_t length() const noexcept { return values_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> sample(std::size_t t) const noexcept {
    return {values_.data() + t * dim_, dim_};
  }
  std::span<const double> values() const noexcept { return values_; }

private:
  std::size_t dim_;
  std::vector<double> values_;
};

/// Furthest step beyond t the formula inspects.
int horizon(const Formula& f);

/// Nesting depth (an atom has depth 1).
int depth(const Formula& f);

/// Region names referenced by the formula, sorted, unique.
std::vector<std::string> referenced_regions(const Formula& f);

} // namespace pastel::stl
