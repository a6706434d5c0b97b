#pragma once

#include "pastel/env/planar_env.hpp"
#include "pastel/stl/formula.hpp"

#include <cstddef>
#include <map>
#include <tuple>
#include <span>
#include <vector>

namespace pastel::stl {

/// Boolean satisfaction s_t |= f. Predicates are strict (mu > 0).
/// Throws Error(domain) if t + horizon(f) exceeds the last signal index or a
/// region is unknown.
bool satisfies(const Formula& f, const Signal& s, int t, const env::EnvironmentSpec& env);

/// Min/max quantitative semantics. rho > 0 implies satisfies, rho < 0 implies not.
double robustness(const Formula& f, const Signal& s, int t, const env::EnvironmentSpec& env);

/// Value of one atomic predicate at a single sample.
double atom_value(const AtomPayload& atom, std::span<const double> sample,
                  const env::EnvironmentSpec& env);

/// Log-sum-exp smoothed robustness at temperature beta > 0. Chains of the same
/// aggregation (e.g. nested conjunctions, G of a conjunction, negations of
/// the dual) are flattened into a single soft min/max, so the error per chain
/// is at most log(k)/beta for that chain's width k. Atoms are evaluated exactly.
double smooth_robustness(const Formula& f, const Signal& s, int t,
                         const env::EnvironmentSpec& env, double beta);

/// Widest flattened aggregation of `f`.
std::size_t max_aggregation_width(const Formula& f);

/// Sound bound on |smooth_robustness - robustness| accounting for every
/// aggregation layer on the path (>= log(max width)/beta).
double smooth_error_bound(const Formula& f, double beta);

/// Compiled smoothed-robustness evaluator for a fixed formula, start time and
/// signal shape. Reused by the trajectory optimizer where the same formula is
/// evaluated thousands of times.
class SmoothProgram {
public:
  /// `env` may be null when only structural queries (width, bound) are needed.
  SmoothProgram(const Formula& f, int t, std::size_t signal_length, std::size_t dim,
                const env::EnvironmentSpec* env);

  double evaluate(const Signal& s, double beta) const;
  /// Writes d value / d signal into `gradient` (length = signal values) and returns the value.
  double evaluate(const Signal& s, double beta, std::span<double> gradient) const;

  std::size_t max_width() const noexcept { return max_width_; }
  double error_bound(double beta) const;

private:
  enum class Kind { region, affine, soft_max, soft_min };

  struct Node {
    Kind kind = Kind::region;
    double sign = 1.0;
    int time = 0;
    env::Rect rect{};
    std::vector<double> weights;
    double offset = 0.0;
    std::vector<int> terms;
  };

  int build(const Formula& f, int t, double sign);
  void expand(const Formula& f, int t, double sign, Kind dir, std::vector<int>& terms);
  void add_term(const Formula& f, int t, double sign, Kind dir, std::vector<int>& terms);
  int add_leaf(const Formula& atom, int t, double sign);
  void check_signal(const Signal& s) const;

  const env::EnvironmentSpec* env_;
  std::size_t length_;
  std::size_t dim_;
  std::vector<Node> nodes_;
  std::map<std::tuple<const void*, int, bool>, int> memo_;
  int root_ = -1;
  std::size_t max_width_ = 1;
};

} // namespace pastel::stl
