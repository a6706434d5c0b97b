#pragma once

#include "pastel/env/planar_env.hpp"
#include "pastel/stl/formula.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pastel::oracle {

/// Settings for the smoothed-robustness trajectory optimizer.
struct OracleConfig {
  /// Smoothing temperatures, coarse to fine.
  std::vector<double> beta_schedule{2.0, 10.0, 50.0};
  /// Adam step size per stage; a single entry applies to every stage.
  std::vector<double> step_sizes{0.1, 0.05, 0.02};
  int iterations_per_stage = 150;
  int restarts = 4;
  /// Weight of the sum-of-squared-actions penalty.
  double action_weight = 1e-3;
  /// Accepted trajectories need exact robustness strictly above this.
  double margin = 0.05;
  /// Std-dev of the pre-tanh controls for restarts after the first (zero) start.
  double restart_scale = 0.5;

  void validate() const;
};

struct PlanOutcome {
  std::optional<env::Trajectory> trajectory;
  /// Best exact robustness over all restarts (reported on failure too).
  double best_robustness = 0.0;
  int restarts_used = 0;

  bool ok() const noexcept { return trajectory.has_value(); }
};

/// Objective used by plan(): smooth robustness of the rolled-out states
/// minus action_weight * sum |a|^2, for pre-tanh controls laid out as
/// [u0x, u0y, u1x, ...]. Writes d objective / d controls when `grad` is non-empty.
double control_objective(const stl::Formula& f, const env::State& x0,
                         const env::EnvironmentSpec& env, std::span<const double> controls,
                         double beta, double action_weight, std::span<double> grad);

/// Maximizes smooth robustness minus an action penalty over controls
/// a_t = a_max * tanh(u_t), with states folded through the dynamics. Each
/// restart's result is re-checked with the exact monitor; the first one that
/// satisfies the formula with robustness > margin is returned. Infeasible
/// problems come back as a failed outcome rather than an exception.
PlanOutcome plan(const stl::Formula& f, const env::State& x0, const env::EnvironmentSpec& env,
                 const OracleConfig& cfg, std::uint64_t seed);

} // namespace pastel::oracle
