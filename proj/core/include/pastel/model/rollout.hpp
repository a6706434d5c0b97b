#pragma once

#include "pastel/env/planar_env.hpp"
#include "pastel/model/pastel_model.hpp"
#include "pastel/stl/formula.hpp"

#include <span>
#include <string_view>

namespace pastel::model {

enum class RolloutMode {
  /// x_{t+1} = step(x_t, a_t) with the predicted action (clamped by the dynamics).
  dynamics_consistent,
  /// x_{t+1} is the state head's prediction; actions are left unclamped.
  open_loop,
};

std::string_view to_string(RolloutMode mode) noexcept;
/// Accepts "dynamics-consistent" and "open-loop"; Error(usage) otherwise.
RolloutMode parse_rollout_mode(std::string_view text);

struct RolloutResult {
  env::Trajectory trajectory;
  /// Action head outputs before any clamping.
  std::vector<env::Action> raw_actions;
};

/// Generates horizon(f) steps from each initial state, all conditioned on f.
/// Deterministic; the batch is processed as one stacked forward per step, so
/// results depend only on the model, f and the ordered list of x0.
/// Throws Error(numeric) naming the step on a non-finite prediction.
std::vector<RolloutResult> rollout_batch(const PastelModel& model, const stl::Formula& f,
                                         std::span<const env::State> x0, const env::EnvironmentSpec& env,
                                         RolloutMode mode);

RolloutResult rollout(const PastelModel& model, const stl::Formula& f, const env::State& x0,
                      const env::EnvironmentSpec& env, RolloutMode mode = RolloutMode::dynamics_consistent);

} // namespace pastel::model
