#include "pastel/model/rollout.hpp"

#include "pastel/common/error.hpp"
#include "pastel/stl/linearize.hpp"

#include <cmath>

namespace pastel::model {

std::string_view to_string(RolloutMode mode) noexcept {
  return mode == RolloutMode::open_loop ? "open-loop" : "dynamics-consistent";
}

RolloutMode parse_rollout_mode(std::string_view text) {
  if (text == "dynamics-consistent") return RolloutMode::dynamics_consistent;
  if (text == "open-loop") return RolloutMode::open_loop;
  throw Error(ErrorCategory::usage, "unknown rollout mode '" + std::string(text) +
                                        "' (expected dynamics-consistent or open-loop)");
}

namespace {

void put_state(ad::Matrix& m, Eigen::Index row, const env::State& x) { m.row(row) << x.px, x.py, x.vx, x.vy; }
void put_action(ad::Matrix& m, Eigen::Index row, const env::Action& a) { m.row(row) << a.ax, a.ay; }

/// Rows of the running batch sized for `steps` timesteps, copied from the
/// full-horizon buffers.
SequenceBatch prefix(const SequenceBatch& full, int horizon, int steps) {
  SequenceBatch b;
  b.steps = steps;
  b.spec_ids = full.spec_ids;
  const Eigen::Index B = full.batch();
  b.states.resize(B * steps, 4);
  b.actions.resize(B * steps, 2);
  for (Eigen::Index i = 0; i < B; ++i) {
    b.states.middleRows(i * steps, steps) = full.states.middleRows(i * horizon, steps);
    b.actions.middleRows(i * steps, steps) = full.actions.middleRows(i * horizon, steps);
  }
  return b;
}

} // namespace

std::vector<RolloutResult> rollout_batch(const PastelModel& model, const stl::Formula& f,
                                         std::span<const env::State> x0, const env::EnvironmentSpec& env,
                                         RolloutMode mode) {
  const SpecTokens spec = model.tokenize(f);
  const int N = spec.horizon;
  if (N < 1) throw Error(ErrorCategory::domain, "rollout needs a spec horizon of at least 1");
  const auto B = static_cast<Eigen::Index>(x0.size());
  std::vector<RolloutResult> out(x0.size());
  if (B == 0) return out;

  SequenceBatch full;
  full.steps = N;
  full.spec_ids.assign(x0.size(), spec.ids);
  full.states = ad::Matrix::Zero(B * N, 4);
  full.actions = ad::Matrix::Zero(B * N, 2);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& x = x0[static_cast<std::size_t>(b)];
    put_state(full.states, b * N, x);
    auto& tr = out[static_cast<std::size_t>(b)].trajectory;
    tr.states.push_back(x);
    tr.spec_id = stl::render_canonical(f);
  }

  const ForwardOptions opt{false, false, false};
  auto predict = [&](int steps) {
    ad::Tape tape(false);
    const ForwardResult r = model.forward(tape, prefix(full, N, steps), opt);
    return std::make_pair(r.actions, r.next_states);
  };
  auto check = [&](const ad::Matrix& m, int t, const char* what) {
    if (!m.allFinite()) {
      throw Error(ErrorCategory::numeric, std::string("non-finite ") + what + " prediction at step " + std::to_string(t));
    }
  };

  for (int t = 0; t < N; ++t) {
    const auto [acts, states] = predict(t + 1);
    for (Eigen::Index b = 0; b < B; ++b) {
      auto& res = out[static_cast<std::size_t>(b)];
      const Eigen::Index row = b * (t + 1) + t;
      const env::Action raw{acts(row, 0), acts(row, 1)};
      if (!std::isfinite(raw.ax) || !std::isfinite(raw.ay)) check(acts, t, "action");
      res.raw_actions.push_back(raw);
      if (mode == RolloutMode::dynamics_consistent) {
        const env::Action applied = env::clamp_action(raw, env);
        const env::State next = env::step(res.trajectory.states.back(), applied, env);
        res.trajectory.actions.push_back(applied);
        res.trajectory.states.push_back(next);
        put_action(full.actions, b * N + t, applied);
        if (t + 1 < N) put_state(full.states, b * N + t + 1, next);
      } else {
        res.trajectory.actions.push_back(raw);
        put_action(full.actions, b * N + t, raw);
      }
    }
    if (mode == RolloutMode::open_loop) {
      // The state head reads ACTION_t, so a second pass sees the chosen action.
      const auto [unused, next_states] = predict(t + 1);
      (void)unused;
      check(next_states, t, "state");
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index row = b * (t + 1) + t;
        const env::State next{next_states(row, 0), next_states(row, 1), next_states(row, 2), next_states(row, 3)};
        out[static_cast<std::size_t>(b)].trajectory.states.push_back(next);
        if (t + 1 < N) put_state(full.states, b * N + t + 1, next);
      }
    }
  }
  return out;
}

RolloutResult rollout(const PastelModel& model, const stl::Formula& f, const env::State& x0,
                      const env::EnvironmentSpec& env, RolloutMode mode) {
  return std::move(rollout_batch(model, f, std::span<const env::State>(&x0, 1), env, mode).front());
}

} // namespace pastel::model
