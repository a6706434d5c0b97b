#include "pastel/oracle/oracle_planner.hpp"

#include "pastel/common/error.hpp"
#include "pastel/common/rng.hpp"
#include "pastel/stl/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace pastel::oracle {

void OracleConfig::validate() const {
  if (beta_schedule.empty()) throw Error(ErrorCategory::config, "oracle beta schedule is empty");
  if (std::any_of(beta_schedule.begin(), beta_schedule.end(), [](double b) { return !(b > 0.0); })) {
    throw Error(ErrorCategory::config, "oracle beta values must be positive");
  }
  if (step_sizes.empty() || (step_sizes.size() != 1 && step_sizes.size() != beta_schedule.size())) {
    throw Error(ErrorCategory::config,
                "oracle step_sizes must have one entry or one per beta stage");
  }
  if (restarts < 1) throw Error(ErrorCategory::config, "oracle restarts must be >= 1");
  if (iterations_per_stage < 1) throw Error(ErrorCategory::config, "oracle iterations must be >= 1");
  if (!(margin >= 0.0)) throw Error(ErrorCategory::config, "oracle margin must be >= 0");
  if (action_weight < 0.0) throw Error(ErrorCategory::config, "oracle action_weight must be >= 0");
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

/// Rollout of tanh-parameterized controls with velocity-clamp bookkeeping.
class ControlledRollout {
public:
  ControlledRollout(const env::State& x0, const env::EnvironmentSpec& env, std::size_t horizon)
      : x0_(x0), env_(env), n_(horizon), actions_(2 * n_), states_(4 * (n_ + 1)),
        vel_free_(2 * n_) {}

  void forward(std::span<const double> controls) {
    const double amax = env_.a_max();
    const double dt = env_.dt();
    const double vmax = env_.v_max();
    states_[0] = x0_.px;
    states_[1] = x0_.py;
    states_[2] = x0_.vx;
    states_[3] = x0_.vy;
    for (std::size_t t = 0; t < n_; ++t) {
      const double* x = &states_[4 * t];
      double* y = &states_[4 * (t + 1)];
      for (std::size_t k = 0; k < 2; ++k) {
        const double a = amax * std::tanh(controls[2 * t + k]);
        actions_[2 * t + k] = a;
        y[k] = x[k] + x[2 + k] * dt + 0.5 * a * dt * dt;
        const double v = x[2 + k] + a * dt;
        vel_free_[2 * t + k] = std::abs(v) <= vmax;
        y[2 + k] = std::clamp(v, -vmax, vmax);
      }
    }
  }

  /// Chains d objective / d states back to d objective / d controls.
  void backward(const std::vector<double>& state_grad, std::span<const double> controls,
                double action_weight, std::span<double> control_grad) const {
    const double amax = env_.a_max();
    const double dt = env_.dt();
    double lp[2] = {0.0, 0.0};  // adjoint of position at t+1
    double lv[2] = {0.0, 0.0};  // adjoint of velocity at t+1
    for (std::size_t t = n_; t-- > 0;) {
      const double* g = &state_grad[4 * (t + 1)];
      for (std::size_t k = 0; k < 2; ++k) {
        lp[k] += g[k];
        lv[k] += g[2 + k];
        const double free = vel_free_[2 * t + k] ? 1.0 : 0.0;
        const double a = actions_[2 * t + k];
        const double d_action = lp[k] * 0.5 * dt * dt + lv[k] * free * dt - 2.0 * action_weight * a;
        const double th = std::tanh(controls[2 * t + k]);
        control_grad[2 * t + k] = d_action * amax * (1.0 - th * th);
        // propagate to state t
        lv[k] = lp[k] * dt + lv[k] * free;
      }
    }
  }

  stl::Signal signal() const { return stl::Signal(4, states_); }

  env::Trajectory trajectory() const {
    env::Trajectory traj;
    traj.states.reserve(n_ + 1);
    for (std::size_t t = 0; t <= n_; ++t) {
      traj.states.push_back(
          {states_[4 * t], states_[4 * t + 1], states_[4 * t + 2], states_[4 * t + 3]});
    }
    for (std::size_t t = 0; t < n_; ++t) {
      traj.actions.push_back({actions_[2 * t], actions_[2 * t + 1]});
    }
    return traj;
  }

  double action_energy() const {
    double e = 0.0;
    for (double a : actions_) e += a * a;
    return e;
  }

private:
  env::State x0_;
  const env::EnvironmentSpec& env_;
  std::size_t n_;
  std::vector<double> actions_;
  std::vector<double> states_;
  std::vector<bool> vel_free_;
};

} // namespace

double control_objective(const stl::Formula& f, const env::State& x0,
                         const env::EnvironmentSpec& env, std::span<const double> controls,
                         double beta, double action_weight, std::span<double> grad) {
  const auto n = static_cast<std::size_t>(stl::horizon(f));
  if (controls.size() != 2 * n) {
    throw Error(ErrorCategory::shape, "controls must hold 2 * horizon values");
  }
  const stl::SmoothProgram program(f, 0, n + 1, 4, &env);
  ControlledRollout rollout(x0, env, n);
  rollout.forward(controls);
  std::vector<double> state_grad(4 * (n + 1));
  const double value = program.evaluate(rollout.signal(), beta, state_grad);
  if (!grad.empty()) rollout.backward(state_grad, controls, action_weight, grad);
  return value - action_weight * rollout.action_energy();
}

PlanOutcome plan(const stl::Formula& f, const env::State& x0, const env::EnvironmentSpec& env,
                 const OracleConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int horizon = stl::horizon(f);
  if (horizon < 1) throw Error(ErrorCategory::domain, "oracle needs a formula with horizon >= 1");
  const auto n = static_cast<std::size_t>(horizon);

  const stl::SmoothProgram program(f, 0, n + 1, 4, &env);
  ControlledRollout rollout(x0, env, n);

  PlanOutcome outcome;
  outcome.best_robustness = -std::numeric_limits<double>::infinity();

  std::vector<double> controls(2 * n);
  std::vector<double> control_grad(2 * n);
  std::vector<double> state_grad(4 * (n + 1));
  std::vector<double> m(2 * n);
  std::vector<double> v(2 * n);

  for (int restart = 0; restart < cfg.restarts; ++restart) {
    outcome.restarts_used = restart + 1;
    if (restart == 0) {
      std::fill(controls.begin(), controls.end(), 0.0);
    } else {
      Rng rng(derive_seed({seed, static_cast<std::uint64_t>(restart)}));
      std::normal_distribution<double> normal(0.0, cfg.restart_scale);
      for (double& u : controls) u = normal(rng);
    }
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    long step = 0;

    for (std::size_t stage = 0; stage < cfg.beta_schedule.size(); ++stage) {
      const double beta = cfg.beta_schedule[stage];
      const double lr = cfg.step_sizes.size() == 1 ? cfg.step_sizes[0] : cfg.step_sizes[stage];
      for (int it = 0; it < cfg.iterations_per_stage; ++it) {
        rollout.forward(controls);
        program.evaluate(rollout.signal(), beta, state_grad);
        rollout.backward(state_grad, controls, cfg.action_weight, control_grad);
        ++step;
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
        for (std::size_t i = 0; i < controls.size(); ++i) {
          const double g = control_grad[i];
          m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
          v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
          controls[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
        }
      }
    }

    rollout.forward(controls);
    const stl::Signal signal = rollout.signal();
    const double rho = stl::robustness(f, signal, 0, env);
    outcome.best_robustness = std::max(outcome.best_robustness, rho);
    if (rho > cfg.margin && stl::satisfies(f, signal, 0, env)) {
      env::Trajectory traj = rollout.trajectory();
      traj.robustness_at_generation = rho;
      outcome.trajectory = std::move(traj);
      return outcome;
    }
  }
  return outcome;
}

} // namespace pastel::oracle
