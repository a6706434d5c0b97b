#include "pastel/oracle/oracle_planner.hpp"
#include "pastel/stl/parser.hpp"
#include "pastel/stl/semantics.hpp"

#include <benchmark/benchmark.h>

#include <filesystem>

using namespace pastel;

namespace {

const env::EnvironmentSpec kWorld = env::EnvironmentSpec::default_world();
const std::filesystem::path kSpecs{PASTEL_SPECS_DIR};

stl::Signal drift_signal() {
  std::vector<env::Action> actions(30, env::Action{0.2, 0.1});
  return stl::Signal::from_states(env::rollout_actions({1, 1, 0, 0}, actions, kWorld).states);
}

void BM_Robustness(benchmark::State& state) {
  const auto f = stl::load_spec_file(kSpecs / "phi1.stl");
  const auto s = drift_signal();
  for (auto _ : state) benchmark::DoNotOptimize(stl::robustness(f, s, 0, kWorld));
}
BENCHMARK(BM_Robustness);

void BM_SmoothRobustness(benchmark::State& state) {
  const auto f = stl::load_spec_file(kSpecs / "phi1.stl");
  const auto s = drift_signal();
  for (auto _ : state) benchmark::DoNotOptimize(stl::smooth_robustness(f, s, 0, kWorld, 10.0));
}
BENCHMARK(BM_SmoothRobustness);

void BM_ControlObjectiveGradient(benchmark::State& state) {
  const auto f = stl::load_spec_file(kSpecs / "phi1.stl");
  std::vector<double> u(60, 0.1), g(60);
  for (auto _ : state) {
    benchmark::DoNotOptimize(oracle::control_objective(f, {1, 1, 0, 0}, kWorld, u, 10.0, 1e-3, g));
  }
}
BENCHMARK(BM_ControlObjectiveGradient);

void BM_OraclePlan(benchmark::State& state) {
  const auto f = stl::load_spec_file(kSpecs / "phi3.stl");
  const oracle::OracleConfig cfg;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto x0 = env::sample_initial_state(seed, kWorld);
    benchmark::DoNotOptimize(oracle::plan(f, x0, kWorld, cfg, seed++));
  }
}
BENCHMARK(BM_OraclePlan)->Unit(benchmark::kMillisecond);

} // namespace
