#include "pastel/eval/eval_harness.hpp"
#include "pastel/model/pastel_model.hpp"
#include "pastel/model/rollout.hpp"
#include "pastel/stl/parser.hpp"

#include <benchmark/benchmark.h>

#include <filesystem>

using namespace pastel;

namespace {

const env::EnvironmentSpec kWorld = env::EnvironmentSpec::default_world();
const std::filesystem::path kSpecs{PASTEL_SPECS_DIR};

model::ModelConfig default_config(bool ablation) {
  model::ModelConfig c;
  c.regions = kWorld.region_names();
  c.norm = model::Normalization::from_environment(kWorld);
  c.ablation = ablation;
  return c;
}

model::SequenceBatch batch_of(const model::PastelModel& m, int batch) {
  const auto f = stl::load_spec_file(kSpecs / "phi1.stl");
  model::SequenceBatch b;
  b.steps = 31;
  b.spec_ids.assign(static_cast<std::size_t>(batch), m.tokenize(f).ids);
  b.states = ad::Matrix::Constant(batch * b.steps, 4, 1.0);
  b.actions = ad::Matrix::Constant(batch * b.steps, 2, 0.5);
  return b;
}

// One training step's worth of tape work: forward, loss and backward at batch 32.
void BM_TrainStep(benchmark::State& state) {
  const bool ablation = state.range(0) != 0;
  const model::PastelModel m(default_config(ablation), 1);
  const auto b = batch_of(m, 32);
  for (auto _ : state) {
    ad::Tape t;
    const auto out = m.forward(t, b, {});
    const auto loss = model::compute_loss(t, out, b.states, b.actions, m.config().norm, ablation);
    t.backward(loss.total);
    benchmark::DoNotOptimize(loss.total.value().data());
  }
  state.SetLabel(ablation ? "pact" : "pastel");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_RolloutBatch(benchmark::State& state) {
  const model::PastelModel m(default_config(false), 1);
  const auto f = stl::load_spec_file(kSpecs / "phi3.stl");
  const auto x0 = eval::sample_initial_states(static_cast<int>(state.range(0)), 3, kWorld);
  for (auto _ : state) {
    auto r = model::rollout_batch(m, f, x0, kWorld, model::RolloutMode::dynamics_consistent);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RolloutBatch)->Arg(1)->Arg(25)->Unit(benchmark::kMillisecond);

} // namespace
