#include "pastel/ad/ops.hpp"
#include "pastel/common/rng.hpp"

#include <benchmark/benchmark.h>

using namespace pastel;
using namespace pastel::ad;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1.0, 1.0);
  return m;
}

// Rows of a 32 x 90 batch against a d_model x d_ff projection.
void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(1);
  const Matrix a = random_matrix(rng, 32 * 90, n), b = random_matrix(rng, n, 4 * n);
  for (auto _ : state) {
    Tape t;
    const auto x = t.input(a), w = t.input(b);
    t.backward(sum(matmul(x, w)));
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * 32 * 90 * n * 4 * n);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_CausalAttention(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0)), len = 90, width = 64;
  Rng rng(2);
  AttentionLayout layout;
  layout.heads = 4;
  layout.causal = true;
  for (int b = 0; b < batch; ++b) layout.segments.push_back({b * len, len, b * len, len});
  const Matrix q = random_matrix(rng, batch * len, width);
  for (auto _ : state) {
    Tape t;
    const auto x = t.input(q);
    t.backward(sum(attention(x, x, x, layout)));
    benchmark::DoNotOptimize(x.grad().data());
  }
}
BENCHMARK(BM_CausalAttention)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

} // namespace
