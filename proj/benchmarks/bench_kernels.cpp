#include <benchmark/benchmark.h>

#include "bunas/tensor.hpp"

using namespace bunas;

namespace {

Tensor make_input(int64_t c, int64_t h, int64_t w) {
  Rng rng(1);
  return Tensor::random_uniform({1, c, h, w}, rng, -1, 1);
}

}  // namespace

static void BM_Dwconv3Forward(benchmark::State& state) {
  const int64_t c = state.range(0);
  Tensor x = make_input(c, 40, 80);
  ConvWeights w = ConvWeights::depthwise(c);
  Rng rng(2);
  w.w = Tensor::random_uniform(w.w.shape(), rng, -1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dwconv3_forward(x, w));
  }
  state.SetItemsProcessed(state.iterations() * 9 * c * 40 * 80);
}
BENCHMARK(BM_Dwconv3Forward)->Arg(48)->Arg(192)->Arg(512);

static void BM_Pwconv1Forward(benchmark::State& state) {
  const int64_t c = state.range(0);
  Tensor x = make_input(c, 40, 80);
  ConvWeights w = ConvWeights::pointwise(c, 2 * c);
  Rng rng(3);
  w.w = Tensor::random_uniform(w.w.shape(), rng, -1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pwconv1_forward(x, w));
  }
  state.SetItemsProcessed(state.iterations() * c * 2 * c * 40 * 80);
}
BENCHMARK(BM_Pwconv1Forward)->Arg(48)->Arg(192)->Arg(384);

static void BM_Pwconv1Backward(benchmark::State& state) {
  const int64_t c = state.range(0);
  Tensor x = make_input(c, 40, 80);
  ConvWeights w = ConvWeights::pointwise(c, 2 * c);
  Rng rng(4);
  w.w = Tensor::random_uniform(w.w.shape(), rng, -1, 1);
  Tensor dy = Tensor::random_uniform({1, 2 * c, 40, 80}, rng, -1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pwconv1_backward(x, w, dy));
  }
}
BENCHMARK(BM_Pwconv1Backward)->Arg(48)->Arg(192);

static void BM_Reorder(benchmark::State& state) {
  Tensor x = make_input(192, 40, 80);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reorder_forward(x));
  }
}
BENCHMARK(BM_Reorder);

static void BM_BnTrainForward(benchmark::State& state) {
  Tensor x = make_input(96, 40, 80);
  BnParams p = BnParams::identity(96);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bn_forward(x, p, BnMode::Train));
  }
}
BENCHMARK(BM_BnTrainForward);

BENCHMARK_MAIN();
