#include <benchmark/benchmark.h>

#include "bunas/quant.hpp"

using namespace bunas;

namespace {

struct QuantFixture {
  Model folded;
  QuantizedModel qm;
  Tensor input;

  QuantFixture() {
    NetworkGenome g = preset_genome('c', 8);
    Rng rng(7);
    Model m(instantiate(g, InputShape{3, 64, 128}),
            {AnchorPrior{0.1, 0.1}, AnchorPrior{0.3, 0.3}});
    m.init_weights(rng);
    folded = fold_network(m);
    input = Tensor::random_uniform({1, 3, 64, 128}, rng, 0, 1);
    Calibration cal = calibrate(folded, {input}, QuantScheme{9, 11});
    qm = quantize_network(folded, QuantScheme{9, 11}, cal);
  }
};

}  // namespace

static void BM_QuantizedForward(benchmark::State& state) {
  static QuantFixture fx;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fx.qm.forward(fx.input));
  }
}
BENCHMARK(BM_QuantizedForward);

static void BM_FloatForward(benchmark::State& state) {
  static QuantFixture fx;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fx.folded.forward(fx.input));
  }
}
BENCHMARK(BM_FloatForward);

static void BM_FoldNetwork(benchmark::State& state) {
  NetworkGenome g = preset_genome('c', 8);
  Rng rng(9);
  Model m(instantiate(g, InputShape{3, 64, 128}), {AnchorPrior{0.1, 0.1}, AnchorPrior{0.3, 0.3}});
  m.init_weights(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fold_network(m));
  }
}
BENCHMARK(BM_FoldNetwork);

static void BM_FixedRoundTrip(benchmark::State& state) {
  Rng rng(11);
  std::vector<double> xs;
  for (int i = 0; i < 4096; ++i) xs.push_back(rng.uniform(-4, 4));
  for (auto _ : state) {
    double acc = 0;
    for (double x : xs) acc += fixed_round_trip(x, 9, 5);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_FixedRoundTrip);
