#include <benchmark/benchmark.h>

#include "bunas/quant.hpp"
#include "bunas/search.hpp"

using namespace bunas;

namespace {

SwarmConfig bench_config() {
  SwarmConfig cfg;
  cfg.groups = 2;
  cfg.per_group = 8;
  cfg.iterations = 10;
  cfg.alpha = -0.0013;
  cfg.target_latency_ms = 2.0;
  cfg.seed = 5;
  cfg.bounds.depth = 4;
  cfg.bounds.width_alphabet = {48, 96, 192, 384};
  cfg.bounds.max_pools = 4;
  cfg.bounds.bundle_ids = {0, 1};
  cfg.input = InputShape{3, 64, 128};
  cfg.set_linear_epochs(2, 10);
  return cfg;
}

}  // namespace

static void BM_SurrogateSearch(benchmark::State& state) {
  SwarmConfig cfg = bench_config();
  cfg.iterations = int(state.range(0));
  cfg.set_linear_epochs(2, 10);
  NetworkGenome opt;
  opt.bundle_id = 0;
  opt.depth = 4;
  opt.fv1 = {96, 192, 96, 96};
  opt.fv2 = {1, 0, 1, 0};
  SurrogateEvaluator ev(opt, cfg.bounds.width_alphabet);
  LatencyFn lat = fpga_latency_fn(QuantScheme{9, 11}, make_tiling_plan(1), fpga_profile("ultra96"));
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_search(cfg, ev, lat, 1));
  }
}
BENCHMARK(BM_SurrogateSearch)->Arg(10)->Arg(30);

static void BM_FpgaEstimate(benchmark::State& state) {
  NetworkSpec spec = instantiate(preset_genome('c'), InputShape{3, 160, 320});
  QuantScheme q{9, 11};
  TilingPlan plan = make_tiling_plan(4);
  FpgaTarget t = fpga_profile("ultra96");
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_fpga(spec, q, plan, t));
  }
}
BENCHMARK(BM_FpgaEstimate);

static void BM_Instantiate(benchmark::State& state) {
  NetworkGenome g = preset_genome('c');
  for (auto _ : state) {
    benchmark::DoNotOptimize(instantiate(g, InputShape{3, 160, 320}));
  }
}
BENCHMARK(BM_Instantiate);
