#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "bunas/hw_model.hpp"
#include "bunas/quant.hpp"
#include "doctest.h"

using namespace bunas;

namespace {

NetworkSpec small_spec(int width_mul = 1) {
  NetworkGenome g;
  g.bundle_id = 0;
  g.depth = 3;
  g.fv1 = {16 * width_mul, 32 * width_mul, 48 * width_mul};
  g.fv2 = {1, 1, 0};
  return instantiate(g, InputShape{3, 32, 64});
}

}  // namespace

TEST_CASE("dsp_cost_per_mac: fit table under the default 18x27 multiplier") {
  FpgaTarget t;
  CHECK(dsp_cost_per_mac(QuantScheme{16, 14}, t) == 1);  // 18 and 20 effective
  CHECK(dsp_cost_per_mac(QuantScheme{16, 15}, t) == 2);  // 19 effective splits
  CHECK(dsp_cost_per_mac(QuantScheme{8, 8}, t) == 1);
  CHECK_THROWS_AS(dsp_cost_per_mac(QuantScheme{0, 8}, t), std::invalid_argument);
}

TEST_CASE("dsp_cost_per_mac: non-decreasing in both bit widths") {
  FpgaTarget t;
  for (int fm = 4; fm <= 24; ++fm) {
    for (int w = 4; w <= 24; ++w) {
      const int c = dsp_cost_per_mac(QuantScheme{fm, w}, t);
      CHECK(c >= dsp_cost_per_mac(QuantScheme{fm - 1, w}, t));
      CHECK(c >= dsp_cost_per_mac(QuantScheme{fm, w - 1}, t));
    }
  }
}

TEST_CASE("estimate_fpga: frequency halving doubles latency exactly") {
  NetworkSpec spec = small_spec();
  QuantScheme q{9, 11};
  TilingPlan plan = make_tiling_plan(1);
  FpgaTarget t1;
  FpgaTarget t2 = t1;
  t2.frequency_mhz = t1.frequency_mhz / 2;
  const double l1 = estimate_fpga(spec, q, plan, t1).summary.latency_ms;
  const double l2 = estimate_fpga(spec, q, plan, t2).summary.latency_ms;
  CHECK(l2 == 2.0 * l1);
}

TEST_CASE("estimate_fpga: fixed parallelism halves dsp_used when cost halves") {
  NetworkSpec spec = small_spec();
  TilingPlan plan = make_tiling_plan(1);
  FpgaTarget t;
  FpgaEstimateOptions opt;
  opt.fixed_parallel_macs = 64;
  const auto w15 = estimate_fpga(spec, QuantScheme{16, 15}, plan, t, opt);
  const auto w14 = estimate_fpga(spec, QuantScheme{16, 14}, plan, t, opt);
  CHECK(w15.summary.dsp_used == 128);
  CHECK(w14.summary.dsp_used == 64);
}

TEST_CASE("estimate_fpga: single-layer compute-bound closed form") {
  // One pointwise layer, bandwidth made huge so compute dominates.
  NetworkSpec spec;
  spec.input = InputShape{8, 16, 16};
  spec.layers = {SpecLayer{SpecLayerKind::PwConv1, "only", 8, 8, 16, 16, 16, 16, 0, false, true}};
  spec.bundle_count = 1;
  QuantScheme q{8, 8};
  FpgaTarget t;
  t.dram_bandwidth_bytes_per_cycle = 1 << 20;
  FpgaEstimateOptions opt;
  opt.fixed_parallel_macs = 64;
  opt.conv3_share = 0.5;  // 32 multipliers to each engine
  const auto est = estimate_fpga(spec, q, make_tiling_plan(1), t, opt);
  const int64_t macs = 8 * 8 * 16 * 16;
  const int64_t expect_cycles = (macs + 31) / 32;
  CHECK(est.total_cycles == expect_cycles);
  CHECK(est.summary.latency_ms ==
        doctest::Approx(double(expect_cycles) / (t.frequency_mhz * 1000.0)).epsilon(1e-12));
  CHECK(est.summary.bottleneck == Bottleneck::Compute);
}

TEST_CASE("estimate_fpga: overlap never hurts") {
  NetworkSpec spec = small_spec();
  QuantScheme q{9, 11};
  TilingPlan plan = make_tiling_plan(4);
  FpgaTarget t;
  FpgaEstimateOptions on, off;
  off.double_buffered = false;
  const double with = estimate_fpga(spec, q, plan, t, on).summary.latency_ms;
  const double without = estimate_fpga(spec, q, plan, t, off).summary.latency_ms;
  CHECK(with <= without);
}

TEST_CASE("estimate_fpga: latency additivity over bundles") {
  NetworkSpec spec = small_spec();
  const auto est = estimate_fpga(spec, QuantScheme{9, 11}, make_tiling_plan(1), FpgaTarget{});
  int64_t sum = 0;
  for (const auto& s : est.stages) sum += s.total;
  CHECK(sum == est.total_cycles);
  CHECK(est.summary.latency_ms > 0);
}

TEST_CASE("estimate_fpga: monotone in width and input area") {
  QuantScheme q{9, 11};
  TilingPlan plan = make_tiling_plan(1);
  FpgaTarget t;
  const double base = estimate_fpga(small_spec(1), q, plan, t).summary.latency_ms;
  const double wider = estimate_fpga(small_spec(2), q, plan, t).summary.latency_ms;
  CHECK(wider >= base);

  NetworkGenome g;
  g.bundle_id = 0;
  g.depth = 3;
  g.fv1 = {16, 32, 48};
  g.fv2 = {1, 1, 0};
  const double big_in =
      estimate_fpga(instantiate(g, InputShape{3, 64, 128}), q, plan, t).summary.latency_ms;
  CHECK(big_in >= base);

  // deeper network: one more bundle never reduces latency
  NetworkGenome g4 = g;
  g4.depth = 4;
  g4.fv1 = {16, 32, 48, 48};
  g4.fv2 = {1, 1, 0, 0};
  const double deeper =
      estimate_fpga(instantiate(g4, InputShape{3, 32, 64}), q, plan, t).summary.latency_ms;
  CHECK(deeper >= base);
}

TEST_CASE("estimate_bram: monotone in fm_bits, shrinks with input area") {
  NetworkSpec spec = small_spec();
  TilingPlan plan = make_tiling_plan(1);
  FpgaTarget t;
  int64_t prev = 0;
  for (int fm = 12; fm <= 16; ++fm) {
    const int64_t b = estimate_bram(spec, QuantScheme{fm, 11}, plan, t);
    CHECK(b >= prev);
    prev = b;
  }

  // Weight-free chain isolates the FM term: halving both dims shrinks the
  // ping-pong buffer 4x.
  NetworkSpec pool_only;
  pool_only.input = InputShape{4, 64, 128};
  pool_only.layers = {
      SpecLayer{SpecLayerKind::MaxPool2, "p", 4, 4, 64, 128, 32, 64, 0, false, false}};
  NetworkSpec pool_half = pool_only;
  pool_half.input = InputShape{4, 32, 64};
  pool_half.layers[0] = SpecLayer{SpecLayerKind::MaxPool2, "p", 4, 4, 32, 64, 16, 32, 0, false, false};
  const int64_t full = estimate_bram(pool_only, QuantScheme{16, 11}, plan, t);
  const int64_t half = estimate_bram(pool_half, QuantScheme{16, 11}, plan, t);
  CHECK(full == 4 * half);
}

TEST_CASE("estimate_bram: ping-pong formula on a hand-checked spec") {
  // Single pointwise layer 4->8 at 8x8, fm 8 bits, w 8 bits.
  NetworkSpec spec;
  spec.input = InputShape{4, 8, 8};
  spec.layers = {SpecLayer{SpecLayerKind::PwConv1, "only", 4, 8, 8, 8, 8, 8, 0, false, true}};
  const int64_t fm_in = 4 * 8 * 8;   // 256 elements -> 256 bytes at 8 bits
  const int64_t fm_out = 8 * 8 * 8;  // 512 bytes
  const int64_t weights = 4 * 8 + 8; // 40 bytes
  const int64_t expect = 2 * std::max(fm_in, fm_out) + weights;
  CHECK(estimate_bram(spec, QuantScheme{8, 8}, make_tiling_plan(1), FpgaTarget{}) == expect);
}

TEST_CASE("estimate_gpu: formula and scaling") {
  // 1 GMAC network approximated by a fat pointwise layer.
  NetworkSpec spec;
  spec.input = InputShape{1000, 100, 100};
  spec.layers = {
      SpecLayer{SpecLayerKind::PwConv1, "fat", 1000, 100, 100, 100, 100, 100, 0, false, false}};
  CHECK(macs_count(spec) == 1000000000);
  GpuTarget t;  // 665 GFLOPS peak
  t.efficiency = 0.3;
  const auto est = estimate_gpu(spec, t);
  CHECK(est.latency_ms == doctest::Approx(2.0 / 199.5 * 1000.0).epsilon(1e-9));
  CHECK(est.dsp_used == 0);
  CHECK(est.bram_bytes_used == 0);

  GpuTarget t2 = t;
  t2.scale_factor = 2.0;
  CHECK(estimate_gpu(spec, t2).latency_ms == doctest::Approx(2 * est.latency_ms));

  NetworkSpec empty;
  empty.input = InputShape{1, 2, 2};
  CHECK(estimate_gpu(empty, t).latency_ms == 0.0);
}

TEST_CASE("tiling plans") {
  TilingPlan p4 = make_tiling_plan(4);
  CHECK(p4.rows == 2);
  CHECK(p4.cols == 2);
  TilingPlan p1 = make_tiling_plan(1);
  CHECK(p1.rows == 1);
  TilingPlan p9 = make_tiling_plan(9);
  CHECK(p9.rows == 3);
  CHECK_THROWS_AS(make_tiling_plan(6), std::invalid_argument);
  CHECK_THROWS_AS(make_tiling_plan(0), std::invalid_argument);
}

TEST_CASE("tiling: stitched macs scale by batch; weight traffic per image drops") {
  NetworkSpec spec = small_spec();
  QuantScheme q{9, 11};
  FpgaTarget t;
  const auto b1 = estimate_fpga(spec, q, make_tiling_plan(1), t);
  const auto b4 = estimate_fpga(spec, q, make_tiling_plan(4), t);
  int64_t macs1 = 0, macs4 = 0;
  for (const auto& s : b1.stages) macs1 += s.macs_dw + s.macs_pw;
  for (const auto& s : b4.stages) macs4 += s.macs_dw + s.macs_pw;
  CHECK(macs4 == 4 * macs1);
  CHECK(b4.weight_traffic_bytes_per_image == b1.weight_traffic_bytes_per_image / 4);
}

TEST_CASE("infeasible fit flags memory bottleneck") {
  NetworkSpec spec = instantiate(preset_genome('c'), InputShape{3, 160, 320});
  FpgaTarget t;
  t.bram_bytes = 1024;  // absurdly small
  const auto est = estimate_fpga(spec, QuantScheme{16, 16}, make_tiling_plan(1), t);
  CHECK_FALSE(est.summary.feasible);
  CHECK(est.summary.bottleneck == Bottleneck::Memory);
}

TEST_CASE("profiles: builtin names and file round trip") {
  FpgaTarget u = fpga_profile("ultra96");
  CHECK(u.dsp_total == 360);
  CHECK(u.frequency_mhz == 200.0);
  GpuTarget g = gpu_profile("tx2");
  CHECK(g.peak_gflops == 665.0);

  const char* path = "test_profile.cfg";
  {
    std::ofstream f(path);
    f << "# custom target\nname = custom\ndsp_total = 100\nfrequency_mhz = 150\n";
  }
  FpgaTarget c = fpga_profile(path);
  CHECK(c.name == "custom");
  CHECK(c.dsp_total == 100);
  CHECK(c.frequency_mhz == 150.0);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(fpga_profile("no_such_profile.cfg"), std::runtime_error);
}
