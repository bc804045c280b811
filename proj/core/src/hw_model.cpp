#include "bunas/hw_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bunas/quant.hpp"

namespace bunas {

void FpgaTarget::validate() const {
  if (dsp_total < 1 || bram_bytes < 1 || frequency_mhz <= 0 || dsp_mult_a < 1 ||
      dsp_mult_b < 1 || dram_bandwidth_bytes_per_cycle < 1 || pool_lanes < 1 ||
      dsp_guard_bits < 0) {
    throw std::invalid_argument("fpga target: all fields must be positive");
  }
}

void GpuTarget::validate() const {
  if (peak_gflops <= 0 || efficiency <= 0 || efficiency > 1 || scale_factor <= 0) {
    throw std::invalid_argument("gpu target: bad profile values");
  }
}

const char* bottleneck_name(Bottleneck b) {
  switch (b) {
    case Bottleneck::Compute: return "compute";
    case Bottleneck::Bandwidth: return "bandwidth";
    case Bottleneck::Memory: return "memory";
  }
  return "?";
}

TilingPlan make_tiling_plan(int batch) {
  if (batch < 1) throw std::invalid_argument("tiling: batch must be >= 1");
  const int r = static_cast<int>(std::llround(std::sqrt(static_cast<double>(batch))));
  if (r * r != batch) {
    throw std::invalid_argument("tiling: batch " + std::to_string(batch) +
                                " is not a perfect square");
  }
  return TilingPlan{r, r};
}

int dsp_cost_per_mac(const QuantScheme& q, const FpgaTarget& t) {
  if (q.w_bits < 1 || q.fm_bits < 1) {
    throw std::invalid_argument("dsp_cost_per_mac: bit widths must be >= 1");
  }
  const int w_eff = q.w_bits + t.dsp_guard_bits;
  const int fm_eff = q.fm_bits + t.dsp_guard_bits;
  const int splits_w = (w_eff + t.dsp_mult_a - 1) / t.dsp_mult_a;
  const int splits_fm = (fm_eff + t.dsp_mult_b - 1) / t.dsp_mult_b;
  return splits_w * splits_fm;
}

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

int64_t bits_to_bytes(int64_t elements, int bits) { return ceil_div(elements * bits, 8); }

struct BundleDims {
  std::string name;
  int64_t dw_macs = 0, pw_macs = 0;
  int64_t in_fm_elems = 0, out_fm_elems = 0;
  int64_t weight_elems = 0;
  int64_t pool_in_elems = 0;
};

// Groups spec layers by bundle invocation (head is its own invocation) on the
// stitched tensor of `plan`.
std::vector<BundleDims> collect_bundles(const NetworkSpec& spec, const TilingPlan& plan) {
  const int64_t area_scale = static_cast<int64_t>(plan.rows) * plan.cols;
  std::vector<BundleDims> out;
  int cur = -2;
  for (const SpecLayer& l : spec.layers) {
    if (l.bundle_index != cur) {
      cur = l.bundle_index;
      BundleDims bd;
      bd.name = (cur == spec.bundle_count) ? "head" : ("bundle" + std::to_string(cur + 1));
      bd.in_fm_elems = l.in_ch * l.in_h * l.in_w * area_scale;
      out.push_back(bd);
    }
    BundleDims& bd = out.back();
    const int64_t out_elems = l.out_ch * l.out_h * l.out_w * area_scale;
    switch (l.kind) {
      case SpecLayerKind::DwConv3:
        bd.dw_macs += 9 * l.out_ch * l.out_h * l.out_w * area_scale;
        bd.weight_elems += 9 * l.out_ch + (l.has_bias ? l.out_ch : 0);
        break;
      case SpecLayerKind::PwConv1:
        bd.pw_macs += l.in_ch * l.out_ch * l.out_h * l.out_w * area_scale;
        bd.weight_elems += l.in_ch * l.out_ch + (l.has_bias ? l.out_ch : 0);
        break;
      case SpecLayerKind::MaxPool2:
        bd.pool_in_elems += l.in_ch * l.in_h * l.in_w * area_scale;
        break;
      default:
        break;
    }
    bd.out_fm_elems = out_elems;
  }
  return out;
}

}  // namespace

FpgaEstimate estimate_fpga(const NetworkSpec& spec, const QuantScheme& q, const TilingPlan& plan,
                           const FpgaTarget& t, const FpgaEstimateOptions& opt) {
  t.validate();
  const int cost = dsp_cost_per_mac(q, t);

  if (opt.conv3_share <= 0.0 || opt.conv3_share >= 1.0) {
    throw std::invalid_argument("estimate_fpga: conv3_share must be in (0,1)");
  }

  FpgaEstimate est;
  const int64_t parallel = opt.fixed_parallel_macs > 0
                               ? opt.fixed_parallel_macs
                               : std::max<int64_t>(2, t.dsp_total / cost);
  est.parallel_macs = parallel;
  est.summary.dsp_used = parallel * cost;

  const auto bundles = collect_bundles(spec, plan);

  const int64_t p3 = std::clamp<int64_t>(
      static_cast<int64_t>(std::llround(static_cast<double>(parallel) * opt.conv3_share)), 1,
      std::max<int64_t>(1, parallel - 1));
  const int64_t p1 = std::max<int64_t>(1, parallel - p3);

  int64_t total_cycles = 0;
  int64_t sum_load = 0, sum_c3 = 0, sum_c1 = 0, sum_pool = 0, sum_wb = 0;
  for (const auto& b : bundles) {
    StageCycles sc;
    sc.name = b.name;
    sc.macs_dw = b.dw_macs;
    sc.macs_pw = b.pw_macs;
    const int64_t load_bytes =
        bits_to_bytes(b.in_fm_elems, q.fm_bits) + bits_to_bytes(b.weight_elems, q.w_bits);
    const int64_t wb_bytes = bits_to_bytes(b.out_fm_elems, q.fm_bits);
    sc.load = ceil_div(load_bytes, t.dram_bandwidth_bytes_per_cycle);
    sc.writeback = ceil_div(wb_bytes, t.dram_bandwidth_bytes_per_cycle);
    sc.exe_conv3 = b.dw_macs > 0 ? ceil_div(b.dw_macs, std::max<int64_t>(1, p3)) : 0;
    sc.exe_conv1 = b.pw_macs > 0 ? ceil_div(b.pw_macs, std::max<int64_t>(1, p1)) : 0;
    sc.exe_pool = b.pool_in_elems > 0 ? ceil_div(b.pool_in_elems, t.pool_lanes) : 0;
    if (opt.double_buffered) {
      sc.total = std::max({sc.load, sc.exe_conv3, sc.exe_conv1, sc.exe_pool, sc.writeback});
    } else {
      sc.total = sc.load + sc.exe_conv3 + sc.exe_conv1 + sc.exe_pool + sc.writeback;
    }
    // Ties prefer compute stages, in pipeline order.
    struct Named {
      int64_t cycles;
      const char* label;
    };
    const Named stages[] = {{sc.exe_conv3, "exe_conv3"},
                            {sc.exe_conv1, "exe_conv1"},
                            {sc.exe_pool, "exe_pool"},
                            {sc.load, "load"},
                            {sc.writeback, "writeback"}};
    const Named* top = &stages[0];
    for (const Named& s : stages) {
      if (s.cycles > top->cycles) top = &s;
    }
    sc.bottleneck_stage = top->label;
    total_cycles += sc.total;
    sum_load += sc.load;
    sum_c3 += sc.exe_conv3;
    sum_c1 += sc.exe_conv1;
    sum_pool += sc.exe_pool;
    sum_wb += sc.writeback;
    est.weight_traffic_bytes_per_image += bits_to_bytes(b.weight_elems, q.w_bits);
    est.stages.push_back(std::move(sc));
  }
  est.weight_traffic_bytes_per_image /= plan.batch() > 0 ? plan.batch() : 1;

  est.total_cycles = total_cycles;
  est.summary.latency_ms =
      static_cast<double>(total_cycles) / (t.frequency_mhz * 1000.0) /
      static_cast<double>(plan.batch());
  est.summary.bram_bytes_used = estimate_bram(spec, q, plan, t);

  const bool dsp_ok = est.summary.dsp_used <= t.dsp_total;
  const bool bram_ok = est.summary.bram_bytes_used <= t.bram_bytes;
  est.summary.feasible = dsp_ok && bram_ok;

  if (!bram_ok) {
    est.summary.bottleneck = Bottleneck::Memory;
  } else if (sum_load + sum_wb > std::max({sum_c3, sum_c1, sum_pool})) {
    est.summary.bottleneck = Bottleneck::Bandwidth;
  } else {
    est.summary.bottleneck = Bottleneck::Compute;
  }
  return est;
}

int64_t estimate_bram(const NetworkSpec& spec, const QuantScheme& q, const TilingPlan& plan,
                      const FpgaTarget& t) {
  t.validate();
  (void)plan;  // buffers hold one image tile; stitching shares them across the grid
  int64_t max_fm = bits_to_bytes(spec.input.c * spec.input.h * spec.input.w, q.fm_bits);
  int64_t max_w = 0;
  for (const SpecLayer& l : spec.layers) {
    max_fm = std::max(max_fm, bits_to_bytes(l.out_ch * l.out_h * l.out_w, q.fm_bits));
    int64_t w_elems = 0;
    if (l.kind == SpecLayerKind::DwConv3) w_elems = 9 * l.out_ch + (l.has_bias ? l.out_ch : 0);
    if (l.kind == SpecLayerKind::PwConv1) {
      w_elems = l.in_ch * l.out_ch + (l.has_bias ? l.out_ch : 0);
    }
    max_w = std::max(max_w, bits_to_bytes(w_elems, q.w_bits));
  }
  return 2 * max_fm + max_w;  // ping-pong FM pair + weight buffer
}

HwEstimate estimate_gpu(const NetworkSpec& spec, const GpuTarget& t) {
  t.validate();
  const double flops = 2.0 * static_cast<double>(macs_count(spec));
  HwEstimate est;
  est.latency_ms = flops / (t.peak_gflops * 1e9 * t.efficiency) * t.scale_factor * 1e3;
  est.dsp_used = 0;
  est.bram_bytes_used = 0;
  est.bottleneck = Bottleneck::Compute;
  est.feasible = true;
  return est;
}

// ---- profiles ---------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, std::string>> read_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read profile file: " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  while (std::getline(f, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

}  // namespace

FpgaTarget fpga_profile(const std::string& name_or_path) {
  FpgaTarget t;
  if (name_or_path.empty() || name_or_path == "ultra96") {
    t.validate();
    return t;
  }
  t.name = name_or_path;
  for (const auto& [k, v] : read_kv_file(name_or_path)) {
    if (k == "name") t.name = v;
    else if (k == "dsp_total") t.dsp_total = std::stoll(v);
    else if (k == "bram_bytes") t.bram_bytes = std::stoll(v);
    else if (k == "frequency_mhz") t.frequency_mhz = std::stod(v);
    else if (k == "dsp_mult_a") t.dsp_mult_a = std::stoi(v);
    else if (k == "dsp_mult_b") t.dsp_mult_b = std::stoi(v);
    else if (k == "dsp_guard_bits") t.dsp_guard_bits = std::stoi(v);
    else if (k == "dram_bandwidth_bytes_per_cycle") t.dram_bandwidth_bytes_per_cycle = std::stoll(v);
    else if (k == "pool_lanes") t.pool_lanes = std::stoll(v);
    else throw std::runtime_error("fpga profile: unknown key " + k + " in " + name_or_path);
  }
  t.validate();
  return t;
}

GpuTarget gpu_profile(const std::string& name_or_path) {
  GpuTarget t;
  if (name_or_path.empty() || name_or_path == "tx2") {
    t.validate();
    return t;
  }
  t.name = name_or_path;
  for (const auto& [k, v] : read_kv_file(name_or_path)) {
    if (k == "name") t.name = v;
    else if (k == "peak_gflops") t.peak_gflops = std::stod(v);
    else if (k == "efficiency") t.efficiency = std::stod(v);
    else if (k == "scale_factor") t.scale_factor = std::stod(v);
    else throw std::runtime_error("gpu profile: unknown key " + k + " in " + name_or_path);
  }
  t.validate();
  return t;
}

}  // namespace bunas
