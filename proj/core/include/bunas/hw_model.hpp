#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bunas/genome.hpp"

namespace bunas {

struct QuantScheme;  // quant.hpp

/// FPGA resource profile. `dsp_mult_a/b` are the native multiplier operand
/// widths (weights map to a, feature maps to b); `dsp_guard_bits` is the
/// effective-width overhead added to each operand for sign handling and
/// headroom before it is fit against the native widths.
struct FpgaTarget {
  std::string name = "ultra96";
  int64_t dsp_total = 360;
  int64_t bram_bytes = 996147;  // 0.95 MB on-chip
  double frequency_mhz = 200.0;
  int dsp_mult_a = 18;
  int dsp_mult_b = 27;
  int dsp_guard_bits = 4;
  int64_t dram_bandwidth_bytes_per_cycle = 16;
  int64_t pool_lanes = 8;

  void validate() const;
};

struct GpuTarget {
  std::string name = "tx2";
  double peak_gflops = 665.0;
  double efficiency = 0.3;   // (0, 1]
  double scale_factor = 1.0;  // target device vs training device

  void validate() const;
};

enum class Bottleneck { Compute, Bandwidth, Memory };

const char* bottleneck_name(Bottleneck b);

struct HwEstimate {
  double latency_ms = 0;  // per image
  int64_t dsp_used = 0;
  int64_t bram_bytes_used = 0;
  Bottleneck bottleneck = Bottleneck::Compute;
  bool feasible = true;
};

/// Images stitched into one larger input so bundle weights are fetched once
/// per batch. rows*cols = batch; grid position is the demux key for mapping
/// boxes back to their source image.
struct TilingPlan {
  int rows = 1, cols = 1;

  int batch() const { return rows * cols; }
  InputShape stitched(const InputShape& tile) const {
    return InputShape{tile.c, tile.h * rows, tile.w * cols};
  }
};

/// batch must be a perfect square; batch 1 is the identity plan.
TilingPlan make_tiling_plan(int batch);

/// DSPs needed for one multiply at the scheme's operand widths: 1 when both
/// effective widths fit the native multiplier, else the product of per-operand
/// split counts.
int dsp_cost_per_mac(const QuantScheme& q, const FpgaTarget& t);

struct FpgaEstimateOptions {
  bool double_buffered = true;  // Load/WriteBack overlapped with compute
  int64_t fixed_parallel_macs = 0;  // >0 pins the multiplier count instead of filling the budget
  // The IP template is built once: the multiplier array is split between the
  // CONV3 and CONV1 engines by this fixed share, independent of the network
  // mapped onto it.
  double conv3_share = 0.5;
};

/// Per-bundle-invocation stage cycles for reporting.
struct StageCycles {
  std::string name;  // bundle or head label
  int64_t macs_dw = 0, macs_pw = 0;
  int64_t load = 0, exe_conv3 = 0, exe_conv1 = 0, exe_pool = 0, writeback = 0;
  int64_t total = 0;  // after overlap policy
  std::string bottleneck_stage;
};

struct FpgaEstimate {
  HwEstimate summary;
  std::vector<StageCycles> stages;
  int64_t parallel_macs = 0;
  int64_t total_cycles = 0;
  int64_t weight_traffic_bytes_per_image = 0;
};

/// Five-stage pipeline model (Load, EXE_CONV3, EXE_CONV1, EXE_Pooling,
/// WriteBack) over one invocation per bundle on the stitched input. With
/// double buffering a bundle costs max(stage cycles), otherwise the sum.
FpgaEstimate estimate_fpga(const NetworkSpec& spec, const QuantScheme& q, const TilingPlan& plan,
                           const FpgaTarget& t, const FpgaEstimateOptions& opt = {});

/// Shared-buffer model: ping-pong pair sized to the largest live feature-map
/// tile plus the largest layer's weights.
int64_t estimate_bram(const NetworkSpec& spec, const QuantScheme& q, const TilingPlan& plan,
                      const FpgaTarget& t);

/// latency_ms = 2*MACs / (peak*efficiency) * scale; resource fields stay zero.
HwEstimate estimate_gpu(const NetworkSpec& spec, const GpuTarget& t);

// Built-in profiles plus file loading (key = value text).
FpgaTarget fpga_profile(const std::string& name_or_path);
GpuTarget gpu_profile(const std::string& name_or_path);

}  // namespace bunas
