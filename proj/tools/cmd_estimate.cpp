#include <memory>
#include <sstream>

#include "bunas/checkpoint.hpp"
#include "bunas/hw_model.hpp"
#include "bunas/quant.hpp"
#include "common.hpp"

using namespace bunas;

NetworkGenome genome_from_cli(const std::string& genome_file, const std::string& preset,
                              int width_div);

namespace {

struct EstimateParams {
  std::string out;
  std::string genome_file;
  std::string preset;
  std::string checkpoint;
  int width_div = 1;
  int input_h = 160, input_w = 320;
  std::string target = "fpga";
  std::string fpga_profile_name = "ultra96";
  std::string gpu_profile_name = "tx2";
  int fm_bits = 9, w_bits = 11;
  int batch = 1;
  bool no_overlap = false;
  int64_t fixed_macs = 0;
  double conv3_share = 0.5;
};

}  // namespace

void register_estimate(CLI::App& app, const CLI::App& root) {
  auto p = std::make_shared<EstimateParams>();
  CLI::App* cmd = app.add_subcommand("estimate", "Analytic latency/resource estimate");
  cmd->add_option("--out", p->out, "Run directory")->required()->capture_default_str();
  cmd->add_option("--genome", p->genome_file, "Genome text file")->capture_default_str();
  cmd->add_option("--preset", p->preset, "Built-in backbone: a | b | c")
      ->check(CLI::IsMember({"a", "b", "c", ""}))
      ->capture_default_str();
  cmd->add_option("--checkpoint", p->checkpoint, "Take the genome from a checkpoint")
      ->capture_default_str();
  cmd->add_option("--width-div", p->width_div, "Divide every genome width")->capture_default_str();
  cmd->add_option("--input-h", p->input_h, "Input height")->capture_default_str();
  cmd->add_option("--input-w", p->input_w, "Input width")->capture_default_str();
  cmd->add_option("--target", p->target, "fpga | gpu")
      ->check(CLI::IsMember({"fpga", "gpu"}))
      ->capture_default_str();
  cmd->add_option("--fpga-profile", p->fpga_profile_name, "FPGA profile name or file")
      ->capture_default_str();
  cmd->add_option("--gpu-profile", p->gpu_profile_name, "GPU profile name or file")
      ->capture_default_str();
  cmd->add_option("--fm-bits", p->fm_bits, "Feature-map bits")->capture_default_str();
  cmd->add_option("--w-bits", p->w_bits, "Weight bits")->capture_default_str();
  cmd->add_option("--batch", p->batch, "Images per stitched input (perfect square)")
      ->capture_default_str();
  cmd->add_flag("--no-overlap", p->no_overlap, "Disable load/writeback double buffering")
      ->capture_default_str();
  cmd->add_option("--fixed-macs", p->fixed_macs, "Pin the multiplier count (0 = fill budget)")
      ->capture_default_str();
  cmd->add_option("--conv3-share", p->conv3_share, "Multiplier share of the CONV3 engine")
      ->capture_default_str();

  cmd->callback([p, &root] {
    NetworkGenome g;
    if (!p->checkpoint.empty()) {
      if (!p->genome_file.empty() || !p->preset.empty()) {
        throw std::invalid_argument("give one of --checkpoint, --genome, --preset");
      }
      g = checkpoint_is_quantized(p->checkpoint) ? load_quantized_checkpoint(p->checkpoint).genome
                                                 : load_checkpoint(p->checkpoint).genome;
    } else {
      g = genome_from_cli(p->genome_file, p->preset, p->width_div);
    }
    NetworkSpec spec = instantiate(g, InputShape{3, p->input_h, p->input_w});

    std::filesystem::create_directories(p->out);
    std::ostringstream sum;
    if (p->target == "gpu") {
      HwEstimate est = estimate_gpu(spec, gpu_profile(p->gpu_profile_name));
      sum << "target = gpu\n";
      sum << "latency_ms = " << cli::fmt(est.latency_ms) << "\n";
      sum << "macs = " << macs_count(spec) << "\n";
      sum << "feasible = true\n";
      cli::write_file(std::filesystem::path(p->out) / "summary.txt", sum.str());
    } else {
      QuantScheme scheme{p->fm_bits, p->w_bits};
      scheme.validate();
      FpgaEstimateOptions opt;
      opt.double_buffered = !p->no_overlap;
      opt.fixed_parallel_macs = p->fixed_macs;
      opt.conv3_share = p->conv3_share;
      FpgaTarget target = fpga_profile(p->fpga_profile_name);
      FpgaEstimate est =
          estimate_fpga(spec, scheme, make_tiling_plan(p->batch), target, opt);

      std::ostringstream csv;
      csv << "name,macs_dw,macs_pw,load,exe_conv3,exe_conv1,exe_pool,writeback,total,bottleneck\n";
      for (const auto& s : est.stages) {
        csv << s.name << "," << s.macs_dw << "," << s.macs_pw << "," << s.load << ","
            << s.exe_conv3 << "," << s.exe_conv1 << "," << s.exe_pool << "," << s.writeback << ","
            << s.total << "," << s.bottleneck_stage << "\n";
      }
      cli::write_file(std::filesystem::path(p->out) / "layers.csv", csv.str());

      sum << "target = fpga (" << target.name << ")\n";
      sum << "latency_ms = " << cli::fmt(est.summary.latency_ms) << "\n";
      sum << "total_cycles = " << est.total_cycles << "\n";
      sum << "parallel_macs = " << est.parallel_macs << "\n";
      sum << "dsp_used = " << est.summary.dsp_used << "\n";
      sum << "bram_bytes_used = " << est.summary.bram_bytes_used << "\n";
      sum << "weight_traffic_bytes_per_image = " << est.weight_traffic_bytes_per_image << "\n";
      sum << "bottleneck = " << bottleneck_name(est.summary.bottleneck) << "\n";
      sum << "feasible = " << (est.summary.feasible ? "true" : "false") << "\n";
      cli::write_file(std::filesystem::path(p->out) / "summary.txt", sum.str());
    }
    cli::finish_run_dir(root, p->out);
    std::printf("%s", sum.str().c_str());
  });
}
