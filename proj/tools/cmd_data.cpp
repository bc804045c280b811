#include <memory>

#include "bunas/data.hpp"
#include "common.hpp"

using namespace bunas;

namespace {

struct GenDataParams {
  std::string out;
  int count = 100;
  int height = 160, width = 320;
  uint64_t seed = 1;
  double noise = 0.15;
  double p_tiny = 0.31, p_small = 0.60;
  double r_min = 0.001, r_max = 0.36;
  double fixed_ratio = -1.0;
};

}  // namespace

void register_gen_data(CLI::App& app, const CLI::App& root) {
  auto p = std::make_shared<GenDataParams>();
  CLI::App* cmd = app.add_subcommand("gen-data", "Generate a synthetic detection dataset");
  cmd->add_option("--out", p->out, "Run directory")->required()->capture_default_str();
  cmd->add_option("--count", p->count, "Number of samples")->capture_default_str();
  cmd->add_option("--height", p->height, "Image height")->capture_default_str();
  cmd->add_option("--width", p->width, "Image width")->capture_default_str();
  cmd->add_option("--seed", p->seed, "Generator seed")->capture_default_str();
  cmd->add_option("--noise", p->noise, "Background noise level")->capture_default_str();
  cmd->add_option("--p-tiny", p->p_tiny, "Mixture mass below 1% area")->capture_default_str();
  cmd->add_option("--p-small", p->p_small, "Mixture mass in [1%,9%) area")->capture_default_str();
  cmd->add_option("--r-min", p->r_min, "Minimum area ratio")->capture_default_str();
  cmd->add_option("--r-max", p->r_max, "Maximum area ratio")->capture_default_str();
  cmd->add_option("--fixed-ratio", p->fixed_ratio, "Pin every box to this area ratio (<0 off)")
      ->capture_default_str();

  cmd->callback([p, &root] {
    DatasetSpec spec;
    spec.count = p->count;
    spec.height = p->height;
    spec.width = p->width;
    spec.seed = p->seed;
    spec.noise_level = p->noise;
    spec.p_tiny = p->p_tiny;
    spec.p_small = p->p_small;
    spec.r_min = p->r_min;
    spec.r_max = p->r_max;
    spec.fixed_ratio = p->fixed_ratio;
    spec.validate();

    Dataset ds = generate(spec);
    std::filesystem::create_directories(p->out);
    save_dataset(ds, p->out);
    cli::finish_run_dir(root, p->out);
    std::printf("wrote %zu samples to %s\n", ds.size(), p->out.c_str());
  });
}
