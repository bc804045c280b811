#include <memory>

#include "bunas/search.hpp"
#include "bunas/quant.hpp"
#include "common.hpp"

using namespace bunas;

namespace {

struct SearchParams {
  std::string out;
  std::string evaluator = "surrogate";  // surrogate | trainer
  int groups = 1, per_group = 8, iterations = 20;
  double alpha = -0.01;
  double target_ms = 10.0;
  uint64_t seed = 1;
  int workers = 1;
  double r_local = 0.7, r_group = 0.2;
  int epochs_from = 2, epochs_to = 10;
  int depth = 4;
  std::string alphabet = "24,48,96,192,384,512";
  int min_pools = 0, max_pools = 3;
  std::string bundles = "0";
  int input_h = 160, input_w = 320;
  std::string target = "fpga";  // fpga | gpu
  std::string fpga_profile_name = "ultra96";
  std::string gpu_profile_name = "tx2";
  int fm_bits = 9, w_bits = 11;
  int tiling_batch = 1;
  std::string surrogate_fv1;  // optional explicit landscape optimum
  std::string surrogate_fv2;
  std::string dataset;  // trainer evaluator
  double val_fraction = 0.2;
  int trainer_batch = 4;
};

NetworkGenome surrogate_target(const SearchParams& p, const GenomeBounds& bounds) {
  NetworkGenome opt;
  opt.bundle_id = bounds.bundle_ids.front();
  opt.depth = bounds.depth;
  if (!p.surrogate_fv1.empty()) {
    for (int w : cli::parse_int_list(p.surrogate_fv1)) opt.fv1.push_back(w);
  } else {
    // Interior default: alternate between the second and third alphabet slots.
    const auto& a = bounds.width_alphabet;
    for (int k = 0; k < bounds.depth; ++k) {
      const size_t idx = std::min<size_t>(a.size() - 1, 1 + size_t(k % 2));
      opt.fv1.push_back(a[idx]);
    }
  }
  if (!p.surrogate_fv2.empty()) {
    for (int m : cli::parse_int_list(p.surrogate_fv2)) opt.fv2.push_back(uint8_t(m ? 1 : 0));
  } else {
    for (int k = 0; k < bounds.depth; ++k) opt.fv2.push_back(uint8_t(k % 2 == 0 ? 1 : 0));
  }
  opt.validate();
  return opt;
}

}  // namespace

void register_search(CLI::App& app, const CLI::App& root) {
  auto p = std::make_shared<SearchParams>();
  CLI::App* cmd = app.add_subcommand("search", "Group-based swarm search over network genomes");
  cmd->add_option("--out", p->out, "Run directory")->required()->capture_default_str();
  cmd->add_option("--evaluator", p->evaluator, "surrogate | trainer")
      ->check(CLI::IsMember({"surrogate", "trainer"}))
      ->capture_default_str();
  cmd->add_option("--groups", p->groups, "Bundle groups (M)")->capture_default_str();
  cmd->add_option("--per-group", p->per_group, "Networks per group (N)")->capture_default_str();
  cmd->add_option("--iterations", p->iterations, "Search iterations (I)")->capture_default_str();
  cmd->add_option("--alpha", p->alpha, "Latency weight, must be negative")->capture_default_str();
  cmd->add_option("--target-ms", p->target_ms, "Target latency in ms")->capture_default_str();
  cmd->add_option("--seed", p->seed, "Search seed")->capture_default_str();
  cmd->add_option("--workers", p->workers, "Parallel evaluation workers")->capture_default_str();
  cmd->add_option("--r-local", p->r_local, "Move probability toward the local best")
      ->capture_default_str();
  cmd->add_option("--r-group", p->r_group, "Move probability toward the group best")
      ->capture_default_str();
  cmd->add_option("--epochs-from", p->epochs_from, "Fast-training epochs, first iteration")
      ->capture_default_str();
  cmd->add_option("--epochs-to", p->epochs_to, "Fast-training epochs, last iteration")
      ->capture_default_str();
  cmd->add_option("--depth", p->depth, "Stacked bundles per genome")->capture_default_str();
  cmd->add_option("--alphabet", p->alphabet, "Width alphabet, comma separated")
      ->capture_default_str();
  cmd->add_option("--min-pools", p->min_pools, "Minimum pool count")->capture_default_str();
  cmd->add_option("--max-pools", p->max_pools, "Maximum pool count")->capture_default_str();
  cmd->add_option("--bundles", p->bundles, "Bundle ids, one group each")->capture_default_str();
  cmd->add_option("--input-h", p->input_h, "Input height")->capture_default_str();
  cmd->add_option("--input-w", p->input_w, "Input width")->capture_default_str();
  cmd->add_option("--target", p->target, "Latency model: fpga | gpu")
      ->check(CLI::IsMember({"fpga", "gpu"}))
      ->capture_default_str();
  cmd->add_option("--fpga-profile", p->fpga_profile_name, "FPGA profile name or file")
      ->capture_default_str();
  cmd->add_option("--gpu-profile", p->gpu_profile_name, "GPU profile name or file")
      ->capture_default_str();
  cmd->add_option("--fm-bits", p->fm_bits, "Feature-map bits for the FPGA model")
      ->capture_default_str();
  cmd->add_option("--w-bits", p->w_bits, "Weight bits for the FPGA model")->capture_default_str();
  cmd->add_option("--tiling-batch", p->tiling_batch, "Images per stitched input")
      ->capture_default_str();
  cmd->add_option("--surrogate-fv1", p->surrogate_fv1, "Surrogate optimum widths")
      ->capture_default_str();
  cmd->add_option("--surrogate-fv2", p->surrogate_fv2, "Surrogate optimum pool mask")
      ->capture_default_str();
  cmd->add_option("--dataset", p->dataset, "Dataset dir for the trainer evaluator")
      ->capture_default_str();
  cmd->add_option("--val-fraction", p->val_fraction, "Trainer validation split")
      ->capture_default_str();
  cmd->add_option("--trainer-batch", p->trainer_batch, "Trainer batch size")
      ->capture_default_str();

  cmd->callback([p, &root] {
    SwarmConfig cfg;
    cfg.groups = p->groups;
    cfg.per_group = p->per_group;
    cfg.iterations = p->iterations;
    cfg.alpha = p->alpha;
    cfg.target_latency_ms = p->target_ms;
    cfg.seed = p->seed;
    cfg.r_local = p->r_local;
    cfg.r_group = p->r_group;
    cfg.set_linear_epochs(p->epochs_from, p->epochs_to);
    cfg.bounds.depth = p->depth;
    cfg.bounds.width_alphabet = cli::parse_int_list(p->alphabet);
    cfg.bounds.min_pools = p->min_pools;
    cfg.bounds.max_pools = p->max_pools;
    cfg.bounds.bundle_ids = cli::parse_int_list(p->bundles);
    cfg.input = InputShape{3, p->input_h, p->input_w};
    cfg.validate();

    LatencyFn latency;
    if (p->target == "fpga") {
      latency = fpga_latency_fn(QuantScheme{p->fm_bits, p->w_bits},
                                make_tiling_plan(p->tiling_batch),
                                fpga_profile(p->fpga_profile_name));
    } else {
      latency = gpu_latency_fn(gpu_profile(p->gpu_profile_name));
    }

    std::unique_ptr<Evaluator> evaluator;
    if (p->evaluator == "surrogate") {
      evaluator = std::make_unique<SurrogateEvaluator>(surrogate_target(*p, cfg.bounds),
                                                       cfg.bounds.width_alphabet);
    } else {
      if (p->dataset.empty()) {
        throw std::invalid_argument("search --evaluator trainer requires --dataset");
      }
      Dataset all = load_dataset(p->dataset);
      if (all.empty()) throw std::runtime_error("empty dataset: " + p->dataset);
      auto [train, val] = split_train_val(all, p->val_fraction, cfg.seed);
      evaluator = std::make_unique<TinyTrainerEvaluator>(std::move(train), std::move(val),
                                                         cfg.input, p->trainer_batch);
    }

    SearchReport rep = run_search(cfg, *evaluator, latency, p->workers);

    std::filesystem::create_directories(p->out);
    cli::write_file(std::filesystem::path(p->out) / "report.txt", rep.to_text());
    cli::write_file(std::filesystem::path(p->out) / "history.csv", rep.history_csv());
    cli::write_file(std::filesystem::path(p->out) / "pareto.csv", rep.pareto_csv());
    save_genome(rep.best_genome, (std::filesystem::path(p->out) / "best_genome.txt").string());
    cli::finish_run_dir(root, p->out);
    std::printf("best fitness %s (accuracy %s, latency %s ms)\n", cli::fmt(rep.best_fitness).c_str(),
                cli::fmt(rep.best_accuracy).c_str(), cli::fmt(rep.best_latency_ms).c_str());
  });
}
