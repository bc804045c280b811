#include <memory>
#include <sstream>

#include "bunas/checkpoint.hpp"
#include "bunas/train.hpp"
#include "common.hpp"

using namespace bunas;

namespace {

struct TrainParams {
  std::string out;
  std::string genome_file;
  std::string preset;  // a | b | c
  int width_div = 1;
  std::string dataset;
  int epochs = 30;
  int batch = 4;
  double lr0 = 0.05, lr1 = 0.002;
  double momentum = 0.9;
  double clip = 10.0;
  double bn_momentum = 0.1;
  uint64_t seed = 1;
  double val_fraction = 0.2;
  int input_h = 160, input_w = 320;
  bool augment = false;
  int max_val_images = 200;
};

}  // namespace

NetworkGenome genome_from_cli(const std::string& genome_file, const std::string& preset,
                              int width_div) {
  if (!genome_file.empty() && !preset.empty()) {
    throw std::invalid_argument("give either --genome or --preset, not both");
  }
  if (!genome_file.empty()) {
    NetworkGenome g = load_genome(genome_file);
    if (width_div > 1) {
      for (int& w : g.fv1) w = std::max(1, w / width_div);
    }
    return g;
  }
  if (!preset.empty()) return preset_genome(preset[0], width_div);
  throw std::invalid_argument("one of --genome or --preset is required");
}

void register_train(CLI::App& app, const CLI::App& root) {
  auto p = std::make_shared<TrainParams>();
  CLI::App* cmd = app.add_subcommand("train", "Train a genome on a dataset");
  cmd->add_option("--out", p->out, "Run directory")->required()->capture_default_str();
  cmd->add_option("--genome", p->genome_file, "Genome text file")->capture_default_str();
  cmd->add_option("--preset", p->preset, "Built-in backbone: a | b | c")
      ->check(CLI::IsMember({"a", "b", "c", ""}))
      ->capture_default_str();
  cmd->add_option("--width-div", p->width_div, "Divide every genome width")->capture_default_str();
  cmd->add_option("--dataset", p->dataset, "Dataset directory")->required()->capture_default_str();
  cmd->add_option("--epochs", p->epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", p->batch, "Batch size")->capture_default_str();
  cmd->add_option("--lr0", p->lr0, "Initial learning rate")->capture_default_str();
  cmd->add_option("--lr1", p->lr1, "Final learning rate")->capture_default_str();
  cmd->add_option("--momentum", p->momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--clip", p->clip, "Gradient-norm clip, 0 disables")->capture_default_str();
  cmd->add_option("--bn-momentum", p->bn_momentum, "BN running-stat momentum")
      ->capture_default_str();
  cmd->add_option("--seed", p->seed, "Training seed")->capture_default_str();
  cmd->add_option("--val-fraction", p->val_fraction, "Validation split fraction")
      ->capture_default_str();
  cmd->add_option("--input-h", p->input_h, "Input height")->capture_default_str();
  cmd->add_option("--input-w", p->input_w, "Input width")->capture_default_str();
  cmd->add_flag("--augment", p->augment, "Enable crop/jitter/distort augmentation")
      ->capture_default_str();
  cmd->add_option("--max-val-images", p->max_val_images, "Per-epoch validation cap")
      ->capture_default_str();

  cmd->callback([p, &root] {
    NetworkGenome g = genome_from_cli(p->genome_file, p->preset, p->width_div);
    Dataset all = load_dataset(p->dataset);
    if (all.empty()) throw std::runtime_error("empty dataset: " + p->dataset);
    auto [train, val] = split_train_val(all, p->val_fraction, p->seed);
    if (train.empty()) throw std::runtime_error("validation split left no training samples");

    InputShape in{3, p->input_h, p->input_w};
    Model m(instantiate(g, in), kmeans_anchors(train, p->seed));
    Rng rng(mix_seed({p->seed, 0x11717ull}));
    m.init_weights(rng);

    TrainConfig tc;
    tc.epochs = p->epochs;
    tc.batch = p->batch;
    tc.lr0 = p->lr0;
    tc.lr1 = p->lr1;
    tc.momentum = p->momentum;
    tc.clip_norm = p->clip;
    tc.bn_momentum = p->bn_momentum;
    tc.seed = p->seed;
    tc.augment.enabled = p->augment;
    tc.max_val_images = p->max_val_images;

    auto metrics = train_model(m, train, val, tc);

    std::filesystem::create_directories(p->out);
    save_checkpoint(m, g, (std::filesystem::path(p->out) / "checkpoint.bin").string());
    std::ostringstream csv;
    csv << "epoch,mean_loss,val_iou\n";
    for (const auto& e : metrics) {
      csv << e.epoch << "," << cli::fmt(e.mean_loss) << "," << cli::fmt(e.val_iou) << "\n";
    }
    cli::write_file(std::filesystem::path(p->out) / "metrics.csv", csv.str());

    std::ostringstream sum;
    sum << "train_samples = " << train.size() << "\n";
    sum << "val_samples = " << val.size() << "\n";
    sum << "anchors = " << cli::fmt(m.anchors()[0].w) << " " << cli::fmt(m.anchors()[0].h) << " "
        << cli::fmt(m.anchors()[1].w) << " " << cli::fmt(m.anchors()[1].h) << "\n";
    sum << "params = " << param_count(m.spec()) << "\n";
    sum << "macs = " << macs_count(m.spec()) << "\n";
    if (!metrics.empty()) sum << "final_val_iou = " << cli::fmt(metrics.back().val_iou) << "\n";
    cli::write_file(std::filesystem::path(p->out) / "summary.txt", sum.str());
    cli::finish_run_dir(root, p->out);
    if (!metrics.empty()) {
      std::printf("final val IoU %s after %d epochs\n", cli::fmt(metrics.back().val_iou).c_str(),
                  p->epochs);
    } else {
      std::printf("wrote initialized checkpoint (0 epochs)\n");
    }
  });
}
