#include <memory>
#include <sstream>

#include "bunas/checkpoint.hpp"
#include "bunas/train.hpp"
#include "common.hpp"

using namespace bunas;

namespace {

struct EvalParams {
  std::string out;
  std::string checkpoint;
  std::string dataset;
};

}  // namespace

void register_eval(CLI::App& app, const CLI::App& root) {
  auto p = std::make_shared<EvalParams>();
  CLI::App* cmd = app.add_subcommand("eval", "Mean IoU of a checkpoint over a dataset");
  cmd->add_option("--out", p->out, "Run directory")->required()->capture_default_str();
  cmd->add_option("--checkpoint", p->checkpoint, "Float or quantized checkpoint")
      ->required()
      ->capture_default_str();
  cmd->add_option("--dataset", p->dataset, "Dataset directory")->required()->capture_default_str();

  cmd->callback([p, &root] {
    Dataset ds = load_dataset(p->dataset);
    if (ds.empty()) throw std::runtime_error("empty dataset: " + p->dataset);

    std::vector<double> ious;
    if (checkpoint_is_quantized(p->checkpoint)) {
      LoadedQuantizedModel lq = load_quantized_checkpoint(p->checkpoint);
      ious.reserve(ds.size());
      for (const Sample& s : ds) {
        Tensor y = lq.model.forward(s.image.to_tensor());
        DetectionBox det = detection_head_decode(y, lq.model.anchors(), 0);
        ious.push_back(iou(det.box, s.gt));
      }
    } else {
      LoadedModel lm = load_checkpoint(p->checkpoint);
      ious = per_image_ious(lm.model, ds);
    }

    std::ostringstream csv;
    csv << "index,iou\n";
    for (size_t i = 0; i < ious.size(); ++i) csv << i << "," << cli::fmt(ious[i]) << "\n";
    std::filesystem::create_directories(p->out);
    cli::write_file(std::filesystem::path(p->out) / "per_image_iou.csv", csv.str());

    const double mean = r_iou(ious);
    std::ostringstream sum;
    sum << "images = " << ious.size() << "\n";
    sum << "mean_iou = " << cli::fmt(mean) << "\n";
    cli::write_file(std::filesystem::path(p->out) / "summary.txt", sum.str());
    cli::finish_run_dir(root, p->out);
    std::printf("mean IoU %s over %zu images\n", cli::fmt(mean).c_str(), ious.size());
  });
}
