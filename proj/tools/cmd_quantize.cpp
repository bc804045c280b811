#include <memory>
#include <sstream>

#include "bunas/checkpoint.hpp"
#include "bunas/train.hpp"
#include "common.hpp"

using namespace bunas;

namespace {

struct QuantizeParams {
  std::string out;
  std::string checkpoint;
  std::string calib_dataset;
  std::string eval_dataset;  // defaults to the calibration set
  std::string fm_bits = "9";
  std::string w_bits = "11";
  int max_calib_images = 32;
};

}  // namespace

void register_quantize(CLI::App& app, const CLI::App& root) {
  auto p = std::make_shared<QuantizeParams>();
  CLI::App* cmd =
      app.add_subcommand("quantize", "Fold BN, quantize a checkpoint over a scheme grid");
  cmd->add_option("--out", p->out, "Run directory")->required()->capture_default_str();
  cmd->add_option("--checkpoint", p->checkpoint, "Float checkpoint")
      ->required()
      ->capture_default_str();
  cmd->add_option("--calib-dataset", p->calib_dataset, "Calibration dataset directory")
      ->required()
      ->capture_default_str();
  cmd->add_option("--eval-dataset", p->eval_dataset, "Accuracy-delta dataset (default: calib)")
      ->capture_default_str();
  cmd->add_option("--fm-bits", p->fm_bits, "Feature-map bit widths, comma separated")
      ->capture_default_str();
  cmd->add_option("--w-bits", p->w_bits, "Weight bit widths, comma separated")
      ->capture_default_str();
  cmd->add_option("--max-calib-images", p->max_calib_images, "Calibration image cap")
      ->capture_default_str();

  cmd->callback([p, &root] {
    if (checkpoint_is_quantized(p->checkpoint)) {
      throw std::runtime_error("expected a float checkpoint: " + p->checkpoint);
    }
    LoadedModel lm = load_checkpoint(p->checkpoint);
    Dataset calib = load_dataset(p->calib_dataset);
    if (calib.empty()) throw std::runtime_error("empty calibration dataset: " + p->calib_dataset);
    Dataset eval_ds =
        p->eval_dataset.empty() ? calib : load_dataset(p->eval_dataset);
    if (eval_ds.empty()) throw std::runtime_error("empty eval dataset: " + p->eval_dataset);

    Model folded = fold_network(lm.model);
    std::vector<Tensor> calib_inputs;
    const size_t n_calib = std::min(calib.size(), size_t(p->max_calib_images));
    for (size_t i = 0; i < n_calib; ++i) calib_inputs.push_back(calib[i].image.to_tensor());

    const double float_iou = evaluate_iou(lm.model, eval_ds);

    std::ostringstream csv;
    csv << "scheme,fm_bits,w_bits,float_iou,quant_iou,delta\n";
    std::filesystem::create_directories(p->out);
    int scheme_no = 0;
    for (int fm : cli::parse_int_list(p->fm_bits)) {
      for (int w : cli::parse_int_list(p->w_bits)) {
        ++scheme_no;
        QuantScheme scheme{fm, w};
        scheme.validate();
        Calibration cal = calibrate(folded, calib_inputs, scheme);
        QuantizedModel qm = quantize_network(folded, scheme, cal);

        std::vector<Tensor> images;
        std::vector<Box> gts;
        for (const Sample& s : eval_ds) {
          images.push_back(s.image.to_tensor());
          gts.push_back(s.gt);
        }
        const double quant_iou = mean_iou_quantized(qm, images, gts);
        csv << scheme_no << "," << fm << "," << w << "," << cli::fmt(float_iou) << ","
            << cli::fmt(quant_iou) << "," << cli::fmt(float_iou - quant_iou) << "\n";

        std::ostringstream name;
        name << "quantized_fm" << fm << "_w" << w << ".bin";
        save_quantized_checkpoint(qm, lm.genome,
                                  (std::filesystem::path(p->out) / name.str()).string());
      }
    }
    cli::write_file(std::filesystem::path(p->out) / "report.csv", csv.str());
    cli::finish_run_dir(root, p->out);
    std::printf("quantized %d scheme(s); float IoU %s\n", scheme_no, cli::fmt(float_iou).c_str());
  });
}
