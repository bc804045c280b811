#pragma once

#include <array>
#include <string>
#include <vector>

#include "bunas/autograd.hpp"
#include "bunas/genome.hpp"
#include "bunas/tensor.hpp"

namespace bunas {

/// Weights, gradients and optimizer state for one spec layer. Only conv and
/// BN layers carry parameters.
struct LayerState {
  SpecLayer spec;
  ConvWeights conv;            // valid for conv kinds
  Tensor conv_grad;            // same shape as conv.w
  std::vector<double> bias_grad;
  BnParams bn;                 // valid for Bn kind
  std::vector<double> bn_gamma_grad, bn_beta_grad;
  // momentum buffers, lazily sized
  std::vector<double> vel_w, vel_b, vel_gamma, vel_beta;
};

struct LossWeights {
  double coord = 5.0;
  double obj = 1.0;
  double noobj = 0.5;
};

/// Runnable network instantiated from a NetworkSpec. Forward/backward run on
/// the tensor kernels; BN running statistics advance only in train mode.
class Model {
 public:
  Model() = default;
  Model(NetworkSpec spec, std::array<AnchorPrior, 2> anchors);

  void init_weights(Rng& rng);

  const NetworkSpec& spec() const { return spec_; }
  const std::array<AnchorPrior, 2>& anchors() const { return anchors_; }
  void set_anchors(const std::array<AnchorPrior, 2>& a) { anchors_ = a; }
  bool folded() const;  // true when no BN layers remain

  std::vector<LayerState>& layers() { return layers_; }
  const std::vector<LayerState>& layers() const { return layers_; }

  /// Inference forward (running BN statistics). Returns the head output
  /// (B, 10, grid_h, grid_w).
  Tensor forward(const Tensor& x) const;

  /// Training forward: records every op on the tape, uses batch BN statistics
  /// and advances running statistics by `bn_momentum`. Returns the head
  /// output; `head_value_id` receives the tape id to seed backward with.
  Tensor forward_train(const Tensor& x, GradTape& tape, int& head_value_id,
                       double bn_momentum = 0.1);

  /// Accumulates parameter gradients by replaying the tape from the head
  /// output gradient. Returns the gradient wrt the network input.
  Tensor backward(const GradTape& tape, int head_value_id, const Tensor& dhead);

  void zero_grads();
  void sgd_update(const SgdOptions& opt);

  /// Gradient L2 norm across all parameters (diagnostic / clipping).
  double grad_norm() const;
  void scale_grads(double factor);

 private:
  NetworkSpec spec_;
  std::array<AnchorPrior, 2> anchors_{AnchorPrior{0.1, 0.1}, AnchorPrior{0.2, 0.2}};
  std::vector<LayerState> layers_;
};

/// Detection loss for a batch: squared error on (sigma(tx), sigma(ty),
/// sqrt(w), sqrt(h)) of the responsible cell/anchor plus binary cross-entropy
/// on all objectness logits. Returns the loss and its analytic gradient wrt
/// the head output.
std::pair<double, Tensor> detection_loss(const Tensor& head, const std::vector<Box>& gt,
                                         const std::array<AnchorPrior, 2>& anchors,
                                         const LossWeights& lw = {});

/// Mean IoU of the decoded top-1 box against ground truth over a set of
/// (input, gt) pairs, inference mode.
double mean_iou(const Model& m, const std::vector<Tensor>& images, const std::vector<Box>& gts);

}  // namespace bunas
