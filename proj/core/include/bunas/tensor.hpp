#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bunas/rng.hpp"
#include "bunas/scoring.hpp"

namespace bunas {

struct Shape4 {
  int64_t b = 0, c = 0, h = 0, w = 0;

  int64_t count() const { return b * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense 4-D array (batch, channel, height, width), row-major, float64.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 s);
  Tensor(int64_t b, int64_t c, int64_t h, int64_t w) : Tensor(Shape4{b, c, h, w}) {}

  static Tensor full(Shape4 s, double value);
  static Tensor random_uniform(Shape4 s, Rng& rng, double lo, double hi);
  static Tensor random_normal(Shape4 s, Rng& rng, double stddev);

  const Shape4& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(v_.size()); }

  double& at(int64_t b, int64_t c, int64_t y, int64_t x) {
    return v_[((b * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  double at(int64_t b, int64_t c, int64_t y, int64_t x) const {
    return v_[((b * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  bool all_finite() const;
  double max_abs() const;

  /// Rounds every element through IEEE single precision. Used for the
  /// float32 deployment mode; training and tests stay in float64.
  Tensor to_float32_precision() const;

 private:
  Shape4 shape_;
  std::vector<double> v_;
};

enum class ConvKind { Depthwise3x3, Pointwise1x1 };

/// Convolution parameters. Depthwise weights are stored as (C,1,3,3),
/// pointwise as (Cout,Cin,1,1). Bias is optional; layers followed by BN
/// carry none.
struct ConvWeights {
  ConvKind kind = ConvKind::Pointwise1x1;
  Tensor w;
  std::optional<std::vector<double>> bias;

  static ConvWeights depthwise(int64_t channels, bool with_bias = false);
  static ConvWeights pointwise(int64_t in_ch, int64_t out_ch, bool with_bias = false);

  int64_t out_channels() const { return w.shape().b; }
  int64_t in_channels() const {
    return kind == ConvKind::Depthwise3x3 ? w.shape().b : w.shape().c;
  }
  void validate() const;
};

struct BnParams {
  std::vector<double> gamma, beta, running_mean, running_var;
  double epsilon = 1e-5;

  static BnParams identity(int64_t channels, double epsilon = 1e-5);
  int64_t channels() const { return static_cast<int64_t>(gamma.size()); }
  void validate() const;
};

enum class BnMode { Train, Infer };

/// Per-channel batch statistics produced by a train-mode BN forward.
struct BnBatchStats {
  std::vector<double> mean, var;
};

// ---- forward kernels ----------------------------------------------------

/// 3x3 depthwise convolution, stride 1, zero padding 1 (same-size output).
Tensor dwconv3_forward(const Tensor& x, const ConvWeights& w);

/// 1x1 pointwise convolution (cross-channel mixing).
Tensor pwconv1_forward(const Tensor& x, const ConvWeights& w);

/// Batch normalization. Train mode normalizes with batch statistics and
/// reports them through `stats_out`; infer mode uses the running statistics.
Tensor bn_forward(const Tensor& x, const BnParams& p, BnMode mode,
                  BnBatchStats* stats_out = nullptr);

/// Returns a copy of `p` with running statistics moved toward `batch` by
/// `momentum` (new = (1-m)*old + m*batch). Stats update is value-returning;
/// nothing shared is mutated.
BnParams bn_update_running(const BnParams& p, const BnBatchStats& batch, double momentum);

Tensor relu_forward(const Tensor& x);
Tensor relu6_forward(const Tensor& x);

/// 2x2 max pooling, stride 2. Requires even spatial dims.
Tensor maxpool2_forward(const Tensor& x);

/// Space-to-depth: (B,C,H,W) -> (B,4C,H/2,W/2). Output channel o*C + c holds
/// input channel c at sub-pixel offset o, offsets ordered row-major over the
/// 2x2 block: o=0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
/// A bijection on elements; `inverse_reorder` undoes it exactly.
Tensor reorder_forward(const Tensor& x);
Tensor inverse_reorder(const Tensor& y);

/// Channel concatenation; a's channels precede b's.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int64_t c_begin, int64_t c_end);

// ---- detection head ------------------------------------------------------

struct AnchorPrior {
  double w = 0.1, h = 0.1;  // normalized to image size
};

struct DetectionBox {
  Box box;
  double objectness = 0.0;  // sigmoid of the winning logit
  int64_t batch = 0, cell_y = 0, cell_x = 0, anchor = 0;
};

double sigmoid(double z);

/// Decodes one cell/anchor of a 10-channel head output: sigmoid offsets
/// inside the cell, exponential size scaling against the anchor prior,
/// normalized [0,1] image coordinates.
Box decode_cell(const Tensor& y, int64_t b, int64_t cy, int64_t cx, int64_t anchor,
                const AnchorPrior& prior);

/// Returns the highest-objectness box of batch item `b` (ties broken by scan
/// order: cell row-major, then anchor index).
DetectionBox detection_head_decode(const Tensor& y, const std::array<AnchorPrior, 2>& anchors,
                                   int64_t b = 0);

// ---- backward kernels ----------------------------------------------------

struct ConvGrads {
  Tensor dw;
  std::vector<double> dbias;  // empty when the layer has no bias
  Tensor dx;
};

ConvGrads dwconv3_backward(const Tensor& x, const ConvWeights& w, const Tensor& dy);
ConvGrads pwconv1_backward(const Tensor& x, const ConvWeights& w, const Tensor& dy);

struct BnGrads {
  std::vector<double> dgamma, dbeta;
  Tensor dx;
};

BnGrads bn_backward_infer(const Tensor& x, const BnParams& p, const Tensor& dy);
BnGrads bn_backward_train(const Tensor& x, const BnParams& p, const BnBatchStats& stats,
                          const Tensor& dy);

Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor relu6_backward(const Tensor& x, const Tensor& dy);
Tensor maxpool2_backward(const Tensor& x, const Tensor& dy);

// ---- optimizer -----------------------------------------------------------

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.0;  // 0 disables the velocity buffer
};

/// p <- p - lr * g (classic momentum when enabled: v <- mu*v + g; p <- p - lr*v).
/// `velocity` must be empty or the same length as `params`.
void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              const SgdOptions& opt, std::vector<double>* velocity = nullptr);

}  // namespace bunas
