#pragma once

#include <cstdint>
#include <vector>

#include "bunas/model.hpp"

namespace bunas {

/// Bit allocation for feature maps and weights. Rounding is round-half-to-even
/// everywhere; scales are per-tensor powers of two.
struct QuantScheme {
  int fm_bits = 9;
  int w_bits = 11;

  void validate() const;
};

/// Signed fixed-point interpretation: value = payload * 2^-frac_bits.
struct FixedFormat {
  int bits = 16;
  int frac_bits = 8;

  double scale() const { return std::pow(2.0, -frac_bits); }
  int64_t qmin() const { return -(int64_t(1) << (bits - 1)); }
  int64_t qmax() const { return (int64_t(1) << (bits - 1)) - 1; }
};

struct FixedTensor {
  FixedFormat fmt;
  Shape4 shape;
  std::vector<int32_t> q;

  Tensor dequantize() const;
};

/// Saturating round-half-to-even quantization of one value.
int64_t quantize_value(double x, const FixedFormat& fmt);

/// Quantize and dequantize: |x - round_trip(x)| <= 2^(-frac_bits-1) inside the
/// representable range; saturates at the ends.
double fixed_round_trip(double x, int bits, int frac_bits);

/// frac_bits = bits - 1 - ceil(log2(max_abs)), clamped to [min_frac, bits-1].
/// An all-zero tensor (max_abs = 0) gets the maximum, bits - 1.
int frac_bits_for(double max_abs, int bits, int min_frac = -32);

/// Folds a BN layer into the preceding conv: w' = w*g/sqrt(var+eps),
/// b' = (b - mean)*g/sqrt(var+eps) + beta. The returned conv always carries a
/// bias.
ConvWeights fold_bn(const ConvWeights& conv, const BnParams& bn);

/// Spec with every conv+BN pair merged (BN entries removed, convs biased).
NetworkSpec fold_spec(const NetworkSpec& spec);

/// Model with all BN layers folded away; forward output matches the original
/// in infer mode within float tolerance.
Model fold_network(const Model& m);

/// Per-tensor fixed-point formats calibrated from observed ranges: one format
/// per conv weight tensor and one per inter-layer feature map (the input
/// image is slot 0, each layer's output is slot i+1).
struct Calibration {
  std::vector<FixedFormat> fm;      // spec.layers.size() + 1 entries
  std::vector<FixedFormat> weight;  // one per layer; unused for non-conv layers
};

/// Runs the folded float model over the calibration inputs and assigns
/// fractional bits from per-tensor max magnitudes.
Calibration calibrate(const Model& folded, const std::vector<Tensor>& calib_inputs,
                      const QuantScheme& scheme);

/// Fixed-point network. Conv arithmetic accumulates exactly in wide integers
/// and re-quantizes once per output element; everything between quantize
/// points is integer, so inference is bit-exact reproducible.
class QuantizedModel {
 public:
  QuantizedModel() = default;
  QuantizedModel(NetworkSpec folded_spec, std::array<AnchorPrior, 2> anchors,
                 QuantScheme scheme);

  /// Integer-simulated forward; returns the dequantized head output.
  Tensor forward(const Tensor& x) const;

  const NetworkSpec& spec() const { return spec_; }
  const std::array<AnchorPrior, 2>& anchors() const { return anchors_; }
  const QuantScheme& scheme() const { return scheme_; }

  struct QLayer {
    FixedTensor w;                 // conv weights
    std::vector<int64_t> bias_q;   // at accumulator precision (x_frac + w_frac)
    FixedFormat out_fmt;           // feature-map format of this layer's output
  };
  std::vector<QLayer>& qlayers() { return qlayers_; }
  const std::vector<QLayer>& qlayers() const { return qlayers_; }
  FixedFormat input_fmt() const { return input_fmt_; }
  void set_input_fmt(FixedFormat f) { input_fmt_ = f; }

 private:
  NetworkSpec spec_;
  std::array<AnchorPrior, 2> anchors_{};
  QuantScheme scheme_;
  FixedFormat input_fmt_;
  std::vector<QLayer> qlayers_;  // parallel to spec_.layers
};

/// Quantizes a folded model under `scheme` using `calib` formats. Throws if
/// the model still contains BN layers (fold first).
QuantizedModel quantize_network(const Model& folded, const QuantScheme& scheme,
                                const Calibration& calib);

/// Mean IoU of the quantized model over an eval set.
double mean_iou_quantized(const QuantizedModel& m, const std::vector<Tensor>& images,
                          const std::vector<Box>& gts);

}  // namespace bunas
