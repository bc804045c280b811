#include "bunas/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bunas {

void QuantScheme::validate() const {
  if (fm_bits < 2 || w_bits < 2) {
    throw std::invalid_argument("quant scheme: bit widths must be >= 2");
  }
  if (fm_bits > 30 || w_bits > 30) {
    throw std::invalid_argument("quant scheme: bit widths above 30 are not supported");
  }
}

namespace {

// Round-half-to-even of a finite double. Values here are well inside int64.
int64_t round_half_even(double v) {
  const double r = std::nearbyint(v);  // FE_TONEAREST = ties to even
  return static_cast<int64_t>(r);
}

}  // namespace

int64_t quantize_value(double x, const FixedFormat& fmt) {
  const double scaled = std::ldexp(x, fmt.frac_bits);
  int64_t q = round_half_even(scaled);
  q = std::clamp(q, fmt.qmin(), fmt.qmax());
  return q;
}

double fixed_round_trip(double x, int bits, int frac_bits) {
  FixedFormat fmt{bits, frac_bits};
  return std::ldexp(static_cast<double>(quantize_value(x, fmt)), -frac_bits);
}

int frac_bits_for(double max_abs, int bits, int min_frac) {
  if (bits < 2) throw std::invalid_argument("frac_bits_for: need at least 2 bits");
  if (max_abs < 0) throw std::invalid_argument("frac_bits_for: negative magnitude");
  if (max_abs == 0.0) return bits - 1;  // all-zero tensor: maximum precision
  const int int_bits = static_cast<int>(std::ceil(std::log2(max_abs)));
  return std::clamp(bits - 1 - int_bits, min_frac, bits - 1);
}

Tensor FixedTensor::dequantize() const {
  Tensor t(shape);
  auto& v = t.values();
  for (size_t i = 0; i < q.size(); ++i) v[i] = std::ldexp(static_cast<double>(q[i]), -fmt.frac_bits);
  return t;
}

// ---- BN folding ---------------------------------------------------------------

ConvWeights fold_bn(const ConvWeights& conv, const BnParams& bn) {
  conv.validate();
  bn.validate();
  if (bn.channels() != conv.out_channels()) {
    throw std::invalid_argument("fold_bn: bn has " + std::to_string(bn.channels()) +
                                " channels, conv outputs " +
                                std::to_string(conv.out_channels()));
  }
  ConvWeights out = conv;
  out.bias = std::vector<double>(static_cast<size_t>(conv.out_channels()), 0.0);
  const int64_t cout = conv.out_channels();
  const int64_t per_out = conv.w.size() / cout;
  for (int64_t co = 0; co < cout; ++co) {
    const double s = bn.gamma[static_cast<size_t>(co)] /
                     std::sqrt(bn.running_var[static_cast<size_t>(co)] + bn.epsilon);
    for (int64_t k = 0; k < per_out; ++k) {
      out.w.values()[static_cast<size_t>(co * per_out + k)] =
          conv.w.values()[static_cast<size_t>(co * per_out + k)] * s;
    }
    const double b0 = conv.bias ? (*conv.bias)[static_cast<size_t>(co)] : 0.0;
    (*out.bias)[static_cast<size_t>(co)] =
        (b0 - bn.running_mean[static_cast<size_t>(co)]) * s + bn.beta[static_cast<size_t>(co)];
  }
  return out;
}

NetworkSpec fold_spec(const NetworkSpec& spec) {
  NetworkSpec out = spec;
  out.layers.clear();
  int old_index = -1;
  std::vector<int> remap(spec.layers.size(), -1);
  for (const SpecLayer& l : spec.layers) {
    ++old_index;
    if (l.kind == SpecLayerKind::Bn) {
      // fold into the previous conv; the previous layer keeps its output slot
      remap[static_cast<size_t>(old_index)] = static_cast<int>(out.layers.size()) - 1;
      continue;
    }
    SpecLayer nl = l;
    if (nl.kind == SpecLayerKind::DwConv3 || nl.kind == SpecLayerKind::PwConv1) {
      nl.has_bias = true;
    }
    remap[static_cast<size_t>(old_index)] = static_cast<int>(out.layers.size());
    out.layers.push_back(nl);
  }
  if (spec.bypass_source_layer >= 0) {
    out.bypass_source_layer = remap[static_cast<size_t>(spec.bypass_source_layer)];
  }
  return out;
}

Model fold_network(const Model& m) {
  const auto& layers = m.layers();
  Model out(fold_spec(m.spec()), m.anchors());
  size_t oi = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerState& st = layers[i];
    if (st.spec.kind == SpecLayerKind::Bn) continue;
    LayerState& dst = out.layers()[oi++];
    if (st.spec.kind == SpecLayerKind::DwConv3 || st.spec.kind == SpecLayerKind::PwConv1) {
      if (i + 1 < layers.size() && layers[i + 1].spec.kind == SpecLayerKind::Bn) {
        dst.conv = fold_bn(st.conv, layers[i + 1].bn);
      } else {
        dst.conv = st.conv;
        if (!dst.conv.bias) {
          dst.conv.bias =
              std::vector<double>(static_cast<size_t>(st.conv.out_channels()), 0.0);
        }
      }
    }
  }
  return out;
}

// ---- calibration ----------------------------------------------------------------

Calibration calibrate(const Model& folded, const std::vector<Tensor>& calib_inputs,
                      const QuantScheme& scheme) {
  scheme.validate();
  if (!folded.folded()) {
    throw std::invalid_argument("calibrate: model still has BN layers; fold first");
  }
  if (calib_inputs.empty()) {
    throw std::invalid_argument("calibrate: need at least one calibration input");
  }
  const auto& layers = folded.layers();
  std::vector<double> fm_max(layers.size() + 1, 0.0);

  for (const Tensor& x : calib_inputs) {
    fm_max[0] = std::max(fm_max[0], x.max_abs());
    // mirror Model::forward but record per-layer output magnitudes
    Tensor cur = x;
    Tensor saved;
    for (size_t li = 0; li < layers.size(); ++li) {
      const LayerState& st = layers[li];
      switch (st.spec.kind) {
        case SpecLayerKind::DwConv3: cur = dwconv3_forward(cur, st.conv); break;
        case SpecLayerKind::PwConv1: cur = pwconv1_forward(cur, st.conv); break;
        case SpecLayerKind::Relu: cur = relu_forward(cur); break;
        case SpecLayerKind::Relu6: cur = relu6_forward(cur); break;
        case SpecLayerKind::MaxPool2: cur = maxpool2_forward(cur); break;
        case SpecLayerKind::Reorder:
          saved = reorder_forward(saved);
          fm_max[li + 1] = std::max(fm_max[li + 1], saved.max_abs());
          if (static_cast<int>(li) == folded.spec().bypass_source_layer) saved = cur;
          continue;
        case SpecLayerKind::Concat: cur = concat_channels(cur, saved); break;
        case SpecLayerKind::Bn: throw std::logic_error("calibrate: unexpected BN");
      }
      fm_max[li + 1] = std::max(fm_max[li + 1], cur.max_abs());
      if (static_cast<int>(li) == folded.spec().bypass_source_layer) saved = cur;
    }
  }

  Calibration cal;
  cal.fm.resize(layers.size() + 1);
  cal.weight.resize(layers.size());
  for (size_t i = 0; i < fm_max.size(); ++i) {
    cal.fm[i] = FixedFormat{scheme.fm_bits, frac_bits_for(fm_max[i], scheme.fm_bits)};
  }
  for (size_t li = 0; li < layers.size(); ++li) {
    const LayerState& st = layers[li];
    if (st.spec.kind == SpecLayerKind::DwConv3 || st.spec.kind == SpecLayerKind::PwConv1) {
      cal.weight[li] = FixedFormat{scheme.w_bits, frac_bits_for(st.conv.w.max_abs(), scheme.w_bits)};
    } else {
      cal.weight[li] = FixedFormat{scheme.w_bits, 0};
    }
  }
  return cal;
}

// ---- quantized model -------------------------------------------------------------

QuantizedModel::QuantizedModel(NetworkSpec folded_spec, std::array<AnchorPrior, 2> anchors,
                               QuantScheme scheme)
    : spec_(std::move(folded_spec)), anchors_(anchors), scheme_(scheme) {
  qlayers_.resize(spec_.layers.size());
}

QuantizedModel quantize_network(const Model& folded, const QuantScheme& scheme,
                                const Calibration& calib) {
  scheme.validate();
  if (!folded.folded()) {
    throw std::invalid_argument("quantize_network: model still has BN layers; fold first");
  }
  const auto& layers = folded.layers();
  if (calib.fm.size() != layers.size() + 1 || calib.weight.size() != layers.size()) {
    throw std::invalid_argument("quantize_network: calibration does not match the model");
  }

  QuantizedModel qm(folded.spec(), folded.anchors(), scheme);
  qm.set_input_fmt(calib.fm[0]);
  for (size_t li = 0; li < layers.size(); ++li) {
    const LayerState& st = layers[li];
    QuantizedModel::QLayer& ql = qm.qlayers()[li];
    ql.out_fmt = calib.fm[li + 1];
    if (st.spec.kind != SpecLayerKind::DwConv3 && st.spec.kind != SpecLayerKind::PwConv1) {
      continue;
    }
    ql.w.fmt = calib.weight[li];
    ql.w.shape = st.conv.w.shape();
    ql.w.q.resize(static_cast<size_t>(st.conv.w.size()));
    for (size_t i = 0; i < ql.w.q.size(); ++i) {
      ql.w.q[i] = static_cast<int32_t>(quantize_value(st.conv.w.values()[i], ql.w.fmt));
    }
    // Bias lives at accumulator precision: frac = x_frac + w_frac. The input
    // format of layer li is the previous slot's fm format (concat inputs are
    // re-quantized to the concat output format before the next conv).
    ql.bias_q.assign(static_cast<size_t>(st.conv.out_channels()), 0);
    if (st.conv.bias) {
      const int x_frac = calib.fm[li].frac_bits;
      const int acc_frac = x_frac + ql.w.fmt.frac_bits;
      for (size_t c = 0; c < ql.bias_q.size(); ++c) {
        ql.bias_q[c] = round_half_even(std::ldexp((*st.conv.bias)[c], acc_frac));
      }
    }
  }
  return qm;
}

namespace {

struct QTensor {
  FixedFormat fmt;
  Shape4 shape;
  std::vector<int32_t> q;

  int32_t at(int64_t b, int64_t c, int64_t y, int64_t x) const {
    return q[static_cast<size_t>(((b * shape.c + c) * shape.h + y) * shape.w + x)];
  }
  int32_t& at(int64_t b, int64_t c, int64_t y, int64_t x) {
    return q[static_cast<size_t>(((b * shape.c + c) * shape.h + y) * shape.w + x)];
  }
};

// Re-quantizes an accumulator (value = acc * 2^-acc_frac) into `fmt` with
// pure integer round-half-to-even, so results are bit-exact at any width.
int32_t requant(int64_t acc, int acc_frac, const FixedFormat& fmt) {
  const int shift = acc_frac - fmt.frac_bits;
  int64_t q;
  if (shift > 0) {
    const int64_t half = int64_t(1) << (shift - 1);
    const int64_t mask = (int64_t(1) << shift) - 1;
    int64_t base = acc >> shift;  // floor
    const int64_t rem = acc & mask;
    if (rem > half || (rem == half && (base & 1))) base += 1;
    q = base;
  } else {
    q = acc << (-shift);
  }
  q = std::clamp(q, fmt.qmin(), fmt.qmax());
  return static_cast<int32_t>(q);
}

// Activation applied in the accumulator domain, before the single requantize
// to the stored feature-map format. 0 disables the upper clamp (plain relu).
int64_t activate_acc(int64_t acc, int acc_frac, int64_t upper_num) {
  if (acc < 0) return 0;
  if (upper_num == 0) return acc;
  const int64_t cap = acc_frac >= 0 ? (upper_num << acc_frac) : (upper_num >> -acc_frac);
  return std::min(acc, cap);
}

QTensor requant_tensor(const QTensor& x, const FixedFormat& fmt) {
  if (x.fmt.bits == fmt.bits && x.fmt.frac_bits == fmt.frac_bits) return x;
  QTensor y;
  y.fmt = fmt;
  y.shape = x.shape;
  y.q.resize(x.q.size());
  for (size_t i = 0; i < x.q.size(); ++i) {
    y.q[i] = requant(x.q[i], x.fmt.frac_bits, fmt);
  }
  return y;
}

}  // namespace

Tensor QuantizedModel::forward(const Tensor& x) const {
  if (x.shape().c != spec_.input.c || x.shape().h != spec_.input.h ||
      x.shape().w != spec_.input.w) {
    throw std::invalid_argument("quantized forward: input " + x.shape().str() +
                                " does not match " + std::to_string(spec_.input.c) + "x" +
                                std::to_string(spec_.input.h) + "x" +
                                std::to_string(spec_.input.w));
  }
  // Quantize the input image.
  QTensor cur;
  cur.fmt = input_fmt_;
  cur.shape = x.shape();
  cur.q.resize(static_cast<size_t>(x.size()));
  for (size_t i = 0; i < cur.q.size(); ++i) {
    cur.q[i] = static_cast<int32_t>(quantize_value(x.values()[i], input_fmt_));
  }

  QTensor saved;
  for (size_t li = 0; li < spec_.layers.size(); ++li) {
    const SpecLayer& l = spec_.layers[li];
    const QLayer& ql = qlayers_[li];
    QTensor& in = l.on_bypass ? saved : cur;
    QTensor out;
    out.fmt = ql.out_fmt;

    // Convs fuse a directly following activation: the clamp happens in the
    // accumulator domain and the result is quantized once, into the
    // activation's stored format. Storing the wide pre-activation range at
    // fm_bits first would waste nearly all levels on values the clamp
    // discards.
    bool fused_act = false;
    int64_t act_upper = -1;  // -1: none, 0: relu, 6: relu6
    if (l.kind == SpecLayerKind::DwConv3 || l.kind == SpecLayerKind::PwConv1) {
      if (li + 1 < spec_.layers.size() && !spec_.layers[li + 1].on_bypass) {
        const SpecLayerKind next = spec_.layers[li + 1].kind;
        if (next == SpecLayerKind::Relu || next == SpecLayerKind::Relu6) {
          fused_act = true;
          act_upper = next == SpecLayerKind::Relu6 ? 6 : 0;
          out.fmt = qlayers_[li + 1].out_fmt;
        }
      }
    }

    switch (l.kind) {
      case SpecLayerKind::DwConv3: {
        const int acc_frac = in.fmt.frac_bits + ql.w.fmt.frac_bits;
        out.shape = in.shape;
        out.q.assign(in.q.size(), 0);
        const int64_t H = in.shape.h, W = in.shape.w;
        for (int64_t b = 0; b < in.shape.b; ++b) {
          for (int64_t c = 0; c < in.shape.c; ++c) {
            const int32_t* k = ql.w.q.data() + c * 9;
            for (int64_t i = 0; i < H; ++i) {
              for (int64_t j = 0; j < W; ++j) {
                int64_t acc = ql.bias_q[static_cast<size_t>(c)];
                for (int64_t di = -1; di <= 1; ++di) {
                  const int64_t si = i + di;
                  if (si < 0 || si >= H) continue;
                  for (int64_t dj = -1; dj <= 1; ++dj) {
                    const int64_t sj = j + dj;
                    if (sj < 0 || sj >= W) continue;
                    acc += static_cast<int64_t>(k[(di + 1) * 3 + (dj + 1)]) *
                           static_cast<int64_t>(in.at(b, c, si, sj));
                  }
                }
                if (fused_act) acc = activate_acc(acc, acc_frac, act_upper);
                out.at(b, c, i, j) = requant(acc, acc_frac, out.fmt);
              }
            }
          }
        }
        break;
      }
      case SpecLayerKind::PwConv1: {
        const int acc_frac = in.fmt.frac_bits + ql.w.fmt.frac_bits;
        out.shape = Shape4{in.shape.b, l.out_ch, in.shape.h, in.shape.w};
        out.q.assign(static_cast<size_t>(out.shape.count()), 0);
        const int64_t hw = in.shape.h * in.shape.w;
        for (int64_t b = 0; b < in.shape.b; ++b) {
          for (int64_t co = 0; co < l.out_ch; ++co) {
            const int32_t* wrow = ql.w.q.data() + co * l.in_ch;
            for (int64_t p = 0; p < hw; ++p) {
              int64_t acc = ql.bias_q[static_cast<size_t>(co)];
              for (int64_t ci = 0; ci < l.in_ch; ++ci) {
                acc += static_cast<int64_t>(wrow[ci]) *
                       static_cast<int64_t>(
                           in.q[static_cast<size_t>((b * in.shape.c + ci) * hw + p)]);
              }
              if (fused_act) acc = activate_acc(acc, acc_frac, act_upper);
              out.q[static_cast<size_t>((b * out.shape.c + co) * hw + p)] =
                  requant(acc, acc_frac, out.fmt);
            }
          }
        }
        break;
      }
      case SpecLayerKind::Relu: {
        out = requant_tensor(in, out.fmt);
        for (auto& v : out.q) v = std::max(v, 0);
        break;
      }
      case SpecLayerKind::Relu6: {
        out = requant_tensor(in, out.fmt);
        // 6.0 is exactly representable whenever frac_bits >= 0 and fits range.
        const int64_t six = std::min<int64_t>(
            out.fmt.qmax(), static_cast<int64_t>(6) << std::max(0, out.fmt.frac_bits));
        for (auto& v : out.q) v = static_cast<int32_t>(std::clamp<int64_t>(v, 0, six));
        break;
      }
      case SpecLayerKind::MaxPool2: {
        QTensor t = requant_tensor(in, out.fmt);
        out.shape = Shape4{t.shape.b, t.shape.c, t.shape.h / 2, t.shape.w / 2};
        out.q.assign(static_cast<size_t>(out.shape.count()), 0);
        for (int64_t b = 0; b < out.shape.b; ++b) {
          for (int64_t c = 0; c < out.shape.c; ++c) {
            for (int64_t i = 0; i < out.shape.h; ++i) {
              for (int64_t j = 0; j < out.shape.w; ++j) {
                const int32_t m = std::max(
                    std::max(t.at(b, c, 2 * i, 2 * j), t.at(b, c, 2 * i, 2 * j + 1)),
                    std::max(t.at(b, c, 2 * i + 1, 2 * j), t.at(b, c, 2 * i + 1, 2 * j + 1)));
                out.at(b, c, i, j) = m;
              }
            }
          }
        }
        break;
      }
      case SpecLayerKind::Reorder: {
        QTensor t = requant_tensor(in, out.fmt);
        out.shape = Shape4{t.shape.b, 4 * t.shape.c, t.shape.h / 2, t.shape.w / 2};
        out.q.assign(static_cast<size_t>(out.shape.count()), 0);
        const int64_t c0 = t.shape.c;
        for (int64_t b = 0; b < t.shape.b; ++b) {
          for (int64_t o = 0; o < 4; ++o) {
            const int64_t dy = o / 2, dx = o % 2;
            for (int64_t c = 0; c < c0; ++c) {
              for (int64_t i = 0; i < out.shape.h; ++i) {
                for (int64_t j = 0; j < out.shape.w; ++j) {
                  out.at(b, o * c0 + c, i, j) = t.at(b, c, 2 * i + dy, 2 * j + dx);
                }
              }
            }
          }
        }
        break;
      }
      case SpecLayerKind::Concat: {
        QTensor a = requant_tensor(cur, out.fmt);
        QTensor b = requant_tensor(saved, out.fmt);
        out.shape = Shape4{a.shape.b, a.shape.c + b.shape.c, a.shape.h, a.shape.w};
        out.q.resize(static_cast<size_t>(out.shape.count()));
        const int64_t hw = a.shape.h * a.shape.w;
        for (int64_t n = 0; n < a.shape.b; ++n) {
          std::copy_n(a.q.begin() + n * a.shape.c * hw, a.shape.c * hw,
                      out.q.begin() + n * out.shape.c * hw);
          std::copy_n(b.q.begin() + n * b.shape.c * hw, b.shape.c * hw,
                      out.q.begin() + n * out.shape.c * hw + a.shape.c * hw);
        }
        break;
      }
      case SpecLayerKind::Bn:
        throw std::logic_error("quantized forward: unexpected BN layer");
    }

    if (fused_act) ++li;  // the activation's output is already materialized

    if (l.on_bypass) {
      saved = std::move(out);
    } else {
      cur = std::move(out);
    }
    if (static_cast<int>(li) == spec_.bypass_source_layer) saved = cur;
  }

  // Head output is dequantized; box decoding happens in float on the host side.
  Tensor y(cur.shape);
  for (size_t i = 0; i < cur.q.size(); ++i) {
    y.values()[i] = std::ldexp(static_cast<double>(cur.q[i]), -cur.fmt.frac_bits);
  }
  return y;
}

double mean_iou_quantized(const QuantizedModel& m, const std::vector<Tensor>& images,
                          const std::vector<Box>& gts) {
  if (images.empty() || images.size() != gts.size()) {
    throw std::invalid_argument("mean_iou_quantized: need equal, non-empty lists");
  }
  double s = 0.0;
  for (size_t i = 0; i < images.size(); ++i) {
    Tensor y = m.forward(images[i]);
    DetectionBox det = detection_head_decode(y, m.anchors(), 0);
    s += iou(det.box, gts[i]);
  }
  return s / static_cast<double>(images.size());
}

}  // namespace bunas
