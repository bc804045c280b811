#include "bunas/model.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace bunas {

Model::Model(NetworkSpec spec, std::array<AnchorPrior, 2> anchors)
    : spec_(std::move(spec)), anchors_(anchors) {
  layers_.reserve(spec_.layers.size());
  for (const SpecLayer& l : spec_.layers) {
    LayerState st;
    st.spec = l;
    switch (l.kind) {
      case SpecLayerKind::DwConv3:
        st.conv = ConvWeights::depthwise(l.out_ch, l.has_bias);
        st.conv_grad = Tensor(st.conv.w.shape());
        if (l.has_bias) st.bias_grad.assign(static_cast<size_t>(l.out_ch), 0.0);
        break;
      case SpecLayerKind::PwConv1:
        st.conv = ConvWeights::pointwise(l.in_ch, l.out_ch, l.has_bias);
        st.conv_grad = Tensor(st.conv.w.shape());
        if (l.has_bias) st.bias_grad.assign(static_cast<size_t>(l.out_ch), 0.0);
        break;
      case SpecLayerKind::Bn:
        // 1e-3 keeps tiny-batch statistics stable and bounds the weight
        // amplification when the layer is later folded into its conv
        // (a dead channel's variance otherwise explodes the folded range).
        st.bn = BnParams::identity(l.out_ch, 1e-3);
        st.bn_gamma_grad.assign(static_cast<size_t>(l.out_ch), 0.0);
        st.bn_beta_grad.assign(static_cast<size_t>(l.out_ch), 0.0);
        break;
      default:
        break;
    }
    layers_.push_back(std::move(st));
  }
}

void Model::init_weights(Rng& rng) {
  for (LayerState& st : layers_) {
    switch (st.spec.kind) {
      case SpecLayerKind::DwConv3: {
        const double stddev = std::sqrt(2.0 / 9.0);
        st.conv.w = Tensor::random_normal(st.conv.w.shape(), rng, stddev);
        if (st.conv.bias) std::fill(st.conv.bias->begin(), st.conv.bias->end(), 0.0);
        break;
      }
      case SpecLayerKind::PwConv1: {
        const double fan_in = static_cast<double>(st.spec.in_ch);
        const double stddev = std::sqrt(2.0 / fan_in);
        st.conv.w = Tensor::random_normal(st.conv.w.shape(), rng, stddev);
        if (st.conv.bias) std::fill(st.conv.bias->begin(), st.conv.bias->end(), 0.0);
        break;
      }
      case SpecLayerKind::Bn:
        st.bn = BnParams::identity(st.spec.out_ch, st.bn.epsilon);  // keeps epsilon
        break;
      default:
        break;
    }
  }
}

bool Model::folded() const {
  for (const LayerState& st : layers_) {
    if (st.spec.kind == SpecLayerKind::Bn) return false;
  }
  return true;
}

Tensor Model::forward(const Tensor& x) const {
  if (x.shape().c != spec_.input.c || x.shape().h != spec_.input.h ||
      x.shape().w != spec_.input.w) {
    throw std::invalid_argument("model forward: input " + x.shape().str() + " does not match spec " +
                                std::to_string(spec_.input.c) + "x" +
                                std::to_string(spec_.input.h) + "x" +
                                std::to_string(spec_.input.w));
  }
  Tensor cur = x;
  Tensor saved;
  for (const LayerState& st : layers_) {
    switch (st.spec.kind) {
      case SpecLayerKind::DwConv3: cur = dwconv3_forward(cur, st.conv); break;
      case SpecLayerKind::PwConv1: cur = pwconv1_forward(cur, st.conv); break;
      case SpecLayerKind::Bn: cur = bn_forward(cur, st.bn, BnMode::Infer); break;
      case SpecLayerKind::Relu: cur = relu_forward(cur); break;
      case SpecLayerKind::Relu6: cur = relu6_forward(cur); break;
      case SpecLayerKind::MaxPool2: cur = maxpool2_forward(cur); break;
      case SpecLayerKind::Reorder:
        saved = reorder_forward(saved);
        continue;
      case SpecLayerKind::Concat:
        cur = concat_channels(cur, saved);
        break;
    }
    if (static_cast<int>(&st - layers_.data()) == spec_.bypass_source_layer) saved = cur;
  }
  return cur;
}

Tensor Model::forward_train(const Tensor& x, GradTape& tape, int& head_value_id,
                            double bn_momentum) {
  using TensorPtr = std::shared_ptr<const Tensor>;
  TensorPtr cur = std::make_shared<Tensor>(x);
  int cur_id = tape.new_value();
  TensorPtr saved;
  int saved_id = -1;

  for (size_t li = 0; li < layers_.size(); ++li) {
    LayerState& st = layers_[li];
    const int in_id = st.spec.on_bypass ? saved_id : cur_id;
    const TensorPtr in = st.spec.on_bypass ? saved : cur;
    Tensor out;
    const int out_id = tape.new_value();

    switch (st.spec.kind) {
      case SpecLayerKind::DwConv3: {
        out = dwconv3_forward(*in, st.conv);
        LayerState* stp = &st;
        tape.record({in_id}, out_id, [stp, in](const Tensor& dy) {
          ConvGrads g = dwconv3_backward(*in, stp->conv, dy);
          auto& acc = stp->conv_grad.values();
          const auto& add = g.dw.values();
          for (size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
          for (size_t i = 0; i < g.dbias.size(); ++i) stp->bias_grad[i] += g.dbias[i];
          return std::vector<Tensor>{std::move(g.dx)};
        });
        break;
      }
      case SpecLayerKind::PwConv1: {
        out = pwconv1_forward(*in, st.conv);
        LayerState* stp = &st;
        tape.record({in_id}, out_id, [stp, in](const Tensor& dy) {
          ConvGrads g = pwconv1_backward(*in, stp->conv, dy);
          auto& acc = stp->conv_grad.values();
          const auto& add = g.dw.values();
          for (size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
          for (size_t i = 0; i < g.dbias.size(); ++i) stp->bias_grad[i] += g.dbias[i];
          return std::vector<Tensor>{std::move(g.dx)};
        });
        break;
      }
      case SpecLayerKind::Bn: {
        BnBatchStats stats;
        out = bn_forward(*in, st.bn, BnMode::Train, &stats);
        st.bn = bn_update_running(st.bn, stats, bn_momentum);
        LayerState* stp = &st;
        tape.record({in_id}, out_id, [stp, in, stats](const Tensor& dy) {
          BnGrads g = bn_backward_train(*in, stp->bn, stats, dy);
          for (size_t i = 0; i < g.dgamma.size(); ++i) {
            stp->bn_gamma_grad[i] += g.dgamma[i];
            stp->bn_beta_grad[i] += g.dbeta[i];
          }
          return std::vector<Tensor>{std::move(g.dx)};
        });
        break;
      }
      case SpecLayerKind::Relu: {
        out = relu_forward(*in);
        tape.record({in_id}, out_id, [in](const Tensor& dy) {
          return std::vector<Tensor>{relu_backward(*in, dy)};
        });
        break;
      }
      case SpecLayerKind::Relu6: {
        out = relu6_forward(*in);
        tape.record({in_id}, out_id, [in](const Tensor& dy) {
          return std::vector<Tensor>{relu6_backward(*in, dy)};
        });
        break;
      }
      case SpecLayerKind::MaxPool2: {
        out = maxpool2_forward(*in);
        tape.record({in_id}, out_id, [in](const Tensor& dy) {
          return std::vector<Tensor>{maxpool2_backward(*in, dy)};
        });
        break;
      }
      case SpecLayerKind::Reorder: {
        out = reorder_forward(*in);
        tape.record({in_id}, out_id, [](const Tensor& dy) {
          return std::vector<Tensor>{inverse_reorder(dy)};
        });
        break;
      }
      case SpecLayerKind::Concat: {
        out = concat_channels(*cur, *saved);
        const int64_t main_c = cur->shape().c;
        tape.record({cur_id, saved_id}, out_id, [main_c](const Tensor& dy) {
          std::vector<Tensor> dxs;
          dxs.push_back(slice_channels(dy, 0, main_c));
          dxs.push_back(slice_channels(dy, main_c, dy.shape().c));
          return dxs;
        });
        break;
      }
    }

    TensorPtr out_sp = std::make_shared<Tensor>(std::move(out));
    if (st.spec.on_bypass) {
      saved = out_sp;
      saved_id = out_id;
    } else {
      cur = out_sp;
      cur_id = out_id;
    }
    if (static_cast<int>(li) == spec_.bypass_source_layer) {
      saved = cur;
      saved_id = cur_id;
    }
  }

  head_value_id = cur_id;
  return *cur;
}

Tensor Model::backward(const GradTape& tape, int head_value_id, const Tensor& dhead) {
  auto grads = tape.backward(head_value_id, dhead, {0});
  auto it = grads.find(0);
  if (it == grads.end()) return Tensor();  // input unreachable (cannot happen for a chain)
  return std::move(it->second);
}

void Model::zero_grads() {
  for (LayerState& st : layers_) {
    if (st.conv_grad.size() > 0) {
      std::fill(st.conv_grad.values().begin(), st.conv_grad.values().end(), 0.0);
    }
    std::fill(st.bias_grad.begin(), st.bias_grad.end(), 0.0);
    std::fill(st.bn_gamma_grad.begin(), st.bn_gamma_grad.end(), 0.0);
    std::fill(st.bn_beta_grad.begin(), st.bn_beta_grad.end(), 0.0);
  }
}

double Model::grad_norm() const {
  double s = 0.0;
  for (const LayerState& st : layers_) {
    for (double v : st.conv_grad.values()) s += v * v;
    for (double v : st.bias_grad) s += v * v;
    for (double v : st.bn_gamma_grad) s += v * v;
    for (double v : st.bn_beta_grad) s += v * v;
  }
  return std::sqrt(s);
}

void Model::scale_grads(double factor) {
  for (LayerState& st : layers_) {
    for (double& v : st.conv_grad.values()) v *= factor;
    for (double& v : st.bias_grad) v *= factor;
    for (double& v : st.bn_gamma_grad) v *= factor;
    for (double& v : st.bn_beta_grad) v *= factor;
  }
}

void Model::sgd_update(const SgdOptions& opt) {
  for (LayerState& st : layers_) {
    switch (st.spec.kind) {
      case SpecLayerKind::DwConv3:
      case SpecLayerKind::PwConv1:
        sgd_step(st.conv.w.values(), st.conv_grad.values(), opt, &st.vel_w);
        if (st.conv.bias) sgd_step(*st.conv.bias, st.bias_grad, opt, &st.vel_b);
        break;
      case SpecLayerKind::Bn:
        sgd_step(st.bn.gamma, st.bn_gamma_grad, opt, &st.vel_gamma);
        sgd_step(st.bn.beta, st.bn_beta_grad, opt, &st.vel_beta);
        break;
      default:
        break;
    }
  }
}

// ---- detection loss -----------------------------------------------------------

std::pair<double, Tensor> detection_loss(const Tensor& head, const std::vector<Box>& gt,
                                         const std::array<AnchorPrior, 2>& anchors,
                                         const LossWeights& lw) {
  const Shape4& hs = head.shape();
  if (hs.c != 10) throw std::invalid_argument("detection_loss: head needs 10 channels");
  if (static_cast<int64_t>(gt.size()) != hs.b) {
    throw std::invalid_argument("detection_loss: one gt box per batch item required");
  }
  Tensor dhead(hs);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(hs.b);

  for (int64_t b = 0; b < hs.b; ++b) {
    const Box& g = gt[static_cast<size_t>(b)];
    const double gw = std::max(1e-6, g.x_max - g.x_min);
    const double gh = std::max(1e-6, g.y_max - g.y_min);
    const double gcx = (g.x_min + g.x_max) / 2.0;
    const double gcy = (g.y_min + g.y_max) / 2.0;
    int64_t cell_x = std::min(hs.w - 1, static_cast<int64_t>(gcx * static_cast<double>(hs.w)));
    int64_t cell_y = std::min(hs.h - 1, static_cast<int64_t>(gcy * static_cast<double>(hs.h)));
    cell_x = std::max<int64_t>(0, cell_x);
    cell_y = std::max<int64_t>(0, cell_y);
    const double off_x = gcx * static_cast<double>(hs.w) - static_cast<double>(cell_x);
    const double off_y = gcy * static_cast<double>(hs.h) - static_cast<double>(cell_y);

    // Responsible anchor: larger shape-IoU against the gt box (centers aligned).
    double best_siou = -1.0;
    int64_t resp = 0;
    for (int64_t a = 0; a < 2; ++a) {
      const double aw = anchors[static_cast<size_t>(a)].w;
      const double ah = anchors[static_cast<size_t>(a)].h;
      const double inter = std::min(aw, gw) * std::min(ah, gh);
      const double uni = aw * ah + gw * gh - inter;
      const double siou = inter / uni;
      if (siou > best_siou) {
        best_siou = siou;
        resp = a;
      }
    }

    for (int64_t cy = 0; cy < hs.h; ++cy) {
      for (int64_t cx = 0; cx < hs.w; ++cx) {
        for (int64_t a = 0; a < 2; ++a) {
          const bool responsible = (cy == cell_y && cx == cell_x && a == resp);
          const int64_t base = a * 5;
          const double obj_z = head.at(b, base + 4, cy, cx);
          // Stable BCE with logits; gradient is sigmoid(z) - target.
          const double target = responsible ? 1.0 : 0.0;
          const double bce = std::max(obj_z, 0.0) - obj_z * target +
                             std::log1p(std::exp(-std::abs(obj_z)));
          const double wobj = responsible ? lw.obj : lw.noobj;
          loss += wobj * bce * inv_b;
          dhead.at(b, base + 4, cy, cx) += wobj * (sigmoid(obj_z) - target) * inv_b;

          if (!responsible) continue;

          const AnchorPrior& prior = anchors[static_cast<size_t>(a)];
          const double tx = head.at(b, base + 0, cy, cx);
          const double ty = head.at(b, base + 1, cy, cx);
          const double tw = head.at(b, base + 2, cy, cx);
          const double th = head.at(b, base + 3, cy, cx);
          const double sx = sigmoid(tx);
          const double sy = sigmoid(ty);
          const double pw = prior.w * std::exp(tw);
          const double ph = prior.h * std::exp(th);
          const double rw = std::sqrt(pw) - std::sqrt(gw);
          const double rh = std::sqrt(ph) - std::sqrt(gh);

          loss += lw.coord *
                  ((sx - off_x) * (sx - off_x) + (sy - off_y) * (sy - off_y) + rw * rw +
                   rh * rh) *
                  inv_b;
          dhead.at(b, base + 0, cy, cx) +=
              lw.coord * 2.0 * (sx - off_x) * sx * (1.0 - sx) * inv_b;
          dhead.at(b, base + 1, cy, cx) +=
              lw.coord * 2.0 * (sy - off_y) * sy * (1.0 - sy) * inv_b;
          // d sqrt(p*e^t)/dt = sqrt(p*e^t)/2
          dhead.at(b, base + 2, cy, cx) += lw.coord * 2.0 * rw * std::sqrt(pw) * 0.5 * inv_b;
          dhead.at(b, base + 3, cy, cx) += lw.coord * 2.0 * rh * std::sqrt(ph) * 0.5 * inv_b;
        }
      }
    }
  }
  return {loss, std::move(dhead)};
}

double mean_iou(const Model& m, const std::vector<Tensor>& images, const std::vector<Box>& gts) {
  if (images.empty() || images.size() != gts.size()) {
    throw std::invalid_argument("mean_iou: need equal, non-empty image/gt lists");
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
