#include "bunas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bunas {

std::string Shape4::str() const {
  return std::to_string(b) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

Tensor::Tensor(Shape4 s) : shape_(s) {
  if (s.b < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw std::invalid_argument("tensor: every dimension must be >= 1, got " + s.str());
  }
  v_.assign(static_cast<size_t>(s.count()), 0.0);
}

Tensor Tensor::full(Shape4 s, double value) {
  Tensor t(s);
  std::fill(t.v_.begin(), t.v_.end(), value);
  return t;
}

Tensor Tensor::random_uniform(Shape4 s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  for (auto& v : t.v_) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::random_normal(Shape4 s, Rng& rng, double stddev) {
  Tensor t(s);
  for (auto& v : t.v_) v = rng.normal(0.0, stddev);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : v_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : v_) m = std::max(m, std::abs(v));
  return m;
}

Tensor Tensor::to_float32_precision() const {
  Tensor t = *this;
  for (auto& v : t.v_) v = static_cast<double>(static_cast<float>(v));
  return t;
}

// ---- parameter containers -------------------------------------------------

ConvWeights ConvWeights::depthwise(int64_t channels, bool with_bias) {
  ConvWeights cw;
  cw.kind = ConvKind::Depthwise3x3;
  cw.w = Tensor(channels, 1, 3, 3);
  if (with_bias) cw.bias = std::vector<double>(static_cast<size_t>(channels), 0.0);
  return cw;
}

ConvWeights ConvWeights::pointwise(int64_t in_ch, int64_t out_ch, bool with_bias) {
  ConvWeights cw;
  cw.kind = ConvKind::Pointwise1x1;
  cw.w = Tensor(out_ch, in_ch, 1, 1);
  if (with_bias) cw.bias = std::vector<double>(static_cast<size_t>(out_ch), 0.0);
  return cw;
}

void ConvWeights::validate() const {
  const Shape4& s = w.shape();
  if (kind == ConvKind::Depthwise3x3) {
    if (s.c != 1 || s.h != 3 || s.w != 3) {
      throw std::invalid_argument("depthwise kernel must be (C,1,3,3), got " + s.str());
    }
  } else {
    if (s.h != 1 || s.w != 1) {
      throw std::invalid_argument("pointwise kernel must be (Cout,Cin,1,1), got " + s.str());
    }
  }
  if (bias && static_cast<int64_t>(bias->size()) != out_channels()) {
    throw std::invalid_argument("conv bias length " + std::to_string(bias->size()) +
                                " does not match output channels " +
                                std::to_string(out_channels()));
  }
}

BnParams BnParams::identity(int64_t channels, double epsilon) {
  BnParams p;
  p.gamma.assign(static_cast<size_t>(channels), 1.0);
  p.beta.assign(static_cast<size_t>(channels), 0.0);
  p.running_mean.assign(static_cast<size_t>(channels), 0.0);
  p.running_var.assign(static_cast<size_t>(channels), 1.0);
  p.epsilon = epsilon;
  return p;
}

void BnParams::validate() const {
  size_t c = gamma.size();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw std::invalid_argument("bn parameter vectors must share one length");
  }
  if (epsilon <= 0) throw std::invalid_argument("bn epsilon must be > 0");
  for (double v : running_var) {
    if (v < 0) throw std::invalid_argument("bn running variance must be >= 0");
  }
}

// ---- forward kernels -------------------------------------------------------

Tensor dwconv3_forward(const Tensor& x, const ConvWeights& cw) {
  cw.validate();
  if (cw.kind != ConvKind::Depthwise3x3) {
    throw std::invalid_argument("dwconv3_forward: weights are not depthwise3x3");
  }
  const Shape4& xs = x.shape();
  if (cw.out_channels() != xs.c) {
    throw std::invalid_argument("dwconv3_forward: input " + xs.str() + " vs kernel " +
                                cw.w.shape().str() + " channel mismatch");
  }
  Tensor y(xs);
  const int64_t H = xs.h, W = xs.w;
  // Tap-major row sweep: per output element the taps still accumulate in
  // (di,dj) scan order, so results are bitwise identical to the naive nest
  // while the inner loops stay contiguous.
  for (int64_t b = 0; b < xs.b; ++b) {
    for (int64_t c = 0; c < xs.c; ++c) {
      const double* k = cw.w.data() + c * 9;
      const double bias = cw.bias ? (*cw.bias)[static_cast<size_t>(c)] : 0.0;
      const double* xin = x.data() + (b * xs.c + c) * H * W;
      double* yout = y.data() + (b * xs.c + c) * H * W;
      for (int64_t i = 0; i < H; ++i) {
        double* yrow = yout + i * W;
        for (int64_t j = 0; j < W; ++j) yrow[j] = bias;
        for (int t = 0; t < 9; ++t) {
          const int64_t di = t / 3 - 1, dj = t % 3 - 1;
          const int64_t si = i + di;
          if (si < 0 || si >= H) continue;
          const int64_t j0 = dj < 0 ? 1 : 0;
          const int64_t j1 = dj > 0 ? W - 1 : W;
          const double kv = k[t];
          const double* xrow = xin + si * W + dj;
          for (int64_t j = j0; j < j1; ++j) yrow[j] += kv * xrow[j];
        }
      }
    }
  }
  return y;
}

Tensor pwconv1_forward(const Tensor& x, const ConvWeights& cw) {
  cw.validate();
  if (cw.kind != ConvKind::Pointwise1x1) {
    throw std::invalid_argument("pwconv1_forward: weights are not pointwise1x1");
  }
  const Shape4& xs = x.shape();
  const int64_t cin = cw.in_channels(), cout = cw.out_channels();
  if (cin != xs.c) {
    throw std::invalid_argument("pwconv1_forward: input " + xs.str() + " has " +
                                std::to_string(xs.c) + " channels, kernel expects " +
                                std::to_string(cin));
  }
  Tensor y(xs.b, cout, xs.h, xs.w);
  const int64_t hw = xs.h * xs.w;
  constexpr int64_t kTile = 512;  // keep the x tile in cache across co
  for (int64_t b = 0; b < xs.b; ++b) {
    const double* xb = x.data() + b * cin * hw;
    double* yb = y.data() + b * cout * hw;
    // ci ascending keeps per-element accumulation order identical to the
    // naive loop nest, so results are bitwise reproducible; tiling over the
    // pixel axis does not change that order.
    for (int64_t p0 = 0; p0 < hw; p0 += kTile) {
      const int64_t p1 = std::min(hw, p0 + kTile);
      for (int64_t co = 0; co < cout; ++co) {
        double* yo = yb + co * hw;
        const double bias = cw.bias ? (*cw.bias)[static_cast<size_t>(co)] : 0.0;
        for (int64_t p = p0; p < p1; ++p) yo[p] = bias;
        const double* wrow = cw.w.data() + co * cin;
        int64_t ci = 0;
        // Four input channels per sweep; the per-element += sequence stays
        // ci-ascending, so outputs equal the naive nest bit for bit.
        for (; ci + 4 <= cin; ci += 4) {
          const double w0 = wrow[ci], w1 = wrow[ci + 1], w2 = wrow[ci + 2], w3 = wrow[ci + 3];
          const double* x0 = xb + ci * hw;
          const double* x1 = x0 + hw;
          const double* x2 = x1 + hw;
          const double* x3 = x2 + hw;
          for (int64_t p = p0; p < p1; ++p) {
            double acc = yo[p];
            acc += w0 * x0[p];
            acc += w1 * x1[p];
            acc += w2 * x2[p];
            acc += w3 * x3[p];
            yo[p] = acc;
          }
        }
        for (; ci < cin; ++ci) {
          const double wv = wrow[ci];
          const double* xi = xb + ci * hw;
          for (int64_t p = p0; p < p1; ++p) yo[p] += wv * xi[p];
        }
      }
    }
  }
  return y;
}

Tensor bn_forward(const Tensor& x, const BnParams& p, BnMode mode, BnBatchStats* stats_out) {
  p.validate();
  const Shape4& xs = x.shape();
  if (p.channels() != xs.c) {
    throw std::invalid_argument("bn_forward: input " + xs.str() + " vs " +
                                std::to_string(p.channels()) + " bn channels");
  }
  Tensor y(xs);
  const int64_t hw = xs.h * xs.w;
  const int64_t n = xs.b * hw;  // elements per channel

  std::vector<double> mean(static_cast<size_t>(xs.c), 0.0);
  std::vector<double> var(static_cast<size_t>(xs.c), 0.0);
  if (mode == BnMode::Train) {
    for (int64_t c = 0; c < xs.c; ++c) {
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int64_t b = 0; b < xs.b; ++b) {
        const double* xi = x.data() + (b * xs.c + c) * hw;
        int64_t p = 0;
        for (; p + 4 <= hw; p += 4) {
          s0 += xi[p];
          s1 += xi[p + 1];
          s2 += xi[p + 2];
          s3 += xi[p + 3];
        }
        for (; p < hw; ++p) s0 += xi[p];
      }
      const double m = ((s0 + s1) + (s2 + s3)) / static_cast<double>(n);
      double q0 = 0, q1 = 0, q2 = 0, q3 = 0;
      for (int64_t b = 0; b < xs.b; ++b) {
        const double* xi = x.data() + (b * xs.c + c) * hw;
        int64_t p = 0;
        for (; p + 4 <= hw; p += 4) {
          const double d0 = xi[p] - m, d1 = xi[p + 1] - m;
          const double d2 = xi[p + 2] - m, d3 = xi[p + 3] - m;
          q0 += d0 * d0;
          q1 += d1 * d1;
          q2 += d2 * d2;
          q3 += d3 * d3;
        }
        for (; p < hw; ++p) {
          const double d = xi[p] - m;
          q0 += d * d;
        }
      }
      mean[static_cast<size_t>(c)] = m;
      var[static_cast<size_t>(c)] = ((q0 + q1) + (q2 + q3)) / static_cast<double>(n);  // biased
    }
  } else {
    mean = p.running_mean;
    var = p.running_var;
  }

  for (int64_t c = 0; c < xs.c; ++c) {
    const double inv = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + p.epsilon);
    const double g = p.gamma[static_cast<size_t>(c)];
    const double be = p.beta[static_cast<size_t>(c)];
    const double m = mean[static_cast<size_t>(c)];
    for (int64_t b = 0; b < xs.b; ++b) {
      const double* xi = x.data() + (b * xs.c + c) * hw;
      double* yo = y.data() + (b * xs.c + c) * hw;
      for (int64_t ppos = 0; ppos < hw; ++ppos) yo[ppos] = (xi[ppos] - m) * inv * g + be;
    }
  }

  if (stats_out) {
    stats_out->mean = std::move(mean);
    stats_out->var = std::move(var);
  }
  return y;
}

BnParams bn_update_running(const BnParams& p, const BnBatchStats& batch, double momentum) {
  BnParams out = p;
  for (size_t c = 0; c < out.running_mean.size(); ++c) {
    out.running_mean[c] = (1.0 - momentum) * out.running_mean[c] + momentum * batch.mean[c];
    out.running_var[c] = (1.0 - momentum) * out.running_var[c] + momentum * batch.var[c];
  }
  return out;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu6_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = std::min(std::max(v, 0.0), 6.0);
  return y;
}

Tensor maxpool2_forward(const Tensor& x) {
  const Shape4& xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw std::invalid_argument("maxpool2_forward: spatial dims must be even, got " + xs.str());
  }
  Tensor y(xs.b, xs.c, xs.h / 2, xs.w / 2);
  for (int64_t b = 0; b < xs.b; ++b) {
    for (int64_t c = 0; c < xs.c; ++c) {
      for (int64_t i = 0; i < xs.h / 2; ++i) {
        for (int64_t j = 0; j < xs.w / 2; ++j) {
          const double v00 = x.at(b, c, 2 * i, 2 * j);
          const double v01 = x.at(b, c, 2 * i, 2 * j + 1);
          const double v10 = x.at(b, c, 2 * i + 1, 2 * j);
          const double v11 = x.at(b, c, 2 * i + 1, 2 * j + 1);
          y.at(b, c, i, j) = std::max(std::max(v00, v01), std::max(v10, v11));
        }
      }
    }
  }
  return y;
}

Tensor reorder_forward(const Tensor& x) {
  const Shape4& xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw std::invalid_argument("reorder_forward: spatial dims must be even, got " + xs.str());
  }
  Tensor y(xs.b, 4 * xs.c, xs.h / 2, xs.w / 2);
  for (int64_t b = 0; b < xs.b; ++b) {
    for (int64_t o = 0; o < 4; ++o) {
      const int64_t dy = o / 2, dx = o % 2;
      for (int64_t c = 0; c < xs.c; ++c) {
        for (int64_t i = 0; i < xs.h / 2; ++i) {
          for (int64_t j = 0; j < xs.w / 2; ++j) {
            y.at(b, o * xs.c + c, i, j) = x.at(b, c, 2 * i + dy, 2 * j + dx);
          }
        }
      }
    }
  }
  return y;
}

Tensor inverse_reorder(const Tensor& y) {
  const Shape4& ys = y.shape();
  if (ys.c % 4 != 0) {
    throw std::invalid_argument("inverse_reorder: channels must be divisible by 4, got " +
                                ys.str());
  }
  const int64_t c0 = ys.c / 4;
  Tensor x(ys.b, c0, ys.h * 2, ys.w * 2);
  for (int64_t b = 0; b < ys.b; ++b) {
    for (int64_t o = 0; o < 4; ++o) {
      const int64_t dy = o / 2, dx = o % 2;
      for (int64_t c = 0; c < c0; ++c) {
        for (int64_t i = 0; i < ys.h; ++i) {
          for (int64_t j = 0; j < ys.w; ++j) {
            x.at(b, c, 2 * i + dy, 2 * j + dx) = y.at(b, o * c0 + c, i, j);
          }
        }
      }
    }
  }
  return x;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape4& as = a.shape();
  const Shape4& bs = b.shape();
  if (as.b != bs.b || as.h != bs.h || as.w != bs.w) {
    throw std::invalid_argument("concat_channels: " + as.str() + " and " + bs.str() +
                                " differ outside the channel dim");
  }
  Tensor y(as.b, as.c + bs.c, as.h, as.w);
  const int64_t hw = as.h * as.w;
  for (int64_t n = 0; n < as.b; ++n) {
    double* dst = y.data() + n * (as.c + bs.c) * hw;
    std::copy_n(a.data() + n * as.c * hw, as.c * hw, dst);
    std::copy_n(b.data() + n * bs.c * hw, bs.c * hw, dst + as.c * hw);
  }
  return y;
}

Tensor slice_channels(const Tensor& x, int64_t c_begin, int64_t c_end) {
  const Shape4& xs = x.shape();
  if (c_begin < 0 || c_end > xs.c || c_begin >= c_end) {
    throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c_begin) + "," +
                                std::to_string(c_end) + ") for " + xs.str());
  }
  Tensor y(xs.b, c_end - c_begin, xs.h, xs.w);
  const int64_t hw = xs.h * xs.w;
  for (int64_t n = 0; n < xs.b; ++n) {
    std::copy_n(x.data() + (n * xs.c + c_begin) * hw, (c_end - c_begin) * hw,
                y.data() + n * (c_end - c_begin) * hw);
  }
  return y;
}

// ---- detection head --------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Box decode_cell(const Tensor& y, int64_t b, int64_t cy, int64_t cx, int64_t anchor,
                const AnchorPrior& prior) {
  const Shape4& ys = y.shape();
  const int64_t base = anchor * 5;
  const double tx = y.at(b, base + 0, cy, cx);
  const double ty = y.at(b, base + 1, cy, cx);
  const double tw = y.at(b, base + 2, cy, cx);
  const double th = y.at(b, base + 3, cy, cx);
  const double bx = (static_cast<double>(cx) + sigmoid(tx)) / static_cast<double>(ys.w);
  const double by = (static_cast<double>(cy) + sigmoid(ty)) / static_cast<double>(ys.h);
  const double bw = prior.w * std::exp(tw);
  const double bh = prior.h * std::exp(th);
  Box box{bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2};
  box.x_min = std::clamp(box.x_min, 0.0, 1.0);
  box.y_min = std::clamp(box.y_min, 0.0, 1.0);
  box.x_max = std::clamp(box.x_max, 0.0, 1.0);
  box.y_max = std::clamp(box.y_max, 0.0, 1.0);
  return box;
}

DetectionBox detection_head_decode(const Tensor& y, const std::array<AnchorPrior, 2>& anchors,
                                   int64_t b) {
  const Shape4& ys = y.shape();
  if (ys.c != 10) {
    throw std::invalid_argument("detection_head_decode: head needs 10 channels, got " + ys.str());
  }
  double best = -std::numeric_limits<double>::infinity();
  int64_t by = 0, bx = 0, ba = 0;
  for (int64_t i = 0; i < ys.h; ++i) {
    for (int64_t j = 0; j < ys.w; ++j) {
      for (int64_t a = 0; a < 2; ++a) {
        const double obj = y.at(b, a * 5 + 4, i, j);
        if (obj > best) {
          best = obj;
          by = i;
          bx = j;
          ba = a;
        }
      }
    }
  }
  DetectionBox out;
  out.box = decode_cell(y, b, by, bx, ba, anchors[static_cast<size_t>(ba)]);
  out.objectness = sigmoid(best);
  out.batch = b;
  out.cell_y = by;
  out.cell_x = bx;
  out.anchor = ba;
  return out;
}

// ---- backward kernels -------------------------------------------------------

ConvGrads dwconv3_backward(const Tensor& x, const ConvWeights& cw, const Tensor& dy) {
  const Shape4& xs = x.shape();
  if (!(dy.shape() == xs)) {
    throw std::invalid_argument("dwconv3_backward: dy " + dy.shape().str() + " vs x " + xs.str());
  }
  ConvGrads g;
  g.dw = Tensor(cw.w.shape());
  g.dx = Tensor(xs);
  if (cw.bias) g.dbias.assign(cw.bias->size(), 0.0);
  const int64_t H = xs.h, W = xs.w;
  for (int64_t b = 0; b < xs.b; ++b) {
    for (int64_t c = 0; c < xs.c; ++c) {
      const double* k = cw.w.data() + c * 9;
      double* dk = g.dw.data() + c * 9;
      const double* xin = x.data() + (b * xs.c + c) * H * W;
      const double* dyo = dy.data() + (b * xs.c + c) * H * W;
      double* dxi = g.dx.data() + (b * xs.c + c) * H * W;
      if (cw.bias) {
        double s = 0.0;
        for (int64_t p = 0; p < H * W; ++p) s += dyo[p];
        g.dbias[static_cast<size_t>(c)] += s;
      }
      for (int64_t i = 0; i < H; ++i) {
        const double* drow = dyo + i * W;
        for (int t = 0; t < 9; ++t) {
          const int64_t di = t / 3 - 1, dj = t % 3 - 1;
          const int64_t si = i + di;
          if (si < 0 || si >= H) continue;
          const int64_t j0 = dj < 0 ? 1 : 0;
          const int64_t j1 = dj > 0 ? W - 1 : W;
          const double* xrow = xin + si * W + dj;
          double* dxrow = dxi + si * W + dj;
          const double kv = k[t];
          double s = 0.0;
          for (int64_t j = j0; j < j1; ++j) {
            s += drow[j] * xrow[j];
            dxrow[j] += kv * drow[j];
          }
          dk[t] += s;
        }
      }
    }
  }
  return g;
}

ConvGrads pwconv1_backward(const Tensor& x, const ConvWeights& cw, const Tensor& dy) {
  const Shape4& xs = x.shape();
  const int64_t cin = cw.in_channels(), cout = cw.out_channels();
  if (dy.shape().c != cout || dy.shape().b != xs.b || dy.shape().h != xs.h ||
      dy.shape().w != xs.w) {
    throw std::invalid_argument("pwconv1_backward: dy " + dy.shape().str() + " vs x " + xs.str());
  }
  ConvGrads g;
  g.dw = Tensor(cw.w.shape());
  g.dx = Tensor(xs);
  if (cw.bias) g.dbias.assign(cw.bias->size(), 0.0);
  const int64_t hw = xs.h * xs.w;
  // Gradients tolerate any fixed summation order, so both passes use blocked
  // sweeps that cut memory traffic; order is deterministic run to run.
  for (int64_t b = 0; b < xs.b; ++b) {
    const double* xb = x.data() + b * cin * hw;
    const double* dyb = dy.data() + b * cout * hw;
    double* dxb = g.dx.data() + b * cin * hw;

    if (cw.bias) {
      for (int64_t co = 0; co < cout; ++co) {
        const double* dyo = dyb + co * hw;
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        int64_t p = 0;
        for (; p + 4 <= hw; p += 4) {
          s0 += dyo[p];
          s1 += dyo[p + 1];
          s2 += dyo[p + 2];
          s3 += dyo[p + 3];
        }
        double s = (s0 + s1) + (s2 + s3);
        for (; p < hw; ++p) s += dyo[p];
        g.dbias[static_cast<size_t>(co)] += s;
      }
    }

    // dx[ci] += sum_co w[co][ci] * dy[co], four output channels per sweep.
    for (int64_t ci = 0; ci < cin; ++ci) {
      double* dxi = dxb + ci * hw;
      int64_t co = 0;
      for (; co + 4 <= cout; co += 4) {
        const double w0 = cw.w.data()[co * cin + ci];
        const double w1 = cw.w.data()[(co + 1) * cin + ci];
        const double w2 = cw.w.data()[(co + 2) * cin + ci];
        const double w3 = cw.w.data()[(co + 3) * cin + ci];
        const double* d0 = dyb + co * hw;
        const double* d1 = d0 + hw;
        const double* d2 = d1 + hw;
        const double* d3 = d2 + hw;
        for (int64_t p = 0; p < hw; ++p) {
          dxi[p] += w0 * d0[p] + w1 * d1[p] + w2 * d2[p] + w3 * d3[p];
        }
      }
      for (; co < cout; ++co) {
        const double wv = cw.w.data()[co * cin + ci];
        const double* dyo = dyb + co * hw;
        for (int64_t p = 0; p < hw; ++p) dxi[p] += wv * dyo[p];
      }
    }

    // dw[co][ci] += dot(dy[co], x[ci]), four input channels per sweep.
    for (int64_t co = 0; co < cout; ++co) {
      const double* dyo = dyb + co * hw;
      double* dwrow = g.dw.data() + co * cin;
      int64_t ci = 0;
      for (; ci + 4 <= cin; ci += 4) {
        const double* x0 = xb + ci * hw;
        const double* x1 = x0 + hw;
        const double* x2 = x1 + hw;
        const double* x3 = x2 + hw;
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        for (int64_t p = 0; p < hw; ++p) {
          s0 += dyo[p] * x0[p];
          s1 += dyo[p] * x1[p];
          s2 += dyo[p] * x2[p];
          s3 += dyo[p] * x3[p];
        }
        dwrow[ci] += s0;
        dwrow[ci + 1] += s1;
        dwrow[ci + 2] += s2;
        dwrow[ci + 3] += s3;
      }
      for (; ci < cin; ++ci) {
        const double* xi = xb + ci * hw;
        double s = 0;
        for (int64_t p = 0; p < hw; ++p) s += dyo[p] * xi[p];
        dwrow[ci] += s;
      }
    }
  }
  return g;
}

BnGrads bn_backward_infer(const Tensor& x, const BnParams& p, const Tensor& dy) {
  const Shape4& xs = x.shape();
  BnGrads g;
  g.dgamma.assign(static_cast<size_t>(xs.c), 0.0);
  g.dbeta.assign(static_cast<size_t>(xs.c), 0.0);
  g.dx = Tensor(xs);
  const int64_t hw = xs.h * xs.w;
  for (int64_t c = 0; c < xs.c; ++c) {
    const double inv = 1.0 / std::sqrt(p.running_var[static_cast<size_t>(c)] + p.epsilon);
    const double m = p.running_mean[static_cast<size_t>(c)];
    const double ga = p.gamma[static_cast<size_t>(c)];
    double dg = 0.0, db = 0.0;
    for (int64_t b = 0; b < xs.b; ++b) {
      const double* xi = x.data() + (b * xs.c + c) * hw;
      const double* dyo = dy.data() + (b * xs.c + c) * hw;
      double* dxi = g.dx.data() + (b * xs.c + c) * hw;
      for (int64_t ppos = 0; ppos < hw; ++ppos) {
        dg += dyo[ppos] * (xi[ppos] - m) * inv;
        db += dyo[ppos];
        dxi[ppos] = dyo[ppos] * ga * inv;
      }
    }
    g.dgamma[static_cast<size_t>(c)] = dg;
    g.dbeta[static_cast<size_t>(c)] = db;
  }
  return g;
}

BnGrads bn_backward_train(const Tensor& x, const BnParams& p, const BnBatchStats& stats,
                          const Tensor& dy) {
  const Shape4& xs = x.shape();
  BnGrads g;
  g.dgamma.assign(static_cast<size_t>(xs.c), 0.0);
  g.dbeta.assign(static_cast<size_t>(xs.c), 0.0);
  g.dx = Tensor(xs);
  const int64_t hw = xs.h * xs.w;
  const double n = static_cast<double>(xs.b * hw);
  for (int64_t c = 0; c < xs.c; ++c) {
    const double m = stats.mean[static_cast<size_t>(c)];
    const double v = stats.var[static_cast<size_t>(c)];
    const double inv = 1.0 / std::sqrt(v + p.epsilon);
    const double ga = p.gamma[static_cast<size_t>(c)];
    double dg0 = 0, dg1 = 0, db0 = 0, db1 = 0, dxs0 = 0, dxs1 = 0, dxx0 = 0, dxx1 = 0;
    for (int64_t b = 0; b < xs.b; ++b) {
      const double* xi = x.data() + (b * xs.c + c) * hw;
      const double* dyo = dy.data() + (b * xs.c + c) * hw;
      int64_t ppos = 0;
      for (; ppos + 2 <= hw; ppos += 2) {
        const double xhat_a = (xi[ppos] - m) * inv;
        const double xhat_b = (xi[ppos + 1] - m) * inv;
        dg0 += dyo[ppos] * xhat_a;
        dg1 += dyo[ppos + 1] * xhat_b;
        db0 += dyo[ppos];
        db1 += dyo[ppos + 1];
        dxs0 += dyo[ppos] * ga;
        dxs1 += dyo[ppos + 1] * ga;
        dxx0 += dyo[ppos] * ga * xhat_a;
        dxx1 += dyo[ppos + 1] * ga * xhat_b;
      }
      for (; ppos < hw; ++ppos) {
        const double xhat = (xi[ppos] - m) * inv;
        dg0 += dyo[ppos] * xhat;
        db0 += dyo[ppos];
        dxs0 += dyo[ppos] * ga;
        dxx0 += dyo[ppos] * ga * xhat;
      }
    }
    const double dg = dg0 + dg1, db = db0 + db1;
    const double dxhat_sum = dxs0 + dxs1, dxhat_xhat_sum = dxx0 + dxx1;
    for (int64_t b = 0; b < xs.b; ++b) {
      const double* xi = x.data() + (b * xs.c + c) * hw;
      const double* dyo = dy.data() + (b * xs.c + c) * hw;
      double* dxi = g.dx.data() + (b * xs.c + c) * hw;
      for (int64_t ppos = 0; ppos < hw; ++ppos) {
        const double xhat = (xi[ppos] - m) * inv;
        const double dxhat = dyo[ppos] * ga;
        dxi[ppos] = inv * (dxhat - dxhat_sum / n - xhat * dxhat_xhat_sum / n);
      }
    }
    g.dgamma[static_cast<size_t>(c)] = dg;
    g.dbeta[static_cast<size_t>(c)] = db;
  }
  return g;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  const auto& xv = x.values();
  auto& ov = dx.values();
  for (size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] <= 0.0) ov[i] = 0.0;
  }
  return dx;
}

Tensor relu6_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  const auto& xv = x.values();
  auto& ov = dx.values();
  for (size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] <= 0.0 || xv[i] >= 6.0) ov[i] = 0.0;
  }
  return dx;
}

Tensor maxpool2_backward(const Tensor& x, const Tensor& dy) {
  const Shape4& xs = x.shape();
  Tensor dx(xs);
  for (int64_t b = 0; b < xs.b; ++b) {
    for (int64_t c = 0; c < xs.c; ++c) {
      for (int64_t i = 0; i < xs.h / 2; ++i) {
        for (int64_t j = 0; j < xs.w / 2; ++j) {
          // Route the gradient to the first maximum in window scan order.
          int64_t my = 2 * i, mx = 2 * j;
          double mv = x.at(b, c, my, mx);
          for (int64_t di = 0; di < 2; ++di) {
            for (int64_t dj = 0; dj < 2; ++dj) {
              const double v = x.at(b, c, 2 * i + di, 2 * j + dj);
              if (v > mv) {
                mv = v;
                my = 2 * i + di;
                mx = 2 * j + dj;
              }
            }
          }
          dx.at(b, c, my, mx) += dy.at(b, c, i, j);
        }
      }
    }
  }
  return dx;
}

// ---- optimizer ---------------------------------------------------------------

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              const SgdOptions& opt, std::vector<double>* velocity) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("sgd_step: params/grads length mismatch");
  }
  if (opt.lr <= 0) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (opt.momentum != 0.0) {
    if (!velocity) throw std::invalid_argument("sgd_step: momentum requires a velocity buffer");
    if (velocity->empty()) velocity->assign(params.size(), 0.0);
    for (size_t i = 0; i < params.size(); ++i) {
      (*velocity)[i] = opt.momentum * (*velocity)[i] + grads[i];
      params[i] -= opt.lr * (*velocity)[i];
    }
  } else {
    for (size_t i = 0; i < params.size(); ++i) params[i] -= opt.lr * grads[i];
  }
}

}  // namespace bunas
