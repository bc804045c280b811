// Naive reference implementations used as independent oracles. These stay
// deliberately dumb (full loop nests, no layout tricks) and are never shared
// with the library code under test.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bunas/tensor.hpp"

namespace oracles {

using bunas::ConvWeights;
using bunas::Shape4;
using bunas::Tensor;

inline Tensor naive_dwconv3(const Tensor& x, const ConvWeights& cw) {
  const Shape4 s = x.shape();
  Tensor y(s);
  for (int64_t b = 0; b < s.b; ++b)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t i = 0; i < s.h; ++i)
        for (int64_t j = 0; j < s.w; ++j) {
          double acc = cw.bias ? (*cw.bias)[size_t(c)] : 0.0;
          for (int64_t ki = 0; ki < 3; ++ki)
            for (int64_t kj = 0; kj < 3; ++kj) {
              const int64_t si = i + ki - 1, sj = j + kj - 1;
              if (si < 0 || si >= s.h || sj < 0 || sj >= s.w) continue;
              acc += cw.w.at(c, 0, ki, kj) * x.at(b, c, si, sj);
            }
          y.at(b, c, i, j) = acc;
        }
  return y;
}

inline Tensor naive_pwconv1(const Tensor& x, const ConvWeights& cw) {
  const Shape4 s = x.shape();
  const int64_t cout = cw.w.shape().b;
  Tensor y(s.b, cout, s.h, s.w);
  for (int64_t b = 0; b < s.b; ++b)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t i = 0; i < s.h; ++i)
        for (int64_t j = 0; j < s.w; ++j) {
          double acc = cw.bias ? (*cw.bias)[size_t(co)] : 0.0;
          for (int64_t ci = 0; ci < s.c; ++ci) acc += cw.w.at(co, ci, 0, 0) * x.at(b, ci, i, j);
          y.at(b, co, i, j) = acc;
        }
  return y;
}

inline Tensor naive_bn_infer(const Tensor& x, const bunas::BnParams& p) {
  const Shape4 s = x.shape();
  Tensor y(s);
  for (int64_t b = 0; b < s.b; ++b)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t i = 0; i < s.h; ++i)
        for (int64_t j = 0; j < s.w; ++j) {
          y.at(b, c, i, j) = (x.at(b, c, i, j) - p.running_mean[size_t(c)]) /
                                 std::sqrt(p.running_var[size_t(c)] + p.epsilon) *
                                 p.gamma[size_t(c)] +
                             p.beta[size_t(c)];
        }
  return y;
}

inline Tensor naive_maxpool2(const Tensor& x) {
  const Shape4 s = x.shape();
  Tensor y(s.b, s.c, s.h / 2, s.w / 2);
  for (int64_t b = 0; b < s.b; ++b)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t i = 0; i < s.h / 2; ++i)
        for (int64_t j = 0; j < s.w / 2; ++j) {
          double m = x.at(b, c, 2 * i, 2 * j);
          for (int64_t di = 0; di < 2; ++di)
            for (int64_t dj = 0; dj < 2; ++dj) m = std::max(m, x.at(b, c, 2 * i + di, 2 * j + dj));
          y.at(b, c, i, j) = m;
        }
  return y;
}

// Index-arithmetic oracle for channel concatenation.
inline bool concat_matches(const Tensor& a, const Tensor& b, const Tensor& y) {
  const Shape4 as = a.shape(), bs = b.shape();
  for (int64_t n = 0; n < as.b; ++n) {
    for (int64_t c = 0; c < as.c + bs.c; ++c)
      for (int64_t i = 0; i < as.h; ++i)
        for (int64_t j = 0; j < as.w; ++j) {
          const double expect = c < as.c ? a.at(n, c, i, j) : b.at(n, c - as.c, i, j);
          if (y.at(n, c, i, j) != expect) return false;
        }
  }
  return true;
}

// Brute-force full-grid decode + argmax for the detection head.
inline bunas::DetectionBox naive_head_decode(const Tensor& y,
                                             const std::array<bunas::AnchorPrior, 2>& anchors,
                                             int64_t b) {
  const Shape4 s = y.shape();
  bunas::DetectionBox best;
  double best_obj = -1e300;
  for (int64_t i = 0; i < s.h; ++i)
    for (int64_t j = 0; j < s.w; ++j)
      for (int64_t a = 0; a < 2; ++a) {
        const double obj = y.at(b, a * 5 + 4, i, j);
        if (obj <= best_obj) continue;
        best_obj = obj;
        const double bx = (double(j) + bunas::sigmoid(y.at(b, a * 5 + 0, i, j))) / double(s.w);
        const double by = (double(i) + bunas::sigmoid(y.at(b, a * 5 + 1, i, j))) / double(s.h);
        const double bw = anchors[size_t(a)].w * std::exp(y.at(b, a * 5 + 2, i, j));
        const double bh = anchors[size_t(a)].h * std::exp(y.at(b, a * 5 + 3, i, j));
        best.box = bunas::Box{std::clamp(bx - bw / 2, 0.0, 1.0), std::clamp(by - bh / 2, 0.0, 1.0),
                              std::clamp(bx + bw / 2, 0.0, 1.0), std::clamp(by + bh / 2, 0.0, 1.0)};
        best.objectness = bunas::sigmoid(obj);
        best.cell_y = i;
        best.cell_x = j;
        best.anchor = a;
      }
  return best;
}

// Central finite difference of `f` wrt every element of `values`.
inline std::vector<double> finite_diff(std::vector<double>& values,
                                       const std::function<double()>& f, double step = 1e-5) {
  std::vector<double> g(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + step;
    const double fp = f();
    values[i] = keep - step;
    const double fm = f();
    values[i] = keep;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
  double m = 0;
  for (size_t i = 0; i < got.size(); ++i) {
    const double scale = std::max({std::abs(got[i]), std::abs(want[i]), 1e-3});
    m = std::max(m, std::abs(got[i] - want[i]) / scale);
  }
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (size_t i = 0; i < a.values().size(); ++i) {
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  }
  return m;
}

}  // namespace oracles
