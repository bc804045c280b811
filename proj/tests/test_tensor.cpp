#include <algorithm>
#include <stdexcept>
#include <set>

#include "bunas/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bunas;

TEST_CASE("dwconv3: zero input stays zero") {
  Tensor x(1, 1, 4, 4);
  Rng rng(7);
  ConvWeights w = ConvWeights::depthwise(1);
  w.w = Tensor::random_uniform(w.w.shape(), rng, -1, 1);
  Tensor y = dwconv3_forward(x, w);
  CHECK(y.shape() == x.shape());
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("dwconv3: center impulse with all-ones kernel") {
  Tensor x(1, 1, 3, 3);
  x.at(0, 0, 1, 1) = 1.0;
  ConvWeights w = ConvWeights::depthwise(1);
  std::fill(w.w.values().begin(), w.w.values().end(), 1.0);
  Tensor y = dwconv3_forward(x, w);
  // Every cell overlaps the center impulse once.
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j) CHECK(y.at(0, 0, i, j) == doctest::Approx(1.0));
}

TEST_CASE("dwconv3: matches naive reference exactly") {
  Rng rng(11);
  Tensor x = Tensor::random_uniform({2, 4, 8, 8}, rng, -10, 10);
  ConvWeights w = ConvWeights::depthwise(4, true);
  w.w = Tensor::random_uniform(w.w.shape(), rng, -1, 1);
  for (auto& b : *w.bias) b = rng.uniform(-1, 1);
  Tensor got = dwconv3_forward(x, w);
  Tensor want = oracles::naive_dwconv3(x, w);
  CHECK(oracles::max_abs_diff(got, want) == 0.0);
}

TEST_CASE("dwconv3: channel mismatch names both shapes") {
  Tensor x(1, 2, 4, 4);
  ConvWeights w = ConvWeights::depthwise(3);
  CHECK_THROWS_WITH_AS(dwconv3_forward(x, w),
                       doctest::Contains("1x2x4x4"), std::invalid_argument);
}

TEST_CASE("dwconv3: perturbing channel c only changes output channel c") {
  Rng rng(13);
  Tensor x = Tensor::random_uniform({1, 3, 6, 6}, rng, -1, 1);
  ConvWeights w = ConvWeights::depthwise(3);
  w.w = Tensor::random_uniform(w.w.shape(), rng, -1, 1);
  Tensor y0 = dwconv3_forward(x, w);
  Tensor x2 = x;
  x2.at(0, 1, 3, 3) += 0.5;
  Tensor y1 = dwconv3_forward(x2, w);
  for (int64_t c = 0; c < 3; ++c) {
    double diff = 0;
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t j = 0; j < 6; ++j) diff += std::abs(y1.at(0, c, i, j) - y0.at(0, c, i, j));
    if (c == 1) {
      CHECK(diff > 0);
    } else {
      CHECK(diff == 0);
    }
  }
}

TEST_CASE("pwconv1: identity mixing") {
  Rng rng(17);
  Tensor x = Tensor::random_uniform({1, 3, 4, 4}, rng, -5, 5);
  ConvWeights w = ConvWeights::pointwise(3, 3, true);
  for (int64_t c = 0; c < 3; ++c) w.w.at(c, c, 0, 0) = 1.0;
  Tensor y = pwconv1_forward(x, w);
  CHECK(oracles::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("pwconv1: 2x2 matrix-vector product by hand") {
  Tensor x(1, 2, 1, 1);
  x.at(0, 0, 0, 0) = 1.0;
  x.at(0, 1, 0, 0) = 2.0;
  ConvWeights w = ConvWeights::pointwise(2, 2);
  w.w.at(0, 0, 0, 0) = 1.0;
  w.w.at(0, 1, 0, 0) = 1.0;
  w.w.at(1, 0, 0, 0) = 0.0;
  w.w.at(1, 1, 0, 0) = 3.0;
  Tensor y = pwconv1_forward(x, w);
  CHECK(y.at(0, 0, 0, 0) == 3.0);
  CHECK(y.at(0, 1, 0, 0) == 6.0);
}

TEST_CASE("pwconv1: matches naive reference exactly") {
  Rng rng(19);
  Tensor x = Tensor::random_uniform({2, 5, 6, 7}, rng, -10, 10);
  ConvWeights w = ConvWeights::pointwise(5, 4, true);
  w.w = Tensor::random_uniform(w.w.shape(), rng, -1, 1);
  for (auto& b : *w.bias) b = rng.uniform(-1, 1);
  Tensor got = pwconv1_forward(x, w);
  Tensor want = oracles::naive_pwconv1(x, w);
  CHECK(oracles::max_abs_diff(got, want) == 0.0);
}

TEST_CASE("pwconv1: channel mismatch errors") {
  Tensor x(1, 3, 2, 2);
  ConvWeights w = ConvWeights::pointwise(4, 2);
  CHECK_THROWS_AS(pwconv1_forward(x, w), std::invalid_argument);
}

TEST_CASE("bn: identity parameters pass input through") {
  Rng rng(23);
  Tensor x = Tensor::random_uniform({2, 3, 4, 4}, rng, -3, 3);
  BnParams p = BnParams::identity(3, 1e-12);
  Tensor y = bn_forward(x, p, BnMode::Infer);
  CHECK(oracles::max_abs_diff(x, y) < 1e-9);
}

TEST_CASE("bn: constant channel in train mode collapses to beta") {
  Tensor x = Tensor::full({2, 2, 3, 3}, 4.2);
  BnParams p = BnParams::identity(2);
  p.beta = {0.5, -0.25};
  BnBatchStats stats;
  Tensor y = bn_forward(x, p, BnMode::Train, &stats);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 3; ++j) {
        CHECK(y.at(b, 0, i, j) == doctest::Approx(0.5));
        CHECK(y.at(b, 1, i, j) == doctest::Approx(-0.25));
      }
  CHECK(stats.var[0] <= 1e-20);
}

TEST_CASE("bn: infer mode matches the per-element formula") {
  Rng rng(29);
  Tensor x = Tensor::random_uniform({2, 4, 5, 5}, rng, -4, 4);
  BnParams p;
  for (int c = 0; c < 4; ++c) {
    p.gamma.push_back(rng.uniform(0.5, 2.0));
    p.beta.push_back(rng.uniform(-1, 1));
    p.running_mean.push_back(rng.uniform(-1, 1));
    p.running_var.push_back(rng.uniform(0.1, 2.0));
  }
  Tensor got = bn_forward(x, p, BnMode::Infer);
  Tensor want = oracles::naive_bn_infer(x, p);
  CHECK(oracles::max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("bn: running stats move by momentum") {
  BnParams p = BnParams::identity(1);
  BnBatchStats stats{{2.0}, {4.0}};
  BnParams q = bn_update_running(p, stats, 0.1);
  CHECK(q.running_mean[0] == doctest::Approx(0.2));
  CHECK(q.running_var[0] == doctest::Approx(1.0 * 0.9 + 0.4));
  CHECK(p.running_mean[0] == 0.0);  // original untouched
}

TEST_CASE("relu6 clamps to [0,6]") {
  Tensor x(1, 1, 1, 3);
  x.at(0, 0, 0, 0) = 7.0;
  x.at(0, 0, 0, 1) = -3.0;
  x.at(0, 0, 0, 2) = 2.5;
  Tensor y = relu6_forward(x);
  CHECK(y.at(0, 0, 0, 0) == 6.0);
  CHECK(y.at(0, 0, 0, 1) == 0.0);
  CHECK(y.at(0, 0, 0, 2) == 2.5);

  Rng rng(31);
  Tensor r = relu6_forward(Tensor::random_uniform({2, 3, 8, 8}, rng, -20, 20));
  for (double v : r.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 6.0);
  }
}

TEST_CASE("maxpool2: single window and constants") {
  Tensor x(1, 1, 2, 2);
  x.at(0, 0, 0, 0) = 1;
  x.at(0, 0, 0, 1) = 2;
  x.at(0, 0, 1, 0) = 3;
  x.at(0, 0, 1, 1) = 4;
  Tensor y = maxpool2_forward(x);
  CHECK(y.shape() == Shape4{1, 1, 1, 1});
  CHECK(y.at(0, 0, 0, 0) == 4.0);

  Tensor c = Tensor::full({1, 2, 4, 6}, 1.5);
  Tensor yc = maxpool2_forward(c);
  CHECK(yc.shape() == Shape4{1, 2, 2, 3});
  for (double v : yc.values()) CHECK(v == 1.5);
}

TEST_CASE("maxpool2: matches window-scan oracle; odd dims error") {
  Rng rng(37);
  Tensor x = Tensor::random_uniform({1, 3, 8, 8}, rng, -5, 5);
  CHECK(oracles::max_abs_diff(maxpool2_forward(x), oracles::naive_maxpool2(x)) == 0.0);
  Tensor odd(1, 1, 3, 4);
  CHECK_THROWS_AS(maxpool2_forward(odd), std::invalid_argument);
}

TEST_CASE("reorder: 4x4 multiset preservation and shape law") {
  Tensor x(1, 1, 4, 4);
  for (int64_t i = 0; i < 16; ++i) x.values()[size_t(i)] = double(i);
  Tensor y = reorder_forward(x);
  CHECK(y.shape() == Shape4{1, 4, 2, 2});
  std::multiset<double> in(x.values().begin(), x.values().end());
  std::multiset<double> out(y.values().begin(), y.values().end());
  CHECK(in == out);
}

TEST_CASE("reorder: documented 2x2 channel order") {
  Tensor x(1, 1, 2, 2);
  const double a = 1, b = 2, c = 3, d = 4;
  x.at(0, 0, 0, 0) = a;
  x.at(0, 0, 0, 1) = b;
  x.at(0, 0, 1, 0) = c;
  x.at(0, 0, 1, 1) = d;
  Tensor y = reorder_forward(x);
  CHECK(y.at(0, 0, 0, 0) == a);  // offset (0,0)
  CHECK(y.at(0, 1, 0, 0) == b);  // offset (0,1)
  CHECK(y.at(0, 2, 0, 0) == c);  // offset (1,0)
  CHECK(y.at(0, 3, 0, 0) == d);  // offset (1,1)
}

TEST_CASE("reorder: bijection round trip, random shapes") {
  Rng rng(41);
  for (int t = 0; t < 50; ++t) {
    const int64_t b = rng.uniform_int(1, 2), c = rng.uniform_int(1, 5);
    const int64_t h = 2 * rng.uniform_int(1, 6), w = 2 * rng.uniform_int(1, 6);
    Tensor x = Tensor::random_uniform({b, c, h, w}, rng, -9, 9);
    Tensor y = reorder_forward(x);
    CHECK(y.shape() == Shape4{b, 4 * c, h / 2, w / 2});
    Tensor back = inverse_reorder(y);
    CHECK(oracles::max_abs_diff(x, back) == 0.0);
  }
}

TEST_CASE("concat: channel counts add, a precedes b") {
  Rng rng(43);
  Tensor a = Tensor::random_uniform({1, 512, 2, 3}, rng, -1, 1);
  Tensor b = Tensor::random_uniform({1, 768, 2, 3}, rng, -1, 1);
  Tensor y = concat_channels(a, b);
  CHECK(y.shape() == Shape4{1, 1280, 2, 3});
  CHECK(oracles::concat_matches(a, b, y));

  Tensor zero(1, 4, 2, 3);
  Tensor y2 = concat_channels(a, zero);
  CHECK(oracles::max_abs_diff(slice_channels(y2, 0, 512), a) == 0.0);

  Tensor bad(1, 4, 3, 3);
  CHECK_THROWS_AS(concat_channels(a, bad), std::invalid_argument);
}

TEST_CASE("concat: random pair matches index-map oracle") {
  Rng rng(47);
  Tensor a = Tensor::random_uniform({2, 3, 4, 5}, rng, -2, 2);
  Tensor b = Tensor::random_uniform({2, 6, 4, 5}, rng, -2, 2);
  CHECK(oracles::concat_matches(a, b, concat_channels(a, b)));
}

TEST_CASE("head decode: zero logits on a 1x1 grid center the prior box") {
  Tensor y(1, 10, 1, 1);
  std::array<AnchorPrior, 2> anchors{AnchorPrior{0.1, 0.1}, AnchorPrior{0.3, 0.3}};
  DetectionBox det = detection_head_decode(y, anchors);
  CHECK(det.box.x_min == doctest::Approx(0.45));
  CHECK(det.box.x_max == doctest::Approx(0.55));
  CHECK(det.box.y_min == doctest::Approx(0.45));
  CHECK(det.box.y_max == doctest::Approx(0.55));
  CHECK((det.box.x_max - det.box.x_min) == doctest::Approx(0.1));
}

TEST_CASE("head decode: argmax selects the boosted cell") {
  Tensor y = Tensor::full({1, 10, 4, 6}, 0.0);
  for (int64_t a = 0; a < 2; ++a)
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 6; ++j) y.at(0, a * 5 + 4, i, j) = -10.0;
  y.at(0, 4, 2, 3) = 10.0;
  std::array<AnchorPrior, 2> anchors{AnchorPrior{0.05, 0.05}, AnchorPrior{0.2, 0.2}};
  DetectionBox det = detection_head_decode(y, anchors);
  CHECK(det.cell_y == 2);
  CHECK(det.cell_x == 3);
  CHECK(det.anchor == 0);
  const double cx = (det.box.x_min + det.box.x_max) / 2;
  const double cy = (det.box.y_min + det.box.y_max) / 2;
  CHECK(cx > 3.0 / 6.0);
  CHECK(cx < 4.0 / 6.0);
  CHECK(cy > 2.0 / 4.0);
  CHECK(cy < 3.0 / 4.0);
}

TEST_CASE("head decode: matches brute-force decode-all oracle") {
  Rng rng(53);
  std::array<AnchorPrior, 2> anchors{AnchorPrior{0.08, 0.12}, AnchorPrior{0.25, 0.2}};
  for (int t = 0; t < 50; ++t) {
    Tensor y = Tensor::random_uniform({2, 10, 5, 7}, rng, -4, 4);
    for (int64_t b = 0; b < 2; ++b) {
      DetectionBox got = detection_head_decode(y, anchors, b);
      DetectionBox want = oracles::naive_head_decode(y, anchors, b);
      CHECK(got.cell_y == want.cell_y);
      CHECK(got.cell_x == want.cell_x);
      CHECK(got.anchor == want.anchor);
      CHECK(got.box.x_min == doctest::Approx(want.box.x_min).epsilon(1e-12));
      CHECK(got.box.y_max == doctest::Approx(want.box.y_max).epsilon(1e-12));
    }
  }
  Tensor bad(1, 8, 2, 2);
  CHECK_THROWS_AS(detection_head_decode(bad, anchors), std::invalid_argument);
}

TEST_CASE("sgd: definition, zero grad, geometric decay") {
  std::vector<double> p{1.0}, g{2.0};
  sgd_step(p, g, SgdOptions{0.1, 0.0});
  CHECK(p[0] == doctest::Approx(0.8));

  std::vector<double> p2{3.0}, g2{0.0};
  sgd_step(p2, g2, SgdOptions{0.5, 0.0});
  CHECK(p2[0] == 3.0);

  // 10 steps on 0.5*p^2 from p=1, lr=0.1 -> 0.9^10
  std::vector<double> p3{1.0};
  for (int i = 0; i < 10; ++i) {
    std::vector<double> g3{p3[0]};
    sgd_step(p3, g3, SgdOptions{0.1, 0.0});
  }
  CHECK(p3[0] == doctest::Approx(std::pow(0.9, 10)).epsilon(1e-12));
}

TEST_CASE("forward kernels: 200 random oracle cases per layer type") {
  Rng rng(59);
  for (int t = 0; t < 200; ++t) {
    const int64_t b = rng.uniform_int(1, 2), c = rng.uniform_int(1, 6);
    const int64_t h = 2 * rng.uniform_int(1, 5), w = 2 * rng.uniform_int(1, 5);
    Tensor x = Tensor::random_uniform({b, c, h, w}, rng, -10, 10);

    ConvWeights dw = ConvWeights::depthwise(c, t % 2 == 0);
    dw.w = Tensor::random_uniform(dw.w.shape(), rng, -2, 2);
    if (dw.bias) {
      for (auto& v : *dw.bias) v = rng.uniform(-1, 1);
    }
    CHECK(oracles::max_abs_diff(dwconv3_forward(x, dw), oracles::naive_dwconv3(x, dw)) < 1e-12);

    const int64_t cout = rng.uniform_int(1, 7);
    ConvWeights pw = ConvWeights::pointwise(c, cout, t % 2 == 1);
    pw.w = Tensor::random_uniform(pw.w.shape(), rng, -2, 2);
    if (pw.bias) {
      for (auto& v : *pw.bias) v = rng.uniform(-1, 1);
    }
    CHECK(oracles::max_abs_diff(pwconv1_forward(x, pw), oracles::naive_pwconv1(x, pw)) < 1e-12);

    BnParams p;
    for (int64_t i = 0; i < c; ++i) {
      p.gamma.push_back(rng.uniform(0.5, 1.5));
      p.beta.push_back(rng.uniform(-1, 1));
      p.running_mean.push_back(rng.uniform(-1, 1));
      p.running_var.push_back(rng.uniform(0.05, 2.0));
    }
    CHECK(oracles::max_abs_diff(bn_forward(x, p, BnMode::Infer), oracles::naive_bn_infer(x, p)) <
          1e-12);

    CHECK(oracles::max_abs_diff(maxpool2_forward(x), oracles::naive_maxpool2(x)) < 1e-12);

    Tensor back = inverse_reorder(reorder_forward(x));
    CHECK(oracles::max_abs_diff(back, x) == 0.0);
  }
}

TEST_CASE("all forward outputs stay finite on finite inputs") {
  Rng rng(61);
  Tensor x = Tensor::random_uniform({2, 4, 8, 8}, rng, -100, 100);
  ConvWeights dw = ConvWeights::depthwise(4);
  dw.w = Tensor::random_uniform(dw.w.shape(), rng, -3, 3);
  CHECK(dwconv3_forward(x, dw).all_finite());
  CHECK(relu6_forward(x).all_finite());
  CHECK(maxpool2_forward(x).all_finite());
  CHECK(reorder_forward(x).all_finite());
}

TEST_CASE("float32 precision mode rounds through single precision") {
  Tensor x(1, 1, 1, 1);
  x.at(0, 0, 0, 0) = 0.1;  // not representable in float32
  Tensor y = x.to_float32_precision();
  CHECK(y.at(0, 0, 0, 0) == double(float(0.1)));
  CHECK(y.at(0, 0, 0, 0) != 0.1);
}
