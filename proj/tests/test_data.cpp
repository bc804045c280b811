#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "bunas/data.hpp"
#include "doctest.h"

using namespace bunas;
namespace fs = std::filesystem;

TEST_CASE("generation is deterministic under seed, bit identical") {
  DatasetSpec spec;
  spec.count = 8;
  spec.width = 64;
  spec.height = 32;
  spec.seed = 123;
  Dataset a = generate(spec);
  Dataset b = generate(spec);
  REQUIRE(a.size() == 8);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.v == b[i].image.v);
    CHECK(a[i].gt == b[i].gt);
  }
  DatasetSpec other = spec;
  other.seed = 124;
  Dataset c = generate(other);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) any_diff = any_diff || !(a[i].image.v == c[i].image.v);
  CHECK(any_diff);
}

TEST_CASE("gt box tightly bounds the rendered object") {
  DatasetSpec spec;
  spec.count = 40;
  spec.width = 80;
  spec.height = 48;
  spec.seed = 5;
  spec.noise_level = 0.05;
  for (const Sample& s : generate(spec)) {
    // Recover the rendered extent: object pixels are extreme-valued (bright
    // or dark) versus the mid-range background.
    const int64_t W = s.image.w, H = s.image.h;
    const int64_t hw = H * W;
    int64_t xmin = W, xmax = -1, ymin = H, ymax = -1;
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        const uint8_t r = s.image.v[size_t(y * W + x)];
        const uint8_t g = s.image.v[size_t(hw + y * W + x)];
        const uint8_t bl = s.image.v[size_t(2 * hw + y * W + x)];
        const bool extreme = (r > 200 && g > 200 && bl > 200) || (r < 40 && g < 40 && bl < 40);
        if (extreme) {
          xmin = std::min(xmin, x);
          xmax = std::max(xmax, x);
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
        }
      }
    }
    REQUIRE(xmax >= 0);
    Box extent{double(xmin) / double(W), double(ymin) / double(H), double(xmax + 1) / double(W),
               double(ymax + 1) / double(H)};
    CHECK(iou(extent, s.gt) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("area-ratio mixture hits the documented small-object fractions") {
  DatasetSpec spec;
  spec.count = 10000;
  spec.width = 160;  // half-size keeps this quick; ratios are resolution-free
  spec.height = 80;
  spec.seed = 99;
  int below_009 = 0, below_001 = 0;
  for (int i = 0; i < spec.count; ++i) {
    Sample s = generate_sample(spec, i);
    const double r = (s.gt.x_max - s.gt.x_min) * (s.gt.y_max - s.gt.y_min);
    if (r < 0.09) ++below_009;
    if (r < 0.01) ++below_001;
  }
  const double f9 = double(below_009) / spec.count;
  const double f1 = double(below_001) / spec.count;
  CHECK(f9 > 0.89);
  CHECK(f9 < 0.93);
  CHECK(f1 > 0.26);
  CHECK(f1 < 0.36);
}

TEST_CASE("fixed ratio pins every box area") {
  DatasetSpec spec;
  spec.count = 50;
  spec.width = 128;
  spec.height = 64;
  spec.seed = 3;
  spec.fixed_ratio = 0.25;
  for (const Sample& s : generate(spec)) {
    const double r = (s.gt.x_max - s.gt.x_min) * (s.gt.y_max - s.gt.y_min);
    CHECK(r == doctest::Approx(0.25).epsilon(0.08));  // pixel snapping jitter
  }
}

TEST_CASE("save/load round trip: boxes exact, images bit-identical") {
  DatasetSpec spec;
  spec.count = 6;
  spec.width = 48;
  spec.height = 32;
  spec.seed = 7;
  Dataset ds = generate(spec);
  const std::string dir = "dataset_roundtrip_test";
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  REQUIRE(back.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].image.v == ds[i].image.v);
    CHECK(back[i].gt == ds[i].gt);  // exact: text uses shortest round-trip floats
  }
  fs::remove_all(dir);
}

TEST_CASE("empty directory loads as an empty dataset") {
  const std::string dir = "dataset_empty_test";
  fs::create_directories(dir);
  CHECK(load_dataset(dir).empty());
  CHECK(load_dataset("does_not_exist_anywhere").empty());
  fs::remove_all(dir);
}

TEST_CASE("malformed box file names the file and line") {
  DatasetSpec spec;
  spec.count = 1;
  spec.width = 32;
  spec.height = 32;
  Dataset ds = generate(spec);
  const std::string dir = "dataset_malformed_test";
  save_dataset(ds, dir);
  {
    std::ofstream f(fs::path(dir) / "boxes" / "000000.txt");
    f << "0.1 garbage\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("000000.txt:1"), std::runtime_error);
  fs::remove(fs::path(dir) / "boxes" / "000000.txt");
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("missing box file"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("train/val split is disjoint, exhaustive and deterministic") {
  DatasetSpec spec;
  spec.count = 200;
  spec.width = 16;
  spec.height = 16;
  Dataset ds = generate(spec);
  auto [train, val] = split_train_val(ds, 0.3, 11);
  CHECK(train.size() + val.size() == ds.size());
  CHECK(val.size() > 20);
  CHECK(train.size() > 100);

  auto [train2, val2] = split_train_val(ds, 0.3, 11);
  CHECK(train2.size() == train.size());
  for (size_t i = 0; i < train.size(); ++i) CHECK(train2[i].gt == train[i].gt);

  // membership is exclusive: count matched boxes across both sides
  auto key = [](const Sample& s) {
    return std::make_tuple(s.gt.x_min, s.gt.y_min, s.gt.x_max, s.gt.y_max);
  };
  std::multiset<std::tuple<double, double, double, double>> all;
  for (const auto& s : ds) all.insert(key(s));
  for (const auto& s : train) {
    auto it = all.find(key(s));
    REQUIRE(it != all.end());
    all.erase(it);
  }
  for (const auto& s : val) {
    auto it = all.find(key(s));
    REQUIRE(it != all.end());
    all.erase(it);
  }
  CHECK(all.empty());
}

TEST_CASE("augmentation keeps the box inside the unit square and is seeded") {
  DatasetSpec spec;
  spec.count = 10;
  spec.width = 64;
  spec.height = 32;
  Dataset ds = generate(spec);
  AugmentOptions opt;
  opt.enabled = true;
  for (const Sample& s : ds) {
    Rng rng(42);
    auto [img, box] = augment_sample(s, opt, rng);
    CHECK(img.shape() == Shape4{1, 3, 32, 64});
    CHECK(box.valid());
    CHECK(box.x_min >= 0.0);
    CHECK(box.y_max <= 1.0);
    for (double v : img.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    Rng rng2(42);
    auto [img2, box2] = augment_sample(s, opt, rng2);
    CHECK(img.values() == img2.values());
    CHECK(box == box2);
  }
}

TEST_CASE("object larger than the image is rejected") {
  DatasetSpec spec;
  spec.count = 1;
  spec.width = 16;
  spec.height = 16;
  spec.fixed_ratio = 1.5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
