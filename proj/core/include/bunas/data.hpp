#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bunas/scoring.hpp"
#include "bunas/tensor.hpp"

namespace bunas {

/// 8-bit interleaved-plane image, values v/255 when viewed as reals. Keeping
/// samples at 8 bits makes datasets compact and the PPM round trip lossless.
struct Image8 {
  int64_t c = 3, h = 0, w = 0;
  std::vector<uint8_t> v;  // plane-major (c, h, w)

  Tensor to_tensor() const;  // (1, c, h, w) in [0,1]
};

struct Sample {
  Image8 image;
  Box gt;  // normalized [0,1] coordinates, snapped to the pixel grid
};

using Dataset = std::vector<Sample>;

/// Generator parameters. Object area ratios come from a three-part mixture:
/// p_tiny in [r_min, 0.01), p_small in [0.01, 0.09), the rest in [0.09, r_max],
/// uniform inside each band. The defaults put 91% of boxes below 9% of the
/// image area and 31% below 1%.
struct DatasetSpec {
  int count = 100;
  int64_t width = 320, height = 160;
  uint64_t seed = 1;
  double noise_level = 0.15;
  double p_tiny = 0.31;
  double p_small = 0.60;
  double r_min = 0.001;
  double r_max = 0.36;
  double fixed_ratio = -1.0;  // >= 0 pins every box to this area ratio

  void validate() const;
};

/// One sample as a pure function of (spec, index); `generate` is the loop.
Sample generate_sample(const DatasetSpec& spec, int index);
Dataset generate(const DatasetSpec& spec);

/// Directory layout: images/NNNNNN.ppm (binary P6) and boxes/NNNNNN.txt, one
/// line "x_min y_min x_max y_max" in normalized coordinates. An empty or
/// missing pair of subdirectories loads as an empty dataset.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Deterministic disjoint-and-exhaustive split by per-index hash.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            uint64_t seed);

struct AugmentOptions {
  bool enabled = false;
  double jitter = 0.2;      // brightness/contrast strength
  double distort = 0.1;     // per-channel gain
  double crop_min = 0.75;   // crop window scale lower bound, then resize back
};

/// Jitter/distort/crop/resize; box is adjusted to the crop. Returns a float
/// tensor ready for the trainer.
std::pair<Tensor, Box> augment_sample(const Sample& s, const AugmentOptions& opt, Rng& rng);

}  // namespace bunas
