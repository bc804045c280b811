#pragma once

#include <vector>

#include "bunas/data.hpp"
#include "bunas/model.hpp"

namespace bunas {

struct TrainConfig {
  int epochs = 30;
  int batch = 4;
  double lr0 = 0.05;
  double lr1 = 0.002;  // geometric decay endpoint
  double momentum = 0.9;
  double clip_norm = 10.0;  // 0 disables clipping
  double bn_momentum = 0.1;
  uint64_t seed = 1;
  LossWeights loss;
  AugmentOptions augment;
  int max_val_images = 200;  // per-epoch validation cap

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0;
  double val_iou = 0;
};

/// Two anchor (w,h) priors from k-means over the training boxes
/// (Euclidean on width/height, fixed iteration count, seeded).
std::array<AnchorPrior, 2> kmeans_anchors(const Dataset& ds, uint64_t seed);

/// SGD training loop with per-epoch shuffling and geometric lr decay.
/// Metrics carry mean loss and validation IoU per epoch.
std::vector<EpochMetrics> train_model(Model& m, const Dataset& train, const Dataset& val,
                                      const TrainConfig& cfg);

/// Mean IoU of the model over a dataset (top-1 decode vs ground truth).
double evaluate_iou(const Model& m, const Dataset& ds, int max_images = 0);
std::vector<double> per_image_ious(const Model& m, const Dataset& ds);

}  // namespace bunas
