#include "bunas/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bunas {

namespace {

// Activation buffers are tens of MB and are reallocated every batch; keep
// them in the heap instead of bouncing mmap'd pages back to the kernel.
void keep_large_allocations_in_heap() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train config: negative epochs");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (lr0 <= 0 || lr1 <= 0) throw std::invalid_argument("train config: lr must be > 0");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train config: bad momentum");
  if (bn_momentum <= 0 || bn_momentum > 1) throw std::invalid_argument("train config: bad bn momentum");
}

std::array<AnchorPrior, 2> kmeans_anchors(const Dataset& ds, uint64_t seed) {
  if (ds.empty()) return {AnchorPrior{0.1, 0.1}, AnchorPrior{0.3, 0.3}};
  std::vector<std::pair<double, double>> whs;
  whs.reserve(ds.size());
  for (const Sample& s : ds) {
    whs.emplace_back(s.gt.x_max - s.gt.x_min, s.gt.y_max - s.gt.y_min);
  }
  Rng rng(mix_seed({seed, 0xA2C404ull}));
  size_t i0 = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(whs.size()) - 1));
  size_t i1 = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(whs.size()) - 1));
  double c0w = whs[i0].first, c0h = whs[i0].second;
  double c1w = whs[i1].first + 1e-3, c1h = whs[i1].second + 1e-3;

  for (int iter = 0; iter < 25; ++iter) {
    double s0w = 0, s0h = 0, s1w = 0, s1h = 0;
    int64_t n0 = 0, n1 = 0;
    for (const auto& [w, h] : whs) {
      const double d0 = (w - c0w) * (w - c0w) + (h - c0h) * (h - c0h);
      const double d1 = (w - c1w) * (w - c1w) + (h - c1h) * (h - c1h);
      if (d0 <= d1) {
        s0w += w;
        s0h += h;
        ++n0;
      } else {
        s1w += w;
        s1h += h;
        ++n1;
      }
    }
    if (n0 > 0) {
      c0w = s0w / static_cast<double>(n0);
      c0h = s0h / static_cast<double>(n0);
    }
    if (n1 > 0) {
      c1w = s1w / static_cast<double>(n1);
      c1h = s1h / static_cast<double>(n1);
    }
  }
  // Smaller prior first, deterministically.
  if (c0w * c0h > c1w * c1h) {
    std::swap(c0w, c1w);
    std::swap(c0h, c1h);
  }
  auto floor_prior = [](double v) { return std::max(v, 0.01); };
  return {AnchorPrior{floor_prior(c0w), floor_prior(c0h)},
          AnchorPrior{floor_prior(c1w), floor_prior(c1h)}};
}

namespace {

Tensor collate(const std::vector<Tensor>& images) {
  const Shape4& s0 = images[0].shape();
  Tensor batch(static_cast<int64_t>(images.size()), s0.c, s0.h, s0.w);
  const int64_t per = s0.c * s0.h * s0.w;
  for (size_t i = 0; i < images.size(); ++i) {
    std::copy_n(images[i].data(), per, batch.data() + static_cast<int64_t>(i) * per);
  }
  return batch;
}

}  // namespace

std::vector<EpochMetrics> train_model(Model& m, const Dataset& train, const Dataset& val,
                                      const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_model: empty training set");
  keep_large_allocations_in_heap();

  std::vector<EpochMetrics> metrics;
  const double decay = cfg.epochs > 1
                           ? std::pow(cfg.lr1 / cfg.lr0, 1.0 / static_cast<double>(cfg.epochs - 1))
                           : 1.0;

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(mix_seed({cfg.seed, 0x7124Dull, static_cast<uint64_t>(epoch)}));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }
    const double lr = cfg.lr0 * std::pow(decay, epoch);

    double loss_sum = 0;
    int64_t loss_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      std::vector<Tensor> images;
      std::vector<Box> boxes;
      images.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        const Sample& s = train[order[i]];
        auto [img, box] = augment_sample(s, cfg.augment, erng);
        images.push_back(std::move(img));
        boxes.push_back(box);
      }
      Tensor batch = collate(images);

      GradTape tape;
      int head_id = 0;
      Tensor head = m.forward_train(batch, tape, head_id, cfg.bn_momentum);
      auto [loss, dhead] = detection_loss(head, boxes, m.anchors(), cfg.loss);
      m.zero_grads();
      m.backward(tape, head_id, dhead);
      if (cfg.clip_norm > 0) {
        const double norm = m.grad_norm();
        if (norm > cfg.clip_norm) m.scale_grads(cfg.clip_norm / norm);
      }
      m.sgd_update(SgdOptions{lr, cfg.momentum});
      loss_sum += loss;
      ++loss_batches;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.mean_loss = loss_batches > 0 ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    em.val_iou = val.empty() ? 0.0 : evaluate_iou(m, val, cfg.max_val_images);
    metrics.push_back(em);
  }
  return metrics;
}

double evaluate_iou(const Model& m, const Dataset& ds, int max_images) {
  if (ds.empty()) throw std::invalid_argument("evaluate_iou: empty dataset");
  const size_t n = max_images > 0 ? std::min(ds.size(), static_cast<size_t>(max_images))
                                  : ds.size();
  double s = 0;
  for (size_t i = 0; i < n; ++i) {
    Tensor y = m.forward(ds[i].image.to_tensor());
    DetectionBox det = detection_head_decode(y, m.anchors(), 0);
    s += iou(det.box, ds[i].gt);
  }
  return s / static_cast<double>(n);
}

std::vector<double> per_image_ious(const Model& m, const Dataset& ds) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (const Sample& s : ds) {
    Tensor y = m.forward(s.image.to_tensor());
    DetectionBox det = detection_head_decode(y, m.anchors(), 0);
    out.push_back(iou(det.box, s.gt));
  }
  return out;
}

}  // namespace bunas
