#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "bunas/tensor.hpp"

namespace bunas {

/// Reverse-mode tape over tensor-valued operations. Forward code registers a
/// value id per produced tensor and records one node per operation; backward
/// replays nodes in exact reverse recording order, accumulating gradients at
/// every value id. Parameter gradients are the recording layer's business:
/// node closures write them into the layer's own buffers.
class GradTape {
 public:
  /// A node's backward maps the gradient of its output to gradients of each
  /// listed input, in order.
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& dy)>;

  int new_value() { return next_value_++; }

  void record(std::vector<int> inputs, int output, BackwardFn backward);

  /// Seeds `seed` as the gradient of value `output_id` and walks the tape
  /// backward. Returns gradients for the ids in `wanted` (missing entries
  /// mean the value does not influence the output). Throws when no forward
  /// pass has been recorded or `output_id` is not a recorded output.
  std::unordered_map<int, Tensor> backward(int output_id, const Tensor& seed,
                                           const std::vector<int>& wanted = {}) const;

  bool empty() const { return nodes_.empty(); }
  size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::vector<int> inputs;
    int output = -1;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  int next_value_ = 0;
};

}  // namespace bunas
