#include "bunas/autograd.hpp"

#include <stdexcept>

namespace bunas {

void GradTape::record(std::vector<int> inputs, int output, BackwardFn backward) {
  for (int id : inputs) {
    if (id < 0 || id >= next_value_) throw std::invalid_argument("tape: unknown input id");
  }
  if (output < 0 || output >= next_value_) throw std::invalid_argument("tape: unknown output id");
  nodes_.push_back(Node{std::move(inputs), output, std::move(backward)});
}

std::unordered_map<int, Tensor> GradTape::backward(int output_id, const Tensor& seed,
                                                   const std::vector<int>& wanted) const {
  if (nodes_.empty()) {
    throw std::logic_error("tape: backward called before any forward pass was recorded");
  }
  bool produced = false;
  for (const Node& n : nodes_) produced = produced || n.output == output_id;
  if (!produced) {
    throw std::logic_error("tape: value " + std::to_string(output_id) +
                           " is not an output of any recorded operation");
  }

  std::unordered_map<int, Tensor> grads;
  grads.emplace(output_id, seed);

  std::unordered_map<int, Tensor> kept;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto g = grads.find(it->output);
    if (g == grads.end()) continue;  // output does not reach the seed
    std::vector<Tensor> dxs = it->backward(g->second);
    if (dxs.size() != it->inputs.size()) {
      throw std::logic_error("tape: node returned wrong number of input gradients");
    }
    for (size_t i = 0; i < dxs.size(); ++i) {
      const int id = it->inputs[i];
      auto slot = grads.find(id);
      if (slot == grads.end()) {
        grads.emplace(id, std::move(dxs[i]));
      } else {
        auto& acc = slot->second.values();
        const auto& add = dxs[i].values();
        for (size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
      }
    }
    // The output grad is fully consumed; free it unless the caller asked for it.
    bool keep = false;
    for (int id : wanted) keep = keep || id == it->output;
    if (keep) kept.emplace(it->output, std::move(g->second));
    grads.erase(g);
  }

  std::unordered_map<int, Tensor> out;
  for (int id : wanted) {
    auto it = grads.find(id);
    if (it != grads.end()) {
      out.emplace(id, std::move(it->second));
      continue;
    }
    auto kt = kept.find(id);
    if (kt != kept.end()) out.emplace(id, std::move(kt->second));
  }
  return out;
}

void GradTape::clear() {
  nodes_.clear();
  next_value_ = 0;
}

}  // namespace bunas
