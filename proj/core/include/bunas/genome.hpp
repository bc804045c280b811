#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bunas/rng.hpp"

namespace bunas {

/// Closed layer vocabulary; every tag maps to exactly one tensor kernel.
enum class LayerOp { DwConv3, PwConv1, Bn, Relu, Relu6, MaxPool2 };

const char* layer_op_name(LayerOp op);

/// A bundle is a short fixed sequence of layers, stackable into networks and
/// mappable onto one shared hardware IP. Activation tags inside a bundle are
/// placeholders; instantiation resolves them to the genome's activation.
struct Bundle {
  int id = 0;
  std::vector<LayerOp> ops;

  void validate() const;  // non-empty, <=1 pool, BN only right after a conv
};

/// Built-in bundle types. Id 0 is the depthwise-then-pointwise pair every
/// preset backbone uses.
const std::vector<Bundle>& bundle_catalog();
const Bundle& bundle_by_id(int id);

enum class Activation { Relu, Relu6 };

struct Bypass {
  int source_bundle = 0;  // 1-based; concatenated into dest's input
  int dest_bundle = 0;

  bool operator==(const Bypass&) const = default;
};

struct GenomeBounds {
  int depth = 6;
  std::vector<int> width_alphabet = {24, 48, 96, 192, 384, 512};
  int min_pools = 0;
  int max_pools = 3;
  std::vector<int> bundle_ids = {0};

  void validate() const;
};

/// Searchable network description: bundle type, per-replication output widths
/// (fv1), pool-after mask (fv2), optional bypass, activation choice.
struct NetworkGenome {
  int bundle_id = 0;
  int depth = 0;
  std::vector<int> fv1;       // output channels per stacked bundle
  std::vector<uint8_t> fv2;   // 1 = 2x2 max-pool after bundle i
  std::optional<Bypass> bypass;
  Activation activation = Activation::Relu6;

  int pool_count() const;
  bool operator==(const NetworkGenome&) const = default;

  /// Structural invariants; when `bounds` is given also checks membership in
  /// the width alphabet and the pool-count range.
  void validate(const GenomeBounds* bounds = nullptr) const;
};

struct InputShape {
  int64_t c = 3, h = 160, w = 320;
};

/// Largest pool count the input size supports (every pool needs even dims).
int max_pool_count(const InputShape& in);

/// One resolved layer of an instantiated network.
enum class SpecLayerKind { DwConv3, PwConv1, Bn, Relu, Relu6, MaxPool2, Reorder, Concat };

struct SpecLayer {
  SpecLayerKind kind;
  std::string name;
  int64_t in_ch = 0, out_ch = 0;
  int64_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  int bundle_index = -1;   // 0-based bundle this layer executes with; head uses depth
  bool on_bypass = false;  // reorder applied to the saved bypass tensor
  bool has_bias = false;   // convs not followed by BN carry a bias
};

/// Fully resolved, shape-checked layer chain with head configuration.
struct NetworkSpec {
  std::vector<SpecLayer> layers;
  InputShape input;
  int64_t head_channels = 10;
  int64_t grid_h = 0, grid_w = 0;
  int bypass_source_layer = -1;  // index whose output feeds the bypass branch
  Activation activation = Activation::Relu6;
  int bundle_count = 0;
};

/// Expands a genome into a runnable layer chain. The head (a biased 1x1 conv
/// to 10 channels) is appended after the last bundle. Throws with the
/// offending position when the shape chain breaks.
NetworkSpec instantiate(const NetworkGenome& g, const InputShape& in);

/// Exact count of trainable scalars: conv weights and biases, BN gamma/beta.
int64_t param_count(const NetworkSpec& spec);

/// Multiply-accumulate count per single input at the resolved resolution
/// (depthwise 9*C*H*W, pointwise Cin*Cout*H*W).
int64_t macs_count(const NetworkSpec& spec);

/// Random genome satisfying `bounds`; deterministic under the rng's seed.
NetworkGenome random_genome(Rng& rng, const GenomeBounds& bounds);

// Text round trip (documented schema; stable across versions).
std::string genome_to_text(const NetworkGenome& g);
NetworkGenome genome_from_text(const std::string& text);
void save_genome(const NetworkGenome& g, const std::string& path);
NetworkGenome load_genome(const std::string& path);

/// Reference backbone presets 'a' (5 bundles, no bypass), 'b' and 'c'
/// (6 bundles, bypass 3->6). `width_div` scales every fv1 entry down for
/// desk-scale training.
NetworkGenome preset_genome(char variant, int width_div = 1);

}  // namespace bunas
