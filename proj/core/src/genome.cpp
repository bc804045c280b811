#include "bunas/genome.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bunas {

const char* layer_op_name(LayerOp op) {
  switch (op) {
    case LayerOp::DwConv3: return "dwconv3";
    case LayerOp::PwConv1: return "pwconv1";
    case LayerOp::Bn: return "bn";
    case LayerOp::Relu: return "relu";
    case LayerOp::Relu6: return "relu6";
    case LayerOp::MaxPool2: return "maxpool2";
  }
  return "?";
}

void Bundle::validate() const {
  if (ops.empty()) throw std::invalid_argument("bundle: empty op list");
  int pools = 0;
  bool has_width_setter = false;
  for (size_t i = 0; i < ops.size(); ++i) {
    if (ops[i] == LayerOp::MaxPool2) ++pools;
    if (ops[i] == LayerOp::PwConv1) has_width_setter = true;
    if (ops[i] == LayerOp::Bn) {
      if (i == 0 || (ops[i - 1] != LayerOp::DwConv3 && ops[i - 1] != LayerOp::PwConv1)) {
        throw std::invalid_argument("bundle: BN must immediately follow a conv op");
      }
    }
  }
  if (pools > 1) throw std::invalid_argument("bundle: at most one pooling op");
  if (!has_width_setter) {
    throw std::invalid_argument("bundle: needs a PwConv1 so fv1 widths are realizable");
  }
}

const std::vector<Bundle>& bundle_catalog() {
  static const std::vector<Bundle> catalog = [] {
    std::vector<Bundle> v;
    // Activation entries are placeholders resolved per genome.
    v.push_back({0, {LayerOp::DwConv3, LayerOp::Bn, LayerOp::Relu6, LayerOp::PwConv1,
                     LayerOp::Bn, LayerOp::Relu6}});
    v.push_back({1, {LayerOp::PwConv1, LayerOp::Bn, LayerOp::Relu6}});
    v.push_back({2, {LayerOp::PwConv1, LayerOp::Bn, LayerOp::Relu6, LayerOp::DwConv3,
                     LayerOp::Bn, LayerOp::Relu6}});
    v.push_back({3, {LayerOp::DwConv3, LayerOp::Bn, LayerOp::Relu6, LayerOp::PwConv1,
                     LayerOp::Bn, LayerOp::Relu6, LayerOp::PwConv1, LayerOp::Bn,
                     LayerOp::Relu6}});
    for (const Bundle& b : v) b.validate();
    return v;
  }();
  return catalog;
}

const Bundle& bundle_by_id(int id) {
  const auto& cat = bundle_catalog();
  for (const Bundle& b : cat) {
    if (b.id == id) return b;
  }
  throw std::invalid_argument("unknown bundle id " + std::to_string(id));
}

void GenomeBounds::validate() const {
  if (depth < 1) throw std::invalid_argument("bounds: depth must be >= 1");
  if (width_alphabet.empty()) throw std::invalid_argument("bounds: empty width alphabet");
  for (int w : width_alphabet) {
    if (w < 1) throw std::invalid_argument("bounds: widths must be positive");
  }
  if (!std::is_sorted(width_alphabet.begin(), width_alphabet.end())) {
    throw std::invalid_argument("bounds: width alphabet must be sorted ascending");
  }
  if (min_pools < 0 || max_pools < min_pools) {
    throw std::invalid_argument("bounds: bad pool count range");
  }
  if (max_pools > depth) {
    throw std::invalid_argument("bounds: max_pools cannot exceed depth");
  }
  if (bundle_ids.empty()) throw std::invalid_argument("bounds: no bundle ids");
  for (int id : bundle_ids) bundle_by_id(id);
}

int NetworkGenome::pool_count() const {
  int n = 0;
  for (uint8_t m : fv2) n += m ? 1 : 0;
  return n;
}

void NetworkGenome::validate(const GenomeBounds* bounds) const {
  if (depth < 1) throw std::invalid_argument("genome: depth must be >= 1");
  if (static_cast<int>(fv1.size()) != depth || static_cast<int>(fv2.size()) != depth) {
    throw std::invalid_argument("genome: fv1/fv2 length must equal depth");
  }
  for (int w : fv1) {
    if (w < 1) throw std::invalid_argument("genome: fv1 widths must be positive");
  }
  bundle_by_id(bundle_id);
  if (bypass) {
    if (bypass->source_bundle < 1 || bypass->dest_bundle > depth ||
        bypass->source_bundle >= bypass->dest_bundle) {
      throw std::invalid_argument("genome: bypass must satisfy 1 <= source < dest <= depth");
    }
  }
  if (bounds) {
    for (int w : fv1) {
      if (!std::binary_search(bounds->width_alphabet.begin(), bounds->width_alphabet.end(), w)) {
        throw std::invalid_argument("genome: width " + std::to_string(w) +
                                    " not in the configured alphabet");
      }
    }
    const int pools = pool_count();
    if (pools < bounds->min_pools || pools > bounds->max_pools) {
      throw std::invalid_argument("genome: pool count " + std::to_string(pools) +
                                  " outside [" + std::to_string(bounds->min_pools) + "," +
                                  std::to_string(bounds->max_pools) + "]");
    }
  }
}

int max_pool_count(const InputShape& in) {
  int k = 0;
  int64_t h = in.h, w = in.w;
  while (h % 2 == 0 && w % 2 == 0 && h / 2 >= 1 && w / 2 >= 1) {
    ++k;
    h /= 2;
    w /= 2;
  }
  return k;
}

namespace {

SpecLayerKind to_spec_kind(LayerOp op, Activation act) {
  switch (op) {
    case LayerOp::DwConv3: return SpecLayerKind::DwConv3;
    case LayerOp::PwConv1: return SpecLayerKind::PwConv1;
    case LayerOp::Bn: return SpecLayerKind::Bn;
    case LayerOp::Relu:
    case LayerOp::Relu6:
      return act == Activation::Relu6 ? SpecLayerKind::Relu6 : SpecLayerKind::Relu;
    case LayerOp::MaxPool2: return SpecLayerKind::MaxPool2;
  }
  throw std::logic_error("unreachable");
}

}  // namespace

NetworkSpec instantiate(const NetworkGenome& g, const InputShape& in) {
  g.validate();
  const Bundle& bundle = bundle_by_id(g.bundle_id);

  NetworkSpec spec;
  spec.input = in;
  spec.activation = g.activation;
  spec.bundle_count = g.depth;

  int64_t c = in.c, h = in.h, w = in.w;

  // Bypass bookkeeping: saved output dims and pools crossed so far.
  int64_t bp_c = 0, bp_h = 0, bp_w = 0;
  bool bp_saved = false;

  auto push = [&spec](SpecLayer l) { spec.layers.push_back(std::move(l)); };

  for (int bi = 1; bi <= g.depth; ++bi) {
    const std::string prefix = "b" + std::to_string(bi) + ".";

    if (g.bypass && g.bypass->dest_bundle == bi) {
      if (!bp_saved) throw std::logic_error("bypass source was never reached");
      // Re-align the saved branch with one reorder per crossed pool.
      while (bp_h > h || bp_w > w) {
        if (bp_h % 2 != 0 || bp_w % 2 != 0) {
          throw std::invalid_argument("instantiate: bypass branch hits odd dims " +
                                      std::to_string(bp_h) + "x" + std::to_string(bp_w) +
                                      " before bundle " + std::to_string(bi));
        }
        SpecLayer r{SpecLayerKind::Reorder, prefix + "bypass_reorder", bp_c, bp_c * 4,
                    bp_h, bp_w, bp_h / 2, bp_w / 2, bi - 1, true, false};
        push(r);
        bp_c *= 4;
        bp_h /= 2;
        bp_w /= 2;
      }
      if (bp_h != h || bp_w != w) {
        throw std::invalid_argument("instantiate: bypass dims " + std::to_string(bp_h) + "x" +
                                    std::to_string(bp_w) + " cannot match main path " +
                                    std::to_string(h) + "x" + std::to_string(w) +
                                    " at bundle " + std::to_string(bi));
      }
      SpecLayer cat{SpecLayerKind::Concat, prefix + "bypass_concat", c, c + bp_c,
                    h, w, h, w, bi - 1, false, false};
      push(cat);
      c += bp_c;
    }

    for (size_t oi = 0; oi < bundle.ops.size(); ++oi) {
      const LayerOp op = bundle.ops[oi];
      const SpecLayerKind kind = to_spec_kind(op, g.activation);
      SpecLayer l;
      l.kind = kind;
      l.bundle_index = bi - 1;
      l.in_ch = l.out_ch = c;
      l.in_h = l.out_h = h;
      l.in_w = l.out_w = w;
      switch (kind) {
        case SpecLayerKind::DwConv3:
          l.name = prefix + "dwconv3";
          l.has_bias = !(oi + 1 < bundle.ops.size() && bundle.ops[oi + 1] == LayerOp::Bn);
          break;
        case SpecLayerKind::PwConv1:
          l.out_ch = g.fv1[static_cast<size_t>(bi - 1)];
          l.name = prefix + "pwconv1";
          l.has_bias = !(oi + 1 < bundle.ops.size() && bundle.ops[oi + 1] == LayerOp::Bn);
          break;
        case SpecLayerKind::Bn:
          l.name = prefix + "bn" + std::to_string(oi);
          break;
        case SpecLayerKind::Relu:
        case SpecLayerKind::Relu6:
          l.name = prefix + (kind == SpecLayerKind::Relu6 ? "relu6_" : "relu_") +
                   std::to_string(oi);
          break;
        case SpecLayerKind::MaxPool2:
          if (h % 2 != 0 || w % 2 != 0) {
            throw std::invalid_argument("instantiate: in-bundle pool at bundle " +
                                        std::to_string(bi) + " needs even dims, has " +
                                        std::to_string(h) + "x" + std::to_string(w));
          }
          l.out_h = h / 2;
          l.out_w = w / 2;
          l.name = prefix + "pool";
          break;
        default:
          throw std::logic_error("unexpected op in bundle");
      }
      c = l.out_ch;
      h = l.out_h;
      w = l.out_w;
      push(l);
    }

    if (g.bypass && g.bypass->source_bundle == bi) {
      spec.bypass_source_layer = static_cast<int>(spec.layers.size()) - 1;
      bp_c = c;
      bp_h = h;
      bp_w = w;
      bp_saved = true;
    }

    if (g.fv2[static_cast<size_t>(bi - 1)]) {
      if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("instantiate: pool after bundle " + std::to_string(bi) +
                                    " needs even dims, has " + std::to_string(h) + "x" +
                                    std::to_string(w));
      }
      SpecLayer l{SpecLayerKind::MaxPool2, "pool" + std::to_string(bi), c, c,
                  h, w, h / 2, w / 2, bi - 1, false, false};
      push(l);
      h /= 2;
      w /= 2;
    }
  }

  // Head: biased 1x1 conv to 10 channels (2 anchors x 5 values), no BN after.
  SpecLayer head{SpecLayerKind::PwConv1, "head.pwconv1", c, spec.head_channels,
                 h, w, h, w, g.depth, false, true};
  push(head);
  spec.grid_h = h;
  spec.grid_w = w;
  if (spec.grid_h < 1 || spec.grid_w < 1) {
    throw std::invalid_argument("instantiate: head grid collapsed to zero");
  }
  return spec;
}

int64_t param_count(const NetworkSpec& spec) {
  int64_t n = 0;
  for (const SpecLayer& l : spec.layers) {
    switch (l.kind) {
      case SpecLayerKind::DwConv3:
        n += 9 * l.out_ch + (l.has_bias ? l.out_ch : 0);
        break;
      case SpecLayerKind::PwConv1:
        n += l.in_ch * l.out_ch + (l.has_bias ? l.out_ch : 0);
        break;
      case SpecLayerKind::Bn:
        n += 2 * l.out_ch;  // gamma + beta; running stats are not trainable
        break;
      default:
        break;
    }
  }
  return n;
}

int64_t macs_count(const NetworkSpec& spec) {
  int64_t n = 0;
  for (const SpecLayer& l : spec.layers) {
    switch (l.kind) {
      case SpecLayerKind::DwConv3:
        n += 9 * l.out_ch * l.out_h * l.out_w;
        break;
      case SpecLayerKind::PwConv1:
        n += l.in_ch * l.out_ch * l.out_h * l.out_w;
        break;
      default:
        break;
    }
  }
  return n;
}

NetworkGenome random_genome(Rng& rng, const GenomeBounds& bounds) {
  bounds.validate();
  NetworkGenome g;
  g.bundle_id = bounds.bundle_ids[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int64_t>(bounds.bundle_ids.size()) - 1))];
  g.depth = bounds.depth;
  g.fv1.resize(static_cast<size_t>(bounds.depth));
  for (auto& wv : g.fv1) {
    wv = bounds.width_alphabet[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(bounds.width_alphabet.size()) - 1))];
  }
  g.fv2.assign(static_cast<size_t>(bounds.depth), 0);
  const int pools = static_cast<int>(rng.uniform_int(bounds.min_pools, bounds.max_pools));
  // Sample pool positions without replacement.
  std::vector<int> positions(static_cast<size_t>(bounds.depth));
  for (int i = 0; i < bounds.depth; ++i) positions[static_cast<size_t>(i)] = i;
  for (int k = 0; k < pools; ++k) {
    const int64_t pick = rng.uniform_int(k, bounds.depth - 1);
    std::swap(positions[static_cast<size_t>(k)], positions[static_cast<size_t>(pick)]);
    g.fv2[static_cast<size_t>(positions[static_cast<size_t>(k)])] = 1;
  }
  g.activation = Activation::Relu6;
  g.validate(&bounds);
  return g;
}

// ---- text serialization -----------------------------------------------------

std::string genome_to_text(const NetworkGenome& g) {
  std::ostringstream os;
  os << "# network genome v1\n";
  os << "bundle = " << g.bundle_id << "\n";
  os << "depth = " << g.depth << "\n";
  os << "fv1 =";
  for (int w : g.fv1) os << " " << w;
  os << "\n";
  os << "fv2 =";
  for (uint8_t m : g.fv2) os << " " << (m ? 1 : 0);
  os << "\n";
  if (g.bypass) {
    os << "bypass = " << g.bypass->source_bundle << " " << g.bypass->dest_bundle << "\n";
  } else {
    os << "bypass = none\n";
  }
  os << "activation = " << (g.activation == Activation::Relu6 ? "relu6" : "relu") << "\n";
  return os.str();
}

NetworkGenome genome_from_text(const std::string& text) {
  NetworkGenome g;
  std::istringstream is(text);
  std::string line;
  bool saw_depth = false;
  while (std::getline(is, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(val);
    std::istringstream vs(val);
    if (key == "bundle") {
      vs >> g.bundle_id;
    } else if (key == "depth") {
      vs >> g.depth;
      saw_depth = true;
    } else if (key == "fv1") {
      int w;
      g.fv1.clear();
      while (vs >> w) g.fv1.push_back(w);
    } else if (key == "fv2") {
      int m;
      g.fv2.clear();
      while (vs >> m) g.fv2.push_back(static_cast<uint8_t>(m ? 1 : 0));
    } else if (key == "bypass") {
      if (val != "none") {
        Bypass bp;
        vs >> bp.source_bundle >> bp.dest_bundle;
        if (!vs) throw std::invalid_argument("genome text: bad bypass line: " + val);
        g.bypass = bp;
      }
    } else if (key == "activation") {
      if (val == "relu6") {
        g.activation = Activation::Relu6;
      } else if (val == "relu") {
        g.activation = Activation::Relu;
      } else {
        throw std::invalid_argument("genome text: unknown activation: " + val);
      }
    } else {
      throw std::invalid_argument("genome text: unknown key: " + key);
    }
  }
  if (!saw_depth) throw std::invalid_argument("genome text: missing depth");
  g.validate();
  return g;
}

void save_genome(const NetworkGenome& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write genome file: " + path);
  f << genome_to_text(g);
}

NetworkGenome load_genome(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read genome file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return genome_from_text(ss.str());
}

NetworkGenome preset_genome(char variant, int width_div) {
  if (width_div < 1) throw std::invalid_argument("preset_genome: width_div must be >= 1");
  NetworkGenome g;
  g.bundle_id = 0;
  g.activation = Activation::Relu6;
  switch (variant) {
    case 'a':
    case 'A':
      g.depth = 5;
      g.fv1 = {48, 96, 192, 384, 512};
      g.fv2 = {1, 1, 1, 0, 0};
      break;
    case 'b':
    case 'B':
      g.depth = 6;
      g.fv1 = {48, 96, 192, 384, 512, 48};
      g.fv2 = {1, 1, 1, 0, 0, 0};
      g.bypass = Bypass{3, 6};
      break;
    case 'c':
    case 'C':
      g.depth = 6;
      g.fv1 = {48, 96, 192, 384, 512, 96};
      g.fv2 = {1, 1, 1, 0, 0, 0};
      g.bypass = Bypass{3, 6};
      break;
    default:
      throw std::invalid_argument("preset_genome: variant must be a, b or c");
  }
  for (int& w : g.fv1) w = std::max(1, w / width_div);
  g.validate();
  return g;
}

}  // namespace bunas
