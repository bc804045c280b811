#include "bunas/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bunas {

namespace {

constexpr char kMagic[8] = {'B', 'U', 'N', 'A', 'S', 'C', 'K', 'P'};
constexpr uint32_t kVersionFloat = 1;
constexpr uint32_t kVersionQuant = 2;
constexpr uint32_t kFlagFolded = 1u;

enum RecordKind : uint32_t {
  kConvW = 1,
  kConvB = 2,
  kBnGamma = 3,
  kBnBeta = 4,
  kBnMean = 5,
  kBnVar = 6,
  kQConvW = 7,
  kQConvB = 8,
};

// Explicit little-endian primitives.
void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

void put_i32(std::ostream& os, int32_t v) { put_u32(os, static_cast<uint32_t>(v)); }
void put_i64(std::ostream& os, int64_t v) { put_u64(os, static_cast<uint64_t>(v)); }

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is) {
  const uint64_t lo = get_u32(is);
  const uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

int32_t get_i32(std::istream& is) { return static_cast<int32_t>(get_u32(is)); }
int64_t get_i64(std::istream& is) { return static_cast<int64_t>(get_u64(is)); }

double get_f64(std::istream& is) {
  const uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void put_text(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_text(std::istream& is) {
  const uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated text field");
  return s;
}

std::string fmt_full(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

void put_vec_f64(std::ostream& os, uint32_t kind, uint32_t layer, const std::vector<double>& v) {
  put_u32(os, kind);
  put_u32(os, layer);
  put_u32(os, 1);
  put_u64(os, v.size());
  for (double x : v) put_f64(os, x);
}

void put_tensor_f64(std::ostream& os, uint32_t kind, uint32_t layer, const Tensor& t) {
  put_u32(os, kind);
  put_u32(os, layer);
  put_u32(os, 4);
  const Shape4& s = t.shape();
  put_u64(os, static_cast<uint64_t>(s.b));
  put_u64(os, static_cast<uint64_t>(s.c));
  put_u64(os, static_cast<uint64_t>(s.h));
  put_u64(os, static_cast<uint64_t>(s.w));
  for (double x : t.values()) put_f64(os, x);
}

struct MetaFields {
  std::array<AnchorPrior, 2> anchors{};
  InputShape input;
  int fm_bits = 0, w_bits = 0;
};

std::string meta_to_text(const std::array<AnchorPrior, 2>& anchors, const InputShape& in,
                         const QuantScheme* scheme) {
  std::ostringstream os;
  os << "anchors = " << fmt_full(anchors[0].w) << " " << fmt_full(anchors[0].h) << " "
     << fmt_full(anchors[1].w) << " " << fmt_full(anchors[1].h) << "\n";
  os << "input = " << in.c << " " << in.h << " " << in.w << "\n";
  if (scheme) os << "fm_bits = " << scheme->fm_bits << "\nw_bits = " << scheme->w_bits << "\n";
  return os.str();
}

MetaFields meta_from_text(const std::string& text) {
  MetaFields m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::istringstream vs(line.substr(eq + 1));
    const std::string key = line.substr(0, line.find(' '));
    if (key == "anchors") {
      vs >> m.anchors[0].w >> m.anchors[0].h >> m.anchors[1].w >> m.anchors[1].h;
    } else if (key == "input") {
      vs >> m.input.c >> m.input.h >> m.input.w;
    } else if (key == "fm_bits") {
      vs >> m.fm_bits;
    } else if (key == "w_bits") {
      vs >> m.w_bits;
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const Model& m, const NetworkGenome& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  put_u32(f, kVersionFloat);
  put_u32(f, m.folded() ? kFlagFolded : 0u);
  put_text(f, genome_to_text(g));
  put_text(f, meta_to_text(m.anchors(), m.spec().input, nullptr));

  uint32_t records = 0;
  for (const LayerState& st : m.layers()) {
    switch (st.spec.kind) {
      case SpecLayerKind::DwConv3:
      case SpecLayerKind::PwConv1: records += st.conv.bias ? 2 : 1; break;
      case SpecLayerKind::Bn: records += 4; break;
      default: break;
    }
  }
  put_u32(f, records);

  for (size_t li = 0; li < m.layers().size(); ++li) {
    const LayerState& st = m.layers()[li];
    const uint32_t l = static_cast<uint32_t>(li);
    switch (st.spec.kind) {
      case SpecLayerKind::DwConv3:
      case SpecLayerKind::PwConv1:
        put_tensor_f64(f, kConvW, l, st.conv.w);
        if (st.conv.bias) put_vec_f64(f, kConvB, l, *st.conv.bias);
        break;
      case SpecLayerKind::Bn:
        put_vec_f64(f, kBnGamma, l, st.bn.gamma);
        put_vec_f64(f, kBnBeta, l, st.bn.beta);
        put_vec_f64(f, kBnMean, l, st.bn.running_mean);
        put_vec_f64(f, kBnVar, l, st.bn.running_var);
        break;
      default:
        break;
    }
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

namespace {

struct Header {
  uint32_t version = 0;
  uint32_t flags = 0;
  NetworkGenome genome;
  MetaFields meta;
  uint32_t records = 0;
};

Header read_header(std::istream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  Header h;
  h.version = get_u32(f);
  if (h.version != kVersionFloat && h.version != kVersionQuant) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  h.flags = get_u32(f);
  h.genome = genome_from_text(get_text(f));
  h.meta = meta_from_text(get_text(f));
  return h;
}

std::vector<double> get_vec_f64(std::istream& f, size_t expect) {
  const uint32_t nd = get_u32(f);
  uint64_t count = 1;
  for (uint32_t i = 0; i < nd; ++i) count *= get_u64(f);
  if (count != expect) throw std::runtime_error("checkpoint: record size mismatch");
  std::vector<double> v(count);
  for (auto& x : v) x = get_f64(f);
  return v;
}

}  // namespace

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  Header h = read_header(f, path);
  if (h.version != kVersionFloat) {
    throw std::runtime_error("checkpoint is quantized; use load_quantized_checkpoint: " + path);
  }

  NetworkSpec spec = instantiate(h.genome, h.meta.input);
  if (h.flags & kFlagFolded) spec = fold_spec(spec);
  LoadedModel out{Model(std::move(spec), h.meta.anchors), h.genome};

  h.records = get_u32(f);
  for (uint32_t r = 0; r < h.records; ++r) {
    const uint32_t kind = get_u32(f);
    const uint32_t li = get_u32(f);
    if (li >= out.model.layers().size()) throw std::runtime_error("checkpoint: bad layer index");
    LayerState& st = out.model.layers()[li];
    switch (kind) {
      case kConvW: {
        auto v = get_vec_f64(f, static_cast<size_t>(st.conv.w.size()));
        st.conv.w.values() = std::move(v);
        break;
      }
      case kConvB: {
        if (!st.conv.bias) st.conv.bias = std::vector<double>();
        *st.conv.bias = get_vec_f64(f, static_cast<size_t>(st.spec.out_ch));
        break;
      }
      case kBnGamma: st.bn.gamma = get_vec_f64(f, st.bn.gamma.size()); break;
      case kBnBeta: st.bn.beta = get_vec_f64(f, st.bn.beta.size()); break;
      case kBnMean: st.bn.running_mean = get_vec_f64(f, st.bn.running_mean.size()); break;
      case kBnVar: st.bn.running_var = get_vec_f64(f, st.bn.running_var.size()); break;
      default:
        throw std::runtime_error("checkpoint: unknown record kind");
    }
  }
  return out;
}

void save_quantized_checkpoint(const QuantizedModel& m, const NetworkGenome& g,
                               const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  put_u32(f, kVersionQuant);
  put_u32(f, kFlagFolded);
  put_text(f, genome_to_text(g));
  const QuantScheme scheme = m.scheme();
  put_text(f, meta_to_text(m.anchors(), m.spec().input, &scheme));

  // Feature-map format table: input first, then one per layer output.
  put_u32(f, static_cast<uint32_t>(m.qlayers().size() + 1));
  put_i32(f, m.input_fmt().bits);
  put_i32(f, m.input_fmt().frac_bits);
  for (const auto& ql : m.qlayers()) {
    put_i32(f, ql.out_fmt.bits);
    put_i32(f, ql.out_fmt.frac_bits);
  }

  uint32_t records = 0;
  for (const auto& ql : m.qlayers()) {
    if (!ql.w.q.empty()) records += 2;
  }
  put_u32(f, records);
  for (size_t li = 0; li < m.qlayers().size(); ++li) {
    const auto& ql = m.qlayers()[li];
    if (ql.w.q.empty()) continue;
    put_u32(f, kQConvW);
    put_u32(f, static_cast<uint32_t>(li));
    put_i32(f, ql.w.fmt.bits);
    put_i32(f, ql.w.fmt.frac_bits);
    put_u32(f, 4);
    put_u64(f, static_cast<uint64_t>(ql.w.shape.b));
    put_u64(f, static_cast<uint64_t>(ql.w.shape.c));
    put_u64(f, static_cast<uint64_t>(ql.w.shape.h));
    put_u64(f, static_cast<uint64_t>(ql.w.shape.w));
    for (int32_t x : ql.w.q) put_i32(f, x);

    put_u32(f, kQConvB);
    put_u32(f, static_cast<uint32_t>(li));
    put_i32(f, 64);  // accumulator width
    put_i32(f, 0);
    put_u32(f, 1);
    put_u64(f, ql.bias_q.size());
    for (int64_t x : ql.bias_q) put_i64(f, x);
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedQuantizedModel load_quantized_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  Header h = read_header(f, path);
  if (h.version != kVersionQuant) {
    throw std::runtime_error("checkpoint is not quantized: " + path);
  }
  NetworkSpec spec = fold_spec(instantiate(h.genome, h.meta.input));
  QuantScheme scheme{h.meta.fm_bits, h.meta.w_bits};
  scheme.validate();
  LoadedQuantizedModel out{QuantizedModel(std::move(spec), h.meta.anchors, scheme), h.genome};

  const uint32_t fm_count = get_u32(f);
  if (fm_count != out.model.qlayers().size() + 1) {
    throw std::runtime_error("checkpoint: feature-map table does not match the genome");
  }
  FixedFormat in_fmt{get_i32(f), get_i32(f)};
  out.model.set_input_fmt(in_fmt);
  for (auto& ql : out.model.qlayers()) {
    ql.out_fmt.bits = get_i32(f);
    ql.out_fmt.frac_bits = get_i32(f);
  }

  const uint32_t records = get_u32(f);
  for (uint32_t r = 0; r < records; ++r) {
    const uint32_t kind = get_u32(f);
    const uint32_t li = get_u32(f);
    if (li >= out.model.qlayers().size()) throw std::runtime_error("checkpoint: bad layer index");
    auto& ql = out.model.qlayers()[li];
    const int32_t bits = get_i32(f);
    const int32_t frac = get_i32(f);
    const uint32_t nd = get_u32(f);
    uint64_t dims[4] = {1, 1, 1, 1};
    uint64_t count = 1;
    for (uint32_t i = 0; i < nd; ++i) {
      dims[i] = get_u64(f);
      count *= dims[i];
    }
    if (kind == kQConvW) {
      ql.w.fmt = FixedFormat{bits, frac};
      ql.w.shape = Shape4{static_cast<int64_t>(dims[0]), static_cast<int64_t>(dims[1]),
                          static_cast<int64_t>(dims[2]), static_cast<int64_t>(dims[3])};
      ql.w.q.resize(count);
      for (auto& x : ql.w.q) x = get_i32(f);
    } else if (kind == kQConvB) {
      ql.bias_q.resize(count);
      for (auto& x : ql.bias_q) x = get_i64(f);
    } else {
      throw std::runtime_error("checkpoint: unknown quantized record kind");
    }
  }
  return out;
}

bool checkpoint_is_quantized(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  return get_u32(f) == kVersionQuant;
}

}  // namespace bunas
