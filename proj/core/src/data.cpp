#include "bunas/data.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bunas/rng.hpp"

namespace fs = std::filesystem;

namespace bunas {

Tensor Image8::to_tensor() const {
  Tensor t(1, c, h, w);
  auto& out = t.values();
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) / 255.0;
  return t;
}

void DatasetSpec::validate() const {
  if (count < 0) throw std::invalid_argument("dataset spec: negative count");
  if (width < 8 || height < 8) throw std::invalid_argument("dataset spec: image too small");
  if (noise_level < 0 || noise_level > 1) {
    throw std::invalid_argument("dataset spec: noise level must be in [0,1]");
  }
  if (r_min <= 0 || r_max > 1.0 || r_min >= r_max) {
    throw std::invalid_argument("dataset spec: bad ratio range");
  }
  if (p_tiny < 0 || p_small < 0 || p_tiny + p_small > 1.0) {
    throw std::invalid_argument("dataset spec: mixture probabilities must be >= 0, sum <= 1");
  }
  if (fixed_ratio > 1.0) {
    throw std::invalid_argument("dataset spec: fixed ratio larger than the image");
  }
}

namespace {

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0l, 255l));
}

}  // namespace

Sample generate_sample(const DatasetSpec& spec, int index) {
  spec.validate();
  Rng rng(mix_seed({spec.seed, 0xDA7A5E7ull, static_cast<uint64_t>(index)}));

  const int64_t W = spec.width, H = spec.height;
  Image8 img;
  img.c = 3;
  img.h = H;
  img.w = W;
  img.v.resize(static_cast<size_t>(3 * H * W));

  // Textured background: smooth horizontal/vertical gradient plus white noise,
  // kept mid-range so the object can contrast against it.
  double base[3], gx[3], gy[3];
  for (int ch = 0; ch < 3; ++ch) {
    base[ch] = rng.uniform(0.3, 0.6);
    gx[ch] = rng.uniform(-0.15, 0.15);
    gy[ch] = rng.uniform(-0.15, 0.15);
  }
  for (int ch = 0; ch < 3; ++ch) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        const double fx = static_cast<double>(x) / static_cast<double>(W);
        const double fy = static_cast<double>(y) / static_cast<double>(H);
        double v = base[ch] + gx[ch] * fx + gy[ch] * fy +
                   spec.noise_level * (rng.uniform() - 0.5);
        img.v[static_cast<size_t>((ch * H + y) * W + x)] = to_byte(v);
      }
    }
  }

  // Object size from the area-ratio mixture.
  double ratio;
  if (spec.fixed_ratio >= 0) {
    ratio = spec.fixed_ratio;
  } else {
    const double u = rng.uniform();
    if (u < spec.p_tiny) {
      ratio = rng.uniform(spec.r_min, std::min(0.01, spec.r_max));
    } else if (u < spec.p_tiny + spec.p_small) {
      ratio = rng.uniform(std::min(0.01, spec.r_max), std::min(0.09, spec.r_max));
    } else {
      ratio = rng.uniform(std::min(0.09, spec.r_max), spec.r_max);
    }
  }

  const double aspect = rng.uniform(0.6, 1.7);
  const double area_px = ratio * static_cast<double>(H * W);
  int64_t bw = static_cast<int64_t>(std::llround(std::sqrt(area_px * aspect)));
  int64_t bh = static_cast<int64_t>(std::llround(std::sqrt(area_px / aspect)));
  bw = std::clamp<int64_t>(bw, 2, W);
  bh = std::clamp<int64_t>(bh, 2, H);
  if (bw > W || bh > H) throw std::invalid_argument("generate: object larger than image");
  const int64_t x0 = rng.uniform_int(0, W - bw);
  const int64_t y0 = rng.uniform_int(0, H - bh);

  // High-contrast fill: bright or dark, opposite the mid-range background.
  const bool bright = rng.bernoulli(0.5);
  double col[3];
  for (int ch = 0; ch < 3; ++ch) {
    col[ch] = bright ? rng.uniform(0.82, 1.0) : rng.uniform(0.0, 0.14);
  }
  const bool ellipse = rng.bernoulli(0.5);
  const double cx = static_cast<double>(x0) + static_cast<double>(bw) / 2.0;
  const double cy = static_cast<double>(y0) + static_cast<double>(bh) / 2.0;
  const double rx = static_cast<double>(bw) / 2.0;
  const double ry = static_cast<double>(bh) / 2.0;
  for (int64_t y = y0; y < y0 + bh; ++y) {
    for (int64_t x = x0; x < x0 + bw; ++x) {
      if (ellipse) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
        if (dx * dx + dy * dy > 1.0) continue;
      }
      for (int ch = 0; ch < 3; ++ch) {
        img.v[static_cast<size_t>((ch * H + y) * W + x)] = to_byte(col[ch]);
      }
    }
  }
  // Edge rows/columns of an ellipse must touch the box so the gt stays tight;
  // stamp the four extreme points explicitly.
  if (ellipse) {
    const int64_t mx = std::clamp<int64_t>(static_cast<int64_t>(cx), x0, x0 + bw - 1);
    const int64_t my = std::clamp<int64_t>(static_cast<int64_t>(cy), y0, y0 + bh - 1);
    const int64_t pts[4][2] = {
        {mx, y0}, {mx, y0 + bh - 1}, {x0, my}, {x0 + bw - 1, my}};
    for (auto& p : pts) {
      for (int ch = 0; ch < 3; ++ch) {
        img.v[static_cast<size_t>((ch * H + p[1]) * W + p[0])] = to_byte(col[ch]);
      }
    }
  }

  Sample s;
  s.image = std::move(img);
  s.gt = Box{static_cast<double>(x0) / static_cast<double>(W),
             static_cast<double>(y0) / static_cast<double>(H),
             static_cast<double>(x0 + bw) / static_cast<double>(W),
             static_cast<double>(y0 + bh) / static_cast<double>(H)};
  return s;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.reserve(static_cast<size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) ds.push_back(generate_sample(spec, i));
  return ds;
}

// ---- on-disk format ---------------------------------------------------------

namespace {

std::string index_name(size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

std::string fmt_full(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "boxes");
  for (size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds[i];
    const std::string stem = index_name(i);
    {
      std::ofstream f(fs::path(dir) / "images" / (stem + ".ppm"), std::ios::binary);
      if (!f) throw std::runtime_error("cannot write image " + stem);
      f << "P6\n" << s.image.w << " " << s.image.h << "\n255\n";
      // PPM is pixel-interleaved RGB.
      const int64_t hw = s.image.h * s.image.w;
      std::vector<uint8_t> row(static_cast<size_t>(3 * s.image.w));
      for (int64_t y = 0; y < s.image.h; ++y) {
        for (int64_t x = 0; x < s.image.w; ++x) {
          for (int64_t ch = 0; ch < 3; ++ch) {
            row[static_cast<size_t>(3 * x + ch)] =
                s.image.v[static_cast<size_t>(ch * hw + y * s.image.w + x)];
          }
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
      }
    }
    {
      std::ofstream f(fs::path(dir) / "boxes" / (stem + ".txt"), std::ios::binary);
      if (!f) throw std::runtime_error("cannot write box file " + stem);
      f << fmt_full(s.gt.x_min) << " " << fmt_full(s.gt.y_min) << " " << fmt_full(s.gt.x_max)
        << " " << fmt_full(s.gt.y_max) << "\n";
    }
  }
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  const fs::path images = fs::path(dir) / "images";
  const fs::path boxes = fs::path(dir) / "boxes";
  if (!fs::exists(images)) return ds;  // empty dataset, not an error

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  for (const fs::path& img_path : files) {
    Sample s;
    {
      std::ifstream f(img_path, std::ios::binary);
      if (!f) throw std::runtime_error("cannot read image " + img_path.string());
      std::string magic;
      int64_t w = 0, h = 0;
      int maxval = 0;
      f >> magic >> w >> h >> maxval;
      if (magic != "P6" || maxval != 255 || w < 1 || h < 1) {
        throw std::runtime_error("unsupported PPM header in " + img_path.string());
      }
      f.get();  // single whitespace after header
      s.image.c = 3;
      s.image.h = h;
      s.image.w = w;
      s.image.v.resize(static_cast<size_t>(3 * h * w));
      std::vector<uint8_t> row(static_cast<size_t>(3 * w));
      const int64_t hw = h * w;
      for (int64_t y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw std::runtime_error("truncated PPM payload in " + img_path.string());
        for (int64_t x = 0; x < w; ++x) {
          for (int64_t ch = 0; ch < 3; ++ch) {
            s.image.v[static_cast<size_t>(ch * hw + y * w + x)] =
                row[static_cast<size_t>(3 * x + ch)];
          }
        }
      }
    }
    const fs::path box_path = boxes / (img_path.stem().string() + ".txt");
    {
      std::ifstream f(box_path);
      if (!f) throw std::runtime_error("missing box file " + box_path.string());
      std::string line;
      std::getline(f, line);
      std::istringstream is(line);
      if (!(is >> s.gt.x_min >> s.gt.y_min >> s.gt.x_max >> s.gt.y_max)) {
        throw std::runtime_error("malformed box line at " + box_path.string() + ":1");
      }
      if (!s.gt.valid()) {
        throw std::runtime_error("invalid box (min > max) at " + box_path.string() + ":1");
      }
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            uint64_t seed) {
  if (val_fraction < 0 || val_fraction > 1) {
    throw std::invalid_argument("split: val fraction must be in [0,1]");
  }
  Dataset train, val;
  for (size_t i = 0; i < ds.size(); ++i) {
    const uint64_t h = mix_seed({seed, 0x5913Dull, static_cast<uint64_t>(i)});
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    (u < val_fraction ? val : train).push_back(ds[i]);
  }
  return {std::move(train), std::move(val)};
}

std::pair<Tensor, Box> augment_sample(const Sample& s, const AugmentOptions& opt, Rng& rng) {
  Tensor img = s.image.to_tensor();
  Box box = s.gt;
  if (!opt.enabled) return {std::move(img), box};

  const Shape4& sh = img.shape();

  // Crop a window containing the box, then nearest-resize back to full size.
  if (opt.crop_min < 1.0) {
    const double scale = rng.uniform(opt.crop_min, 1.0);
    const int64_t cw = std::max<int64_t>(8, static_cast<int64_t>(scale * static_cast<double>(sh.w)));
    const int64_t ch = std::max<int64_t>(8, static_cast<int64_t>(scale * static_cast<double>(sh.h)));
    const int64_t max_x0 =
        std::min<int64_t>(static_cast<int64_t>(box.x_min * static_cast<double>(sh.w)), sh.w - cw);
    const int64_t max_y0 =
        std::min<int64_t>(static_cast<int64_t>(box.y_min * static_cast<double>(sh.h)), sh.h - ch);
    const int64_t min_x0 =
        std::max<int64_t>(0, static_cast<int64_t>(std::ceil(box.x_max * static_cast<double>(sh.w))) - cw);
    const int64_t min_y0 =
        std::max<int64_t>(0, static_cast<int64_t>(std::ceil(box.y_max * static_cast<double>(sh.h))) - ch);
    if (min_x0 <= max_x0 && min_y0 <= max_y0) {
      const int64_t x0 = rng.uniform_int(min_x0, max_x0);
      const int64_t y0 = rng.uniform_int(min_y0, max_y0);
      Tensor crop(1, sh.c, sh.h, sh.w);
      for (int64_t c = 0; c < sh.c; ++c) {
        for (int64_t y = 0; y < sh.h; ++y) {
          const int64_t sy = y0 + y * ch / sh.h;
          for (int64_t x = 0; x < sh.w; ++x) {
            const int64_t sx = x0 + x * cw / sh.w;
            crop.at(0, c, y, x) = img.at(0, c, sy, sx);
          }
        }
      }
      img = std::move(crop);
      const double fx0 = static_cast<double>(x0) / static_cast<double>(sh.w);
      const double fy0 = static_cast<double>(y0) / static_cast<double>(sh.h);
      const double fsx = static_cast<double>(sh.w) / static_cast<double>(cw);
      const double fsy = static_cast<double>(sh.h) / static_cast<double>(ch);
      box.x_min = std::clamp((box.x_min - fx0) * fsx, 0.0, 1.0);
      box.x_max = std::clamp((box.x_max - fx0) * fsx, 0.0, 1.0);
      box.y_min = std::clamp((box.y_min - fy0) * fsy, 0.0, 1.0);
      box.y_max = std::clamp((box.y_max - fy0) * fsy, 0.0, 1.0);
    }
  }

  // Brightness/contrast jitter and per-channel distortion.
  const double gain = 1.0 + opt.jitter * (rng.uniform() - 0.5) * 2.0;
  const double shift = opt.jitter * (rng.uniform() - 0.5) * 0.5;
  for (int64_t c = 0; c < sh.c; ++c) {
    const double cgain = gain * (1.0 + opt.distort * (rng.uniform() - 0.5) * 2.0);
    for (int64_t y = 0; y < img.shape().h; ++y) {
      for (int64_t x = 0; x < img.shape().w; ++x) {
        img.at(0, c, y, x) = std::clamp(img.at(0, c, y, x) * cgain + shift, 0.0, 1.0);
      }
    }
  }
  return {std::move(img), box};
}

}  // namespace bunas
