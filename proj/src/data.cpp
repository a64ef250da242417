#include "scl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace scl {

void MetaDataset::validate() const {
  std::set<std::int64_t> seen;
  for (const auto* split : {&train_classes, &val_classes, &test_classes}) {
    for (const std::int64_t c : *split) {
      if (!seen.insert(c).second) {
        throw ContractError("meta dataset: class " + std::to_string(c) +
                            " appears in more than one split");
      }
    }
  }
  for (const auto& img : images) {
    if (seen.find(img.label) == seen.end()) {
      throw ContractError("meta dataset: image label " + std::to_string(img.label) +
                          " is not in any split");
    }
    if (static_cast<std::int64_t>(img.pixels.size()) != channels * image_size * image_size) {
      throw ContractError("meta dataset: image pixel count does not match header");
    }
  }
}

std::vector<std::size_t> MetaDataset::indices_of_class(std::int64_t cls) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].label == cls) out.push_back(i);
  }
  return out;
}

namespace {

float clamp01(double v) { return static_cast<float>(v < 0 ? 0 : (v > 1 ? 1 : v)); }

// One of three procedural pattern families per class; p indexes variants
// within a family. Returns the mono pattern value in [0,1] at pixel (x, y).
double pattern_value(std::int64_t family, std::int64_t p, double x, double y, double size,
                     double jitter_a, double jitter_b) {
  constexpr double kPi = 3.14159265358979323846;
  switch (family) {
    case 0: {  // oriented stripes
      const double angle = kPi * static_cast<double>(p) / 8.0 + kPi / 16.0 + 0.03 * jitter_a;
      const double along = x * std::cos(angle) + y * std::sin(angle);
      return 0.5 + 0.42 * std::sin(2.0 * kPi * 2.5 * along / size + 0.35 * jitter_b);
    }
    case 1: {  // blob position (3x3 grid without the center)
      static const int kPos[8][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}, {2, 2}};
      const int gx = kPos[p % 8][0], gy = kPos[p % 8][1];
      const double cx = (gx + 0.5) * size / 3.0 + jitter_a;
      const double cy = (gy + 0.5) * size / 3.0 + jitter_b;
      const double sigma = size / 6.5;
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      return 0.15 + 0.8 * std::exp(-d2 / (2.0 * sigma * sigma));
    }
    default: {  // frequency texture
      const double fx = 1.5 + static_cast<double>(p % 4);
      const double fy = 1.5 + static_cast<double>(p / 4 % 2) * 2.0;
      return 0.5 + 0.42 * std::sin(2.0 * kPi * fx * x / size + 0.35 * jitter_a) *
                       std::sin(2.0 * kPi * fy * y / size + 0.35 * jitter_b);
    }
  }
}

}  // namespace

MetaDataset synth_generate(const SynthConfig& cfg) {
  if (cfg.n_classes < 10) {
    throw ConfigError("synth_generate: need n_classes >= 10, got " +
                      std::to_string(cfg.n_classes));
  }
  if (cfg.per_class < 2) {
    throw ConfigError("synth_generate: need per_class >= 2, got " + std::to_string(cfg.per_class));
  }
  if (cfg.image_size < 8 || cfg.channels < 1) {
    throw ConfigError("synth_generate: need image_size >= 8 and channels >= 1");
  }
  std::int64_t n_train = cfg.train_classes;
  if (n_train < 0) n_train = (cfg.n_classes * 2 + 1) / 3;
  const std::int64_t n_val = cfg.val_classes;
  const std::int64_t n_test = cfg.n_classes - n_train - n_val;
  if (n_train < 1 || n_val < 0 || n_test < 1) {
    throw ConfigError("synth_generate: split " + std::to_string(n_train) + "/" +
                      std::to_string(n_val) + "/" + std::to_string(n_test) + " is invalid");
  }

  MetaDataset out;
  out.channels = cfg.channels;
  out.image_size = cfg.image_size;
  for (std::int64_t c = 0; c < cfg.n_classes; ++c) {
    if (c < n_train) {
      out.train_classes.push_back(c);
    } else if (c < n_train + n_val) {
      out.val_classes.push_back(c);
    } else {
      out.test_classes.push_back(c);
    }
  }
  {
    std::ostringstream params;
    params << "n_classes=" << cfg.n_classes << "\nper_class=" << cfg.per_class
           << "\nimage_size=" << cfg.image_size << "\nchannels=" << cfg.channels
           << "\ntrain_classes=" << n_train << "\nval_classes=" << n_val << "\nseed=" << cfg.seed
           << "\nnoise=" << cfg.noise << "\n";
    out.generator_params = params.str();
  }

  const double size = static_cast<double>(cfg.image_size);
  for (std::int64_t c = 0; c < cfg.n_classes; ++c) {
    const std::int64_t family = c % 3;
    const std::int64_t p = c / 3;
    for (std::int64_t i = 0; i < cfg.per_class; ++i) {
      RngStream rng(cfg.seed, "image", {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
      const double jitter_a = rng.uniform(-1, 1);
      const double jitter_b = rng.uniform(-1, 1);
      // class-irrelevant photometric nuisance, all scaled by cfg.noise:
      // global brightness/contrast and per-channel gains vary per image so
      // that only the spatial structure identifies the class
      const double brightness = cfg.noise * rng.uniform(-2.0, 2.0);
      const double contrast = 1.0 + cfg.noise * rng.uniform(-2.0, 2.0);
      std::vector<double> ch_gain(static_cast<std::size_t>(cfg.channels));
      for (auto& g : ch_gain) g = 1.0 + cfg.noise * rng.uniform(-1.5, 1.5);
      LabeledImage img;
      img.label = c;
      img.pixels.resize(static_cast<std::size_t>(cfg.channels * cfg.image_size * cfg.image_size));
      for (std::int64_t y = 0; y < cfg.image_size; ++y) {
        for (std::int64_t x = 0; x < cfg.image_size; ++x) {
          const double v = pattern_value(family, p, static_cast<double>(x) + 0.5,
                                         static_cast<double>(y) + 0.5, size, jitter_a, jitter_b);
          for (std::int64_t ch = 0; ch < cfg.channels; ++ch) {
            const double shaped =
                0.5 + contrast * ch_gain[static_cast<std::size_t>(ch)] * (v - 0.5);
            const double noisy = shaped + brightness + cfg.noise * rng.uniform(-1, 1);
            img.pixels[static_cast<std::size_t>((ch * cfg.image_size + y) * cfg.image_size + x)] =
                clamp01(noisy);
          }
        }
      }
      out.images.push_back(std::move(img));
    }
  }
  out.validate();
  return out;
}

MergedDataset merge_tasks(const MetaDataset& meta) {
  meta.validate();
  MergedDataset out;
  out.channels = meta.channels;
  out.image_size = meta.image_size;
  out.n_classes = static_cast<std::int64_t>(meta.train_classes.size());
  out.original_class_ids = meta.train_classes;
  // stable order: train classes in split order, images in dataset order
  for (std::size_t dense = 0; dense < meta.train_classes.size(); ++dense) {
    const std::int64_t cls = meta.train_classes[dense];
    for (const auto idx : meta.indices_of_class(cls)) {
      LabeledImage img = meta.images[idx];
      img.label = static_cast<std::int64_t>(dense);
      out.images.push_back(std::move(img));
    }
  }
  return out;
}

LabeledImage crop_shift(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                        std::int64_t dx, std::int64_t dy) {
  LabeledImage out;
  out.label = img.label;
  out.pixels.resize(img.pixels.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        std::int64_t sx = std::clamp(x + dx, std::int64_t(0), size - 1);
        std::int64_t sy = std::clamp(y + dy, std::int64_t(0), size - 1);
        out.pixels[static_cast<std::size_t>((c * size + y) * size + x)] =
            img.pixels[static_cast<std::size_t>((c * size + sy) * size + sx)];
      }
    }
  }
  return out;
}

LabeledImage channel_affine(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                            const std::vector<double>& gains, const std::vector<double>& biases) {
  LabeledImage out;
  out.label = img.label;
  out.pixels.resize(img.pixels.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t i = 0; i < size * size; ++i) {
      const std::size_t k = static_cast<std::size_t>(c * size * size + i);
      out.pixels[k] = clamp01(gains[static_cast<std::size_t>(c)] * img.pixels[k] +
                              biases[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

LabeledImage hflip(const LabeledImage& img, std::int64_t channels, std::int64_t size) {
  LabeledImage out;
  out.label = img.label;
  out.pixels.resize(img.pixels.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        out.pixels[static_cast<std::size_t>((c * size + y) * size + x)] =
            img.pixels[static_cast<std::size_t>((c * size + y) * size + (size - 1 - x))];
      }
    }
  }
  return out;
}

LabeledImage resized_crop(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                          std::int64_t x0, std::int64_t y0, std::int64_t side) {
  LabeledImage out;
  out.label = img.label;
  out.pixels.resize(img.pixels.size());
  const double scale = static_cast<double>(side) / static_cast<double>(size);
  for (std::int64_t c = 0; c < channels; ++c) {
    const float* src = img.pixels.data() + c * size * size;
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        // bilinear sample inside the crop window
        const double sx = (static_cast<double>(x) + 0.5) * scale - 0.5 + static_cast<double>(x0);
        const double sy = (static_cast<double>(y) + 0.5) * scale - 0.5 + static_cast<double>(y0);
        const std::int64_t ix = static_cast<std::int64_t>(std::floor(sx));
        const std::int64_t iy = static_cast<std::int64_t>(std::floor(sy));
        const double fx = sx - static_cast<double>(ix);
        const double fy = sy - static_cast<double>(iy);
        auto at = [&](std::int64_t xx, std::int64_t yy) {
          xx = std::clamp(xx, std::int64_t(0), size - 1);
          yy = std::clamp(yy, std::int64_t(0), size - 1);
          return static_cast<double>(src[yy * size + xx]);
        };
        const double v = (1 - fy) * ((1 - fx) * at(ix, iy) + fx * at(ix + 1, iy)) +
                         fy * ((1 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1));
        out.pixels[static_cast<std::size_t>((c * size + y) * size + x)] = clamp01(v);
      }
    }
  }
  return out;
}

LabeledImage grayscale(const LabeledImage& img, std::int64_t channels, std::int64_t size) {
  LabeledImage out;
  out.label = img.label;
  out.pixels.resize(img.pixels.size());
  for (std::int64_t i = 0; i < size * size; ++i) {
    double mean = 0;
    for (std::int64_t c = 0; c < channels; ++c) {
      mean += img.pixels[static_cast<std::size_t>(c * size * size + i)];
    }
    mean /= static_cast<double>(channels);
    for (std::int64_t c = 0; c < channels; ++c) {
      out.pixels[static_cast<std::size_t>(c * size * size + i)] = static_cast<float>(mean);
    }
  }
  return out;
}

LabeledImage standard_aug(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                          RngStream& rng) {
  const std::int64_t dx = rng.uniform_int(-2, 2);
  const std::int64_t dy = rng.uniform_int(-2, 2);
  std::vector<double> gains(static_cast<std::size_t>(channels)), biases(static_cast<std::size_t>(channels));
  for (auto& g : gains) g = rng.uniform(0.8, 1.2);
  for (auto& b : biases) b = rng.uniform(-0.1, 0.1);
  const bool flip = rng.bernoulli(0.5);
  LabeledImage out = crop_shift(img, channels, size, dx, dy);
  out = channel_affine(out, channels, size, gains, biases);
  if (flip) out = hflip(out, channels, size);
  return out;
}

LabeledImage simclr_aug(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                        RngStream& rng) {
  const double area = rng.uniform(0.5, 1.0);
  std::int64_t side = static_cast<std::int64_t>(std::lround(std::sqrt(area) * static_cast<double>(size)));
  side = std::clamp(side, std::int64_t(1), size);
  const std::int64_t x0 = rng.uniform_int(0, size - side);
  const std::int64_t y0 = rng.uniform_int(0, size - side);
  std::vector<double> gains(static_cast<std::size_t>(channels)), biases(static_cast<std::size_t>(channels));
  for (auto& g : gains) g = rng.uniform(0.6, 1.4);
  for (auto& b : biases) b = rng.uniform(-0.1, 0.1);
  const bool flip = rng.bernoulli(0.5);
  const bool gray = rng.bernoulli(0.2);
  LabeledImage out = resized_crop(img, channels, size, x0, y0, side);
  out = channel_affine(out, channels, size, gains, biases);
  if (flip) out = hflip(out, channels, size);
  if (gray) out = grayscale(out, channels, size);
  return out;
}

namespace {

constexpr char kMagic[5] = {'S', 'C', 'L', 'D', '1'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

struct Reader {
  std::ifstream in;
  std::size_t offset = 0;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {}
  void need(char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw FormatError(std::string("dataset truncated while reading ") + what, offset);
    }
    offset += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    need(reinterpret_cast<char*>(&v), 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    need(reinterpret_cast<char*>(&v), 8, what);
    return v;
  }
};

}  // namespace

void write_dataset(const std::string& path, const MetaDataset& data) {
  data.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open dataset file " + path + " for writing", 0);
  os.write(kMagic, 5);
  put_u32(os, static_cast<std::uint32_t>(data.channels));
  put_u32(os, static_cast<std::uint32_t>(data.image_size));
  put_u32(os, static_cast<std::uint32_t>(data.generator_params.size()));
  os.write(data.generator_params.data(), static_cast<std::streamsize>(data.generator_params.size()));
  put_u32(os, static_cast<std::uint32_t>(data.train_classes.size()));
  put_u32(os, static_cast<std::uint32_t>(data.val_classes.size()));
  put_u32(os, static_cast<std::uint32_t>(data.test_classes.size()));
  for (const auto* split : {&data.train_classes, &data.val_classes, &data.test_classes}) {
    for (const std::int64_t c : *split) put_u32(os, static_cast<std::uint32_t>(c));
  }
  put_u64(os, data.images.size());
  for (const auto& img : data.images) put_u32(os, static_cast<std::uint32_t>(img.label));
  for (const auto& img : data.images) {
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  }
  if (!os) throw FormatError("write failure on dataset file " + path, 0);
}

MetaDataset read_dataset(const std::string& path) {
  Reader r(path);
  if (!r.in) throw FormatError("cannot open dataset file " + path, 0);
  char magic[5];
  r.need(magic, 5, "magic");
  if (std::memcmp(magic, kMagic, 5) != 0) throw FormatError("bad dataset magic in " + path, 0);
  MetaDataset out;
  out.channels = r.u32("channels");
  out.image_size = r.u32("image size");
  if (out.channels < 1 || out.image_size < 1) {
    throw FormatError("dataset header has impossible geometry", r.offset);
  }
  const std::uint32_t plen = r.u32("generator params length");
  out.generator_params.resize(plen);
  if (plen > 0) r.need(out.generator_params.data(), plen, "generator params");
  const std::uint32_t n_train = r.u32("train class count");
  const std::uint32_t n_val = r.u32("val class count");
  const std::uint32_t n_test = r.u32("test class count");
  if (n_train == 0 || n_test == 0) {
    throw FormatError("dataset has an empty train or test split", r.offset);
  }
  for (std::uint32_t i = 0; i < n_train; ++i) out.train_classes.push_back(r.u32("train class id"));
  for (std::uint32_t i = 0; i < n_val; ++i) out.val_classes.push_back(r.u32("val class id"));
  for (std::uint32_t i = 0; i < n_test; ++i) out.test_classes.push_back(r.u32("test class id"));
  const std::uint64_t n_images = r.u64("image count");
  if (n_images == 0) throw FormatError("dataset holds no images", r.offset);
  out.images.resize(n_images);
  for (auto& img : out.images) img.label = r.u32("label");
  const std::size_t pix = static_cast<std::size_t>(out.channels * out.image_size * out.image_size);
  for (auto& img : out.images) {
    img.pixels.resize(pix);
    r.need(reinterpret_cast<char*>(img.pixels.data()), pix * sizeof(float), "pixels");
  }
  out.validate();
  return out;
}

}  // namespace scl
