#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scl/common.hpp"
#include "scl/rng.hpp"

namespace scl {

// Pixels are stored as float32 (the on-disk format) in [0,1], C*H*W order.
struct LabeledImage {
  std::vector<float> pixels;
  std::int64_t label = 0;
};

// Images grouped by class with disjoint train/val/test label spaces.
struct MetaDataset {
  std::int64_t channels = 0;
  std::int64_t image_size = 0;
  std::vector<std::int64_t> train_classes, val_classes, test_classes;
  std::vector<LabeledImage> images;
  std::string generator_params;  // key=value lines echoed into the file header

  void validate() const;  // split disjointness, label membership
  std::vector<std::size_t> indices_of_class(std::int64_t cls) const;
};

// Meta-train tasks merged into one flat set with dense labels 0..K-1.
struct MergedDataset {
  std::int64_t channels = 0;
  std::int64_t image_size = 0;
  std::int64_t n_classes = 0;
  std::vector<LabeledImage> images;
  std::vector<std::int64_t> original_class_ids;  // dense label -> meta class id
};

struct SynthConfig {
  std::int64_t n_classes = 24;
  std::int64_t per_class = 40;
  std::int64_t image_size = 16;
  std::int64_t channels = 3;
  // class counts per split; train<0 selects round(2/3 * n_classes), the
  // remainder after val goes to test
  std::int64_t train_classes = -1;
  std::int64_t val_classes = 0;
  std::uint64_t seed = 7;
  // scales the class-irrelevant corruptions (pixel noise, brightness,
  // contrast, channel gains); 0 disables them, pose jitter stays on
  double noise = 0.35;
};

// Procedural few-shot dataset: each class is one of three pattern families
// (oriented stripes, blob position, frequency texture) parameterized by the
// class id, with per-image pose jitter and noise. Deterministic in the seed.
MetaDataset synth_generate(const SynthConfig& cfg);

MergedDataset merge_tasks(const MetaDataset& meta);

// ---- augmentation primitives (deterministic building blocks) ----
// Shift by (dx, dy) in [-pad, pad] with edge replication.
LabeledImage crop_shift(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                        std::int64_t dx, std::int64_t dy);
// pixel <- gain_c * pixel + bias_c per channel, clamped to [0,1].
LabeledImage channel_affine(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                            const std::vector<double>& gains, const std::vector<double>& biases);
LabeledImage hflip(const LabeledImage& img, std::int64_t channels, std::int64_t size);
// Crop the [x0,y0]-anchored side*side square and bilinear-resize back.
LabeledImage resized_crop(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                          std::int64_t x0, std::int64_t y0, std::int64_t side);
LabeledImage grayscale(const LabeledImage& img, std::int64_t channels, std::int64_t size);

// Pad-and-crop (+-2 px), per-channel affine jitter (gain 0.8..1.2,
// bias -0.1..0.1), horizontal flip p=0.5.
LabeledImage standard_aug(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                          RngStream& rng);
// Random resized crop (area 0.5..1.0), stronger jitter (gain 0.6..1.4),
// flip p=0.5, grayscale p=0.2.
LabeledImage simclr_aug(const LabeledImage& img, std::int64_t channels, std::int64_t size,
                        RngStream& rng);

// "SCLD1" little-endian binary dataset format.
void write_dataset(const std::string& path, const MetaDataset& data);
MetaDataset read_dataset(const std::string& path);

}  // namespace scl
