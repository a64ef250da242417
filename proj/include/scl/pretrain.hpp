#pragma once

#include <string>
#include <vector>

#include "scl/data.hpp"
#include "scl/losses.hpp"
#include "scl/model.hpp"
#include "scl/optim.hpp"

namespace scl {

// Which auxiliary contrastive terms accompany the CE loss.
struct Objective {
  bool use_gc = false;
  bool use_sc = false;
  bool self_supervised = false;

  // "ce", "ce+gc", "ce+sc", "ce+gc+sc", "ce+ssgc", "ce+sssc"
  static Objective parse(const std::string& s);
  std::string str() const;
};

struct TrainConfig {
  ModelConfig model;
  real lr = real(5e-2);
  real momentum = real(0.9);
  real weight_decay = real(5e-4);
  std::int64_t batch_size = 32;  // N; each step sees 2N augmented views
  std::int64_t epochs = 30;
  std::vector<std::int64_t> decay_epochs = {20, 26};
  real decay_factor = real(0.1);
  Objective objective;
  ObjectiveWeights weights;
  LossConfig loss_cfg;
  std::uint64_t seed = 1;

  void validate() const;
  // lr=5e-2, momentum=0.9, wd=5e-4, N=64, 30 epochs with decay at {20,26}
  static TrainConfig paper();
  // reduced batch on the desk-scale model
  static TrainConfig desk();
};

struct BatchInputs {
  Tensor images;                     // [2N, C, H, W]
  std::vector<std::int64_t> labels;  // duplicated: labels[i] == labels[i+N]
  std::vector<std::size_t> sources;  // source image index per view
};

// 2N views of the given N source images: the first N through standard
// augmentations, the second N (same sources, same order) through
// SimCLR-style augmentations.
BatchInputs make_contrast_views(const std::vector<LabeledImage>& sources, std::int64_t channels,
                                std::int64_t size, RngStream& rng);
BatchInputs make_train_batch(const MergedDataset& ds, const std::vector<std::size_t>& indices,
                             RngStream& rng);
// Convenience: draws N sources without replacement first.
BatchInputs make_train_batch(const MergedDataset& ds, std::int64_t n, RngStream& rng);

struct EpochStats {
  std::int64_t epoch = 0;
  double ce = 0, gc = 0, sc = 0, total = 0;
  double lr = 0;
};

struct PretrainResult {
  Backbone phi;
  AuxHeads psi;
  Dense classifier;  // CE head; retained in checkpoints for distillation
  std::vector<EpochStats> history;
};

// SGD-with-momentum minimization of
// lambda_ce*CE + lambda_sc*SC + lambda_gc*GC over the merged set.
// NumericError (with epoch and lr) when the loss leaves the finite range.
PretrainResult pretrain(const MergedDataset& ds, const TrainConfig& cfg);

struct DistillStats {
  std::int64_t generation = 0;
  std::int64_t epoch = 0;
  double cd = 0, kl = 0, total = 0;
};

struct DistillResult {
  Backbone phi;
  Dense classifier;
  std::vector<DistillStats> history;
};

// Teacher-to-student transfer minimizing lambda_cd*CD + lambda_kl*KL.
// generations > 1 repeats the process with the student as the next teacher.
// init_from_teacher starts the student as a copy instead of a fresh init.
DistillResult distill(const Backbone& teacher_phi, const Dense& teacher_classifier,
                      const MergedDataset& ds, const TrainConfig& cfg, const DistillConfig& dcfg,
                      std::int64_t generations = 1, bool init_from_teacher = false);

// Mean L2 distance between the two models' l2-normalized global features
// over (at most cap) merged images.
double mean_normalized_global_distance(const Backbone& a, const Backbone& b,
                                       const MergedDataset& ds, std::size_t cap = 256);

}  // namespace scl
