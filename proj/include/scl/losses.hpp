#pragma once

#include <vector>

#include "scl/model.hpp"
#include "scl/tensor.hpp"

namespace scl {

// How per-location similarities are combined into one spatial similarity.
enum class Aggregation { kSum, kMean, kMax, kLogSumExp };
// How per-anchor contrastive terms are combined into the batch loss.
enum class AnchorNorm { kSum, kMean };

Aggregation aggregation_from_string(const std::string& s);
AnchorNorm anchor_norm_from_string(const std::string& s);
std::string to_string(Aggregation a);
std::string to_string(AnchorNorm a);

struct LossConfig {
  real tau = real(0.1);        // global temperature
  real tau_prime = real(0.1);  // spatial temperature
  Aggregation aggregation = Aggregation::kMean;
  AnchorNorm anchor_normalization = AnchorNorm::kSum;
  bool supervised = true;

  void validate() const;
};

struct ObjectiveWeights {
  real lambda_ce = real(1.0);
  real lambda_sc = real(1.0);
  real lambda_gc = real(1.0);

  void validate() const;
};

struct DistillConfig {
  real lambda_cd = real(10.0);
  real lambda_kl = real(1.0);
  real kl_temperature = real(4.0);
  real alpha = real(1.0);  // weight of the global feature-matching term
  real beta = real(0.0);   // weight of the spatial feature-matching term

  void validate() const;
};

// A 2N-sample contrastive batch: sample i and i+N are two augmentations of
// one source image, so labels[i] == labels[i+N] and every anchor has at
// least one positive.
struct ContrastBatch {
  Tensor features;                 // [2N, d'] projected globals or [2N, HW, d] spatial packs
  std::vector<std::int64_t> labels;  // length 2N
  std::int64_t n = 0;              // original batch size N

  void validate() const;
};

// Self-supervised labels [0..N-1, 0..N-1]: the only positive of an anchor is
// its augmentation twin.
std::vector<std::int64_t> ss_labels(std::int64_t n);

// Mean over the batch of -log softmax(logits)[label], in log-sum-exp form.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels);

// Cosine similarity of two feature vectors.
Tensor sim_global(const Tensor& fi, const Tensor& fj);

// Supervised contrastive loss over projected global features.
Tensor gc_loss(const ContrastBatch& batch, const LossConfig& cfg);

// Attention alignment of sample i onto sample j's locations:
// a = softmax_rows(q_j k_i^T / sqrt(d')), v_aligned = a v_i.
struct Alignment {
  Tensor v_aligned;  // [HW, d']
  Tensor weights;    // [HW, HW], rows sum to 1
};
Alignment align(const Tensor& v_i, const Tensor& k_i, const Tensor& q_j);

// Total spatial similarity between two spatial feature maps [HW, d].
Tensor sim_spatial(const Tensor& z_i, const Tensor& z_j, const AuxHeads& heads,
                   const LossConfig& cfg);

// Spatial contrastive loss over spatial feature packs.
Tensor sc_loss(const ContrastBatch& batch, const AuxHeads& heads, const LossConfig& cfg);

// lambda_ce*ce + lambda_sc*sc + lambda_gc*gc.
Tensor total_loss(const Tensor& ce, const Tensor& gc, const Tensor& sc,
                  const ObjectiveWeights& w);

// Temperature-scaled distillation divergence
// mean_i T^2 KL(softmax(teacher_i/T) || softmax(student_i/T)).
// The teacher side receives no gradient.
Tensor kl_distill(const Tensor& student_logits, const Tensor& teacher_logits, real temperature);

// Feature-matching distillation on normalized features:
// alpha * mean_i |zg_t - zg_s|^2 + beta * mean_i |zs_t - zs_s|^2
// (globals normalized per sample, spatial maps per location; teacher constant).
Tensor cd_loss(const FeaturePack& teacher, const FeaturePack& student, const DistillConfig& cfg);

}  // namespace scl
