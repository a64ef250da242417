#pragma once

#include "scl/fewshot.hpp"
#include "scl/losses.hpp"
#include "scl/optim.hpp"
#include "scl/pretrain.hpp"

namespace scl {

struct ProtoConfig {
  ModelConfig model;
  std::int64_t ways = 5;
  std::int64_t shots = 1;
  std::int64_t queries = 3;
  std::int64_t n_episodes = 300;
  real lambda_ce = real(1.0);
  real lambda_gc = real(0.5);
  real lambda_sc = real(0.5);
  bool use_gc = false;
  bool use_sc = false;
  bool self_supervised = false;
  LossConfig loss_cfg;
  real lr = real(1e-3);  // adaptive-moment optimizer
  std::uint64_t seed = 1;

  void validate() const;
  // 5-way 5-shot with 16 query images, lambda 1.0/0.5/0.5
  static ProtoConfig paper();
  static ProtoConfig desk();
};

// Per-class mean of global features; every class in [0, ways) must appear.
Tensor prototypes(const Tensor& support_global, const std::vector<std::int64_t>& labels,
                  std::int64_t ways);

// logit[q, c] = -|z_q - p_c|^2.
Tensor proto_logits(const Tensor& query_global, const Tensor& protos);

struct EpisodeLosses {
  double ce = 0, gc = 0, sc = 0, total = 0;
  std::int64_t contrast_batch = 0;  // 2 * C * (K + Q)
};

// One episodic update: CE over prototype distances of the un-augmented
// queries, contrastive losses over the merged support+query set duplicated
// through the two augmentation families, one Adam step.
EpisodeLosses episodic_train_step(const Episode& episode, Backbone& phi, AuxHeads& psi,
                                  const ProtoConfig& cfg, Adam& opt, RngStream& rng);

struct ProtoResult {
  Backbone phi;
  AuxHeads psi;
  std::vector<EpisodeLosses> history;
};

// Episodic meta-training on the train split.
ProtoResult train_protonet(const MetaDataset& meta, const ProtoConfig& cfg);

}  // namespace scl
