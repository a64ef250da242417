#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scl/optim.hpp"
#include "scl/rng.hpp"
#include "scl/tensor.hpp"

namespace scl {

// Embedding-model geometry. The backbone is three conv blocks
// (3x3 conv -> relu -> 2x2 max-pool) with channel progression
// conv1 -> conv2 -> feature_dim, so input_size must be divisible by 8.
// Feature maps wider than pool_target are shrunk by adaptive average
// pooling before being flattened to spatial features.
struct ModelConfig {
  std::int64_t input_channels = 3;
  std::int64_t input_size = 16;
  std::int64_t conv1_channels = 16;
  std::int64_t conv2_channels = 32;
  std::int64_t feature_dim = 64;  // d
  std::int64_t head_dim = 16;     // d'
  std::int64_t pool_target = 3;
  std::int64_t spatial_side = 2;  // side of the flattened feature map

  void validate() const;
  // Recomputes spatial_side from input_size and pool_target.
  void finalize();
  std::int64_t spatial_locations() const { return spatial_side * spatial_side; }

  static ModelConfig desk();        // d=64, d'=16 on 16x16 inputs
  static ModelConfig paper_mini();  // d=640, d'=80 on 84x84-like inputs (recorded preset)
  static ModelConfig paper_cifar();
};

// Per-sample spatial features z^s [B, HW, d] and pooled globals z^g [B, d].
struct FeaturePack {
  Tensor spatial;
  Tensor global;
};

struct Dense {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Dense() = default;
  Dense(std::int64_t in, std::int64_t out, RngStream& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

// Two-layer perceptron in -> in -> out with a rectifier between.
struct Mlp2 {
  Dense fc1, fc2;

  Mlp2() = default;
  Mlp2(std::int64_t in, std::int64_t out, RngStream& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

// The embedding model f_phi.
class Backbone {
 public:
  Backbone(ModelConfig cfg, RngStream rng);

  // x [B, C, H0, W0] -> FeaturePack; ConfigError when x does not match the config.
  FeaturePack embed(const Tensor& x) const;

  const ModelConfig& config() const { return cfg_; }
  ParamList params();
  void freeze();

 private:
  ModelConfig cfg_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_, conv3_w_, conv3_b_;
};

struct AttentionFeatures {
  Tensor value;  // [B, HW, d'], rows unit-normalized
  Tensor query;  // [B, HW, d']
  Tensor key;    // [B, HW, d']
};

// Auxiliary parameters psi: projection head p and attention heads h_v/h_q/h_k.
// Trained jointly with the backbone and discarded before meta-testing.
struct AuxHeads {
  Mlp2 projection, value_head, query_head, key_head;
  // Re-normalize attention-mixed values before the similarity dot products.
  // Off by default; the convex mix of unit vectors is used as-is.
  bool renormalize_aligned = false;

  AuxHeads() = default;
  AuxHeads(const ModelConfig& cfg, RngStream rng);

  // f = p(z^g); no normalization here.
  Tensor project_global(const Tensor& zg) const;
  // Per-location heads; values are l2-normalized per location.
  AttentionFeatures attention_features(const Tensor& zs) const;

  ParamList params();
};

// Checkpoint container ("SCLK1" little-endian binary): magic, config block,
// manifest text, then each tensor as (name, rank, dims, raw 64-bit values).
struct Checkpoint {
  ModelConfig config;
  std::string manifest;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const ParamList& params);
  // ContractError when a requested name is absent or has a different shape.
  void restore(ParamList params) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace scl
