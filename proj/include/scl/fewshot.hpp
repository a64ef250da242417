#pragma once

#include <string>
#include <vector>

#include "scl/data.hpp"
#include "scl/model.hpp"

namespace scl {

struct EpisodeSpec {
  std::int64_t ways = 5;     // C
  std::int64_t shots = 1;    // K
  std::int64_t queries = 15; // Q per class
  std::int64_t n_episodes = 600;
  std::int64_t n_runs = 3;
  std::int64_t support_aug_copies = 5;

  void validate() const;
};

// One C-way K-shot task with class ids remapped to 0..C-1.
struct Episode {
  std::vector<LabeledImage> support;        // C*K
  std::vector<LabeledImage> query;          // C*Q
  std::vector<std::int64_t> class_ids;      // remapped id -> original id
  std::vector<std::size_t> support_sources; // dataset indices (support/query disjoint)
  std::vector<std::size_t> query_sources;
};

// Uniform class and example choice without replacement from the given pool.
Episode sample_episode(const MetaDataset& meta, const std::vector<std::int64_t>& class_pool,
                       std::int64_t ways, std::int64_t shots, std::int64_t queries,
                       RngStream& rng);

enum class FeatureMode { kGlobal, kSpatial, kBoth };
enum class BothAggregation { kSum, kMax };
FeatureMode feature_mode_from_string(const std::string& s);
BothAggregation both_aggregation_from_string(const std::string& s);
std::string to_string(FeatureMode m);
std::string to_string(BothAggregation a);

// l2-normalized global features, one row per image.
Tensor extract_global_features(const Backbone& phi, const std::vector<LabeledImage>& images);
// Spatial map max-pooled to 2x2, flattened to 4d, l2-normalized per row.
Tensor extract_spatial_features(const Backbone& phi, const std::vector<LabeledImage>& images);

struct FitOptions {
  real penalty = real(1.0);  // squared-norm coefficient on W
  std::int64_t max_iters = 1000;
  real grad_tol = real(1e-6);
  bool imprint_init = false;
};

// Multinomial logistic regression head fit on frozen features.
struct LinearClassifier {
  Tensor w;  // [C, D]
  Tensor b;  // [C]
  real penalty = 0;
  double init_loss = 0;
  double final_loss = 0;
  std::int64_t iterations = 0;

  // X [n, D] -> pre-softmax scores [n, C]
  Tensor scores(const Tensor& x) const;
  std::vector<std::int64_t> predict(const Tensor& x) const;
};

// Full-batch gradient descent with line halving on the convex objective
// mean CE + penalty * |W|^2; stops at grad-norm <= grad_tol or max_iters.
LinearClassifier fit_linear(const Tensor& x, const std::vector<std::int64_t>& labels,
                            std::int64_t n_classes, const FitOptions& opts);

// W rows = l2-normalized per-class mean features, b = 0.
LinearClassifier imprint_weights(const Tensor& x, const std::vector<std::int64_t>& labels,
                                 std::int64_t n_classes);

Tensor combine_scores(const Tensor& global_scores, const Tensor& spatial_scores,
                      BothAggregation agg);

struct EvalConfig {
  FeatureMode mode = FeatureMode::kGlobal;
  BothAggregation both_agg = BothAggregation::kSum;
  FitOptions fit;
  std::uint64_t seed = 0;
};

struct RunRecord {
  std::int64_t run = 0;
  double mean_acc = 0;
  double ci95 = 0;  // 1.96 * sample std / sqrt(n_episodes)
  std::vector<double> episode_acc;
};

struct MetricsRecord {
  std::vector<RunRecord> runs;
  double median_mean_acc = 0;
};

// Mean, 95% half-width, per the protocol statistics.
RunRecord run_stats(std::int64_t run, std::vector<double> episode_acc);

// Episodic evaluation on the meta-test split: per episode the support set is
// extended with support_aug_copies augmented copies of each image, a linear
// classifier is fit per feature mode, and query accuracy is recorded.
// Episodes use independent derived streams and reduce in index order.
MetricsRecord evaluate(const Backbone& phi, const MetaDataset& meta, const EpisodeSpec& spec,
                       const EvalConfig& cfg);

// One JSON object per run; arrays carry per-episode accuracies.
void write_metrics_jsonl(const std::string& path, const MetricsRecord& rec);
void write_metrics_csv(const std::string& path, const MetricsRecord& rec);

}  // namespace scl
