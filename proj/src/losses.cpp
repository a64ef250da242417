#include "scl/losses.hpp"

#include <cmath>
#include <iostream>

namespace scl {

namespace {
// Large finite mask; exp(x - max) underflows to zero for masked entries
// without ever producing inf * 0.
constexpr real kNegMask = real(-1e30);
}  // namespace

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "sum") return Aggregation::kSum;
  if (s == "mean") return Aggregation::kMean;
  if (s == "max") return Aggregation::kMax;
  if (s == "logsumexp") return Aggregation::kLogSumExp;
  throw ConfigError("unknown aggregation '" + s + "' (sum|mean|max|logsumexp)");
}

AnchorNorm anchor_norm_from_string(const std::string& s) {
  if (s == "sum") return AnchorNorm::kSum;
  if (s == "mean") return AnchorNorm::kMean;
  throw ConfigError("unknown anchor normalization '" + s + "' (sum|mean)");
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kSum: return "sum";
    case Aggregation::kMean: return "mean";
    case Aggregation::kMax: return "max";
    case Aggregation::kLogSumExp: return "logsumexp";
  }
  return "?";
}

std::string to_string(AnchorNorm a) {
  return a == AnchorNorm::kSum ? "sum" : "mean";
}

void LossConfig::validate() const {
  if (!(tau > 0) || !(tau_prime > 0)) {
    throw ConfigError("temperatures must be positive, got tau=" + std::to_string(tau) +
                      ", tau'=" + std::to_string(tau_prime));
  }
}

void ObjectiveWeights::validate() const {
  if (lambda_ce < 0 || lambda_sc < 0 || lambda_gc < 0) {
    throw ConfigError("objective weights must be nonnegative");
  }
}

void DistillConfig::validate() const {
  if (!(kl_temperature > 0)) throw ConfigError("kl temperature must be positive");
}

void ContrastBatch::validate() const {
  if (!features.defined() || (features.rank() != 2 && features.rank() != 3)) {
    throw ContractError("contrast batch: features must be [2N,d'] or [2N,HW,d]");
  }
  const std::int64_t b = features.dim(0);
  if (b < 2 || b % 2 != 0) {
    throw ContractError("contrast batch: batch length " + std::to_string(b) + " is not even");
  }
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw ContractError("contrast batch: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(b) + " samples");
  }
  if (n * 2 != b) {
    throw ContractError("contrast batch: N=" + std::to_string(n) + " does not match batch of " +
                        std::to_string(b));
  }
}

std::vector<std::int64_t> ss_labels(std::int64_t n) {
  if (n < 1) throw ConfigError("ss_labels: N must be >= 1");
  std::vector<std::int64_t> out(static_cast<std::size_t>(2 * n));
  for (std::int64_t i = 0; i < 2 * n; ++i) out[static_cast<std::size_t>(i)] = i % n;
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B,C]");
  const std::int64_t c = logits.dim(1);
  for (const auto y : labels) {
    if (y < 0 || y >= c) {
      throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                        std::to_string(c) + ")");
    }
  }
  const Tensor picked = take_per_row(log_softmax_rows(logits), labels);
  return mul_scalar(reduce(picked, Reduce::kMean, 0), real(-1));
}

Tensor sim_global(const Tensor& fi, const Tensor& fj) {
  if (fi.rank() != 1 || fj.rank() != 1 || fi.dim(0) != fj.dim(0)) {
    throw ShapeError("sim_global: need equal-length vectors, got " + shape_str(fi.shape()) +
                     " and " + shape_str(fj.shape()));
  }
  return reduce(mul(l2_normalize(fi), l2_normalize(fj)), Reduce::kSum, 0);
}

namespace {

// Per-anchor positive bookkeeping shared by gc_loss and sc_loss. The positive
// count of anchor i is (same-label count in the 2N batch) - 1; with labels
// duplicated across the two views this equals 2*N_{y_i} - 1. Anchors without
// positives contribute zero and are reported once.
struct AnchorInfo {
  std::vector<std::int64_t> positives;  // per anchor
  std::vector<real> coeff;              // 1/(2N_{y_i}-1), 0 when skipped
};

AnchorInfo anchor_info(const std::vector<std::int64_t>& labels, const char* loss_name) {
  const std::size_t b = labels.size();
  AnchorInfo info;
  info.positives.assign(b, 0);
  info.coeff.assign(b, real(0));
  bool warned = false;
  for (std::size_t i = 0; i < b; ++i) {
    std::int64_t same = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (labels[j] == labels[i]) ++same;
    }
    info.positives[i] = same - 1;
    if (same - 1 > 0) {
      info.coeff[i] = real(1) / static_cast<real>(same - 1);
    } else if (!warned) {
      std::cerr << loss_name << ": anchor " << i << " has no positives; it contributes 0\n";
      warned = true;
    }
  }
  return info;
}

Tensor anchor_normalize(const Tensor& loss_sum, AnchorNorm norm, std::int64_t batch) {
  if (norm == AnchorNorm::kMean) return mul_scalar(loss_sum, real(1) / static_cast<real>(batch));
  return loss_sum;
}

}  // namespace

Tensor gc_loss(const ContrastBatch& batch, const LossConfig& cfg) {
  batch.validate();
  cfg.validate();
  if (batch.features.rank() != 2) throw ContractError("gc_loss: features must be [2N,d']");
  const std::int64_t b = batch.features.dim(0);
  const AnchorInfo info = anchor_info(batch.labels, "gc_loss");

  const Tensor fn = l2_normalize(batch.features);
  const Tensor sims = mul_scalar(matmul(fn, transpose(fn)), real(1) / cfg.tau);

  // mask the diagonal out of the denominator's log-sum-exp
  Tensor diag_mask = Tensor::zeros({b, b});
  for (std::int64_t i = 0; i < b; ++i) diag_mask.at(i, i) = kNegMask;
  const Tensor denom = reduce(add(sims, diag_mask), Reduce::kLogSumExp, 1);  // [2N]

  // w_ij = coeff_i for positives j of anchor i, 0 elsewhere
  Tensor pos_w = Tensor::zeros({b, b});
  Tensor row_w = Tensor::zeros({b});
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t j = 0; j < b; ++j) {
      if (i != j && batch.labels[static_cast<std::size_t>(i)] == batch.labels[static_cast<std::size_t>(j)]) {
        pos_w.at(i, j) = info.coeff[static_cast<std::size_t>(i)];
      }
    }
    row_w.at(i) = info.coeff[static_cast<std::size_t>(i)] *
                  static_cast<real>(info.positives[static_cast<std::size_t>(i)]);
  }
  const Tensor loss_sum =
      sub(sum_all(mul(denom, row_w)), sum_all(mul(sims, pos_w)));
  return anchor_normalize(loss_sum, cfg.anchor_normalization, b);
}

Alignment align(const Tensor& v_i, const Tensor& k_i, const Tensor& q_j) {
  if (v_i.rank() != 2 || k_i.rank() != 2 || q_j.rank() != 2 || v_i.shape() != k_i.shape() ||
      v_i.shape() != q_j.shape()) {
    throw ShapeError("align: need matching [HW,d'] maps, got " + shape_str(v_i.shape()) + ", " +
                     shape_str(k_i.shape()) + ", " + shape_str(q_j.shape()));
  }
  const real scale = real(1) / std::sqrt(static_cast<real>(v_i.dim(1)));
  Alignment out;
  // row r: query location r of j attending over key locations of i
  out.weights = softmax_rows(mul_scalar(matmul(q_j, transpose(k_i)), scale));
  out.v_aligned = matmul(out.weights, v_i);
  return out;
}

namespace {

Tensor row_dots(const Tensor& a, const Tensor& b) { return reduce(mul(a, b), Reduce::kSum, 1); }

Tensor aggregate_locations(const Tensor& per_location, Aggregation agg) {
  switch (agg) {
    case Aggregation::kSum: return reduce(per_location, Reduce::kSum, 0);
    case Aggregation::kMean: return reduce(per_location, Reduce::kMean, 0);
    case Aggregation::kMax: return reduce(per_location, Reduce::kMax, 0);
    case Aggregation::kLogSumExp: return reduce(per_location, Reduce::kLogSumExp, 0);
  }
  throw ConfigError("unknown aggregation");
}

// sim_s from per-sample attention features. Both alignment directions are
// computed, per-location dots summed, then locations aggregated.
Tensor pair_spatial_sim(const Tensor& v_i, const Tensor& q_i, const Tensor& k_i,
                        const Tensor& v_j, const Tensor& q_j, const Tensor& k_j,
                        const LossConfig& cfg, bool renormalize_aligned) {
  Tensor v_i_given_j = align(v_i, k_i, q_j).v_aligned;
  Tensor v_j_given_i = align(v_j, k_j, q_i).v_aligned;
  if (renormalize_aligned) {
    v_i_given_j = l2_normalize(v_i_given_j);
    v_j_given_i = l2_normalize(v_j_given_i);
  }
  const Tensor per_loc = add(row_dots(v_i, v_j_given_i), row_dots(v_j, v_i_given_j));
  return aggregate_locations(per_loc, cfg.aggregation);
}

}  // namespace

Tensor sim_spatial(const Tensor& z_i, const Tensor& z_j, const AuxHeads& heads,
                   const LossConfig& cfg) {
  if (z_i.rank() != 2 || z_j.rank() != 2 || z_i.shape() != z_j.shape()) {
    throw ShapeError("sim_spatial: need matching [HW,d] maps, got " + shape_str(z_i.shape()) +
                     " and " + shape_str(z_j.shape()));
  }
  const std::int64_t hw = z_i.dim(0), d = z_i.dim(1);
  const AttentionFeatures fi = heads.attention_features(reshape(z_i, {1, hw, d}));
  const AttentionFeatures fj = heads.attention_features(reshape(z_j, {1, hw, d}));
  auto as_mat = [hw](const Tensor& t) { return reshape(t, {hw, t.dim(2)}); };
  return pair_spatial_sim(as_mat(fi.value), as_mat(fi.query), as_mat(fi.key), as_mat(fj.value),
                          as_mat(fj.query), as_mat(fj.key), cfg, heads.renormalize_aligned);
}

Tensor sc_loss(const ContrastBatch& batch, const AuxHeads& heads, const LossConfig& cfg) {
  batch.validate();
  cfg.validate();
  if (batch.features.rank() != 3) throw ContractError("sc_loss: features must be [2N,HW,d]");
  const std::int64_t b = batch.features.dim(0);
  const std::int64_t hw = batch.features.dim(1);
  const AnchorInfo info = anchor_info(batch.labels, "sc_loss");

  const AttentionFeatures af = heads.attention_features(batch.features);
  const std::int64_t dp = af.value.dim(2);
  const Tensor v_flat = reshape(af.value, {b * hw, dp});
  const Tensor q_flat = reshape(af.query, {b * hw, dp});
  const real scale = real(1) / std::sqrt(static_cast<real>(dp));

  // one alignment pass per anchor i against the whole batch:
  // row (j, r) of the stacked scores is q_j^r k_i^T, so a softmax_rows over
  // key locations and one matmul give v_{i|j} for every j at once.
  // per_loc[i] row j holds (v_j^r)^T v_{i|j}^r over locations r.
  std::vector<Tensor> per_loc(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const Tensor k_i = reshape(slice0(af.key, i, 1), {hw, dp});
    const Tensor v_i = reshape(slice0(af.value, i, 1), {hw, dp});
    const Tensor weights = softmax_rows(mul_scalar(matmul(q_flat, transpose(k_i)), scale));
    Tensor aligned = matmul(weights, v_i);  // [b*hw, dp]
    if (heads.renormalize_aligned) aligned = l2_normalize(aligned);
    const Tensor dots = reduce(mul(aligned, v_flat), Reduce::kSum, 1);  // [b*hw]
    per_loc[static_cast<std::size_t>(i)] = reshape(dots, {b, hw});
  }

  // pairwise similarities; Eq. 6 aggregates the per-location sum of both
  // alignment directions, and sim_s is symmetric in (i, j)
  std::vector<std::vector<Tensor>> sims(static_cast<std::size_t>(b),
                                        std::vector<Tensor>(static_cast<std::size_t>(b)));
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t j = i + 1; j < b; ++j) {
      const Tensor from_i = reshape(slice0(per_loc[static_cast<std::size_t>(i)], j, 1), {hw});
      const Tensor from_j = reshape(slice0(per_loc[static_cast<std::size_t>(j)], i, 1), {hw});
      Tensor s = aggregate_locations(add(from_i, from_j), cfg.aggregation);
      sims[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s;
      sims[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = s;
    }
  }

  const real inv_tau = real(1) / cfg.tau_prime;
  std::vector<Tensor> contributions;
  for (std::int64_t i = 0; i < b; ++i) {
    const real ci = info.coeff[static_cast<std::size_t>(i)];
    if (ci == real(0)) continue;
    std::vector<Tensor> others;
    std::vector<Tensor> positives;
    others.reserve(static_cast<std::size_t>(b - 1));
    for (std::int64_t j = 0; j < b; ++j) {
      if (j == i) continue;
      others.push_back(sims[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
      if (batch.labels[static_cast<std::size_t>(j)] == batch.labels[static_cast<std::size_t>(i)]) {
        positives.push_back(sims[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
      }
    }
    const Tensor denom =
        reduce(mul_scalar(stack_scalars(others), inv_tau), Reduce::kLogSumExp, 0);
    const Tensor pos_sum = reduce(stack_scalars(positives), Reduce::kSum, 0);
    // coeff * sum_j (denom - s_ij/tau')
    Tensor contrib = sub(mul_scalar(denom, ci * static_cast<real>(positives.size())),
                         mul_scalar(pos_sum, ci * inv_tau));
    contributions.push_back(contrib);
  }
  if (contributions.empty()) return Tensor::scalar(0);
  const Tensor loss_sum = reduce(stack_scalars(contributions), Reduce::kSum, 0);
  return anchor_normalize(loss_sum, cfg.anchor_normalization, b);
}

Tensor total_loss(const Tensor& ce, const Tensor& gc, const Tensor& sc,
                  const ObjectiveWeights& w) {
  w.validate();
  return add(add(mul_scalar(ce, w.lambda_ce), mul_scalar(sc, w.lambda_sc)),
             mul_scalar(gc, w.lambda_gc));
}

Tensor kl_distill(const Tensor& student_logits, const Tensor& teacher_logits, real temperature) {
  if (!(temperature > 0)) throw ConfigError("kl_distill: temperature must be positive");
  if (student_logits.rank() != 2 || student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("kl_distill: logits must share shape, got " +
                     shape_str(student_logits.shape()) + " and " +
                     shape_str(teacher_logits.shape()));
  }
  const std::int64_t b = student_logits.dim(0), c = student_logits.dim(1);
  // teacher distribution and its entropy term, plain constants
  Tensor p = Tensor::zeros({b, c});
  real p_logp = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    real mx = teacher_logits.at(i, 0) / temperature;
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, teacher_logits.at(i, j) / temperature);
    real denom = 0;
    for (std::int64_t j = 0; j < c; ++j) denom += std::exp(teacher_logits.at(i, j) / temperature - mx);
    for (std::int64_t j = 0; j < c; ++j) {
      const real pij = std::exp(teacher_logits.at(i, j) / temperature - mx) / denom;
      p.at(i, j) = pij;
      if (pij > 0) p_logp += pij * std::log(pij);
    }
  }
  const Tensor student_ls = log_softmax_rows(mul_scalar(student_logits, real(1) / temperature));
  const Tensor cross = sum_all(mul(p, student_ls));
  const real scale = temperature * temperature / static_cast<real>(b);
  // T^2/B * (sum_i p log p - sum_i p log q)
  return mul_scalar(add_scalar(mul_scalar(cross, real(-1)), p_logp), scale);
}

Tensor cd_loss(const FeaturePack& teacher, const FeaturePack& student, const DistillConfig& cfg) {
  cfg.validate();
  if (student.global.shape() != teacher.global.shape() ||
      student.spatial.shape() != teacher.spatial.shape()) {
    throw ContractError("cd_loss: teacher and student feature shapes differ (" +
                        shape_str(teacher.global.shape()) + " vs " +
                        shape_str(student.global.shape()) + ", " +
                        shape_str(teacher.spatial.shape()) + " vs " +
                        shape_str(student.spatial.shape()) + ")");
  }
  const std::int64_t b = student.global.dim(0);
  Tensor out = Tensor::scalar(0);
  if (cfg.alpha != real(0)) {
    const Tensor diff = sub(l2_normalize(student.global), l2_normalize(teacher.global.detach()));
    const Tensor per_sample = reduce(mul(diff, diff), Reduce::kSum, 1);  // [B]
    out = add(out, mul_scalar(reduce(per_sample, Reduce::kMean, 0), cfg.alpha));
  }
  if (cfg.beta != real(0)) {
    const Tensor diff = sub(l2_normalize(student.spatial), l2_normalize(teacher.spatial.detach()));
    const Tensor sq = mul(diff, diff);  // [B,HW,d]
    const Tensor flat = reshape(sq, {b, sq.numel() / b});
    const Tensor per_sample = reduce(flat, Reduce::kSum, 1);
    out = add(out, mul_scalar(reduce(per_sample, Reduce::kMean, 0), cfg.beta));
  }
  return out;
}

}  // namespace scl
