#include "scl/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "scl/parallel.hpp"

namespace scl {

void EpisodeSpec::validate() const {
  if (ways < 2) throw ConfigError("episode spec: ways must be >= 2");
  if (shots < 1 || queries < 1) throw ConfigError("episode spec: shots and queries must be >= 1");
  if (n_episodes < 1 || n_runs < 1) throw ConfigError("episode spec: episodes and runs must be >= 1");
  if (support_aug_copies < 0) throw ConfigError("episode spec: aug copies must be >= 0");
}

Episode sample_episode(const MetaDataset& meta, const std::vector<std::int64_t>& class_pool,
                       std::int64_t ways, std::int64_t shots, std::int64_t queries,
                       RngStream& rng) {
  if (static_cast<std::int64_t>(class_pool.size()) < ways) {
    throw ConfigError("sample_episode: pool of " + std::to_string(class_pool.size()) +
                      " classes cannot host " + std::to_string(ways) + "-way tasks");
  }
  std::vector<std::int64_t> pool = class_pool;
  rng.shuffle(pool.data(), static_cast<std::int64_t>(pool.size()));
  pool.resize(static_cast<std::size_t>(ways));

  Episode ep;
  ep.class_ids = pool;
  for (std::int64_t c = 0; c < ways; ++c) {
    std::vector<std::size_t> idx = meta.indices_of_class(pool[static_cast<std::size_t>(c)]);
    if (static_cast<std::int64_t>(idx.size()) < shots + queries) {
      throw ConfigError("sample_episode: class " + std::to_string(pool[static_cast<std::size_t>(c)]) +
                        " holds " + std::to_string(idx.size()) + " images, needs " +
                        std::to_string(shots + queries));
    }
    rng.shuffle(idx.data(), static_cast<std::int64_t>(idx.size()));
    for (std::int64_t k = 0; k < shots; ++k) {
      LabeledImage img = meta.images[idx[static_cast<std::size_t>(k)]];
      img.label = c;
      ep.support.push_back(std::move(img));
      ep.support_sources.push_back(idx[static_cast<std::size_t>(k)]);
    }
    for (std::int64_t q = 0; q < queries; ++q) {
      LabeledImage img = meta.images[idx[static_cast<std::size_t>(shots + q)]];
      img.label = c;
      ep.query.push_back(std::move(img));
      ep.query_sources.push_back(idx[static_cast<std::size_t>(shots + q)]);
    }
  }
  return ep;
}

FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "global") return FeatureMode::kGlobal;
  if (s == "spatial") return FeatureMode::kSpatial;
  if (s == "both") return FeatureMode::kBoth;
  throw ConfigError("unknown feature mode '" + s + "' (global|spatial|both)");
}

BothAggregation both_aggregation_from_string(const std::string& s) {
  if (s == "sum") return BothAggregation::kSum;
  if (s == "max") return BothAggregation::kMax;
  throw ConfigError("unknown score aggregation '" + s + "' (sum|max)");
}

std::string to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::kGlobal: return "global";
    case FeatureMode::kSpatial: return "spatial";
    case FeatureMode::kBoth: return "both";
  }
  return "?";
}

std::string to_string(BothAggregation a) {
  return a == BothAggregation::kSum ? "sum" : "max";
}

namespace {

Tensor batch_tensor(const std::vector<LabeledImage>& images, const ModelConfig& cfg) {
  const std::int64_t b = static_cast<std::int64_t>(images.size());
  const std::int64_t per = cfg.input_channels * cfg.input_size * cfg.input_size;
  Tensor x = Tensor::zeros({b, cfg.input_channels, cfg.input_size, cfg.input_size});
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& px = images[static_cast<std::size_t>(i)].pixels;
    if (static_cast<std::int64_t>(px.size()) != per) {
      throw ContractError("extract_features: image geometry does not match the model");
    }
    for (std::int64_t j = 0; j < per; ++j) {
      x.data()[static_cast<std::size_t>(i * per + j)] = static_cast<real>(px[static_cast<std::size_t>(j)]);
    }
  }
  return x;
}

}  // namespace

Tensor extract_global_features(const Backbone& phi, const std::vector<LabeledImage>& images) {
  const Tensor x = batch_tensor(images, phi.config());
  return l2_normalize(phi.embed(x).global);
}

Tensor extract_spatial_features(const Backbone& phi, const std::vector<LabeledImage>& images) {
  const ModelConfig& cfg = phi.config();
  if (cfg.spatial_side < 2) {
    throw ConfigError("spatial feature mode needs spatial_side >= 2, config has " +
                      std::to_string(cfg.spatial_side));
  }
  const Tensor x = batch_tensor(images, cfg);
  const Tensor spatial = phi.embed(x).spatial;  // [B, HW, d]
  const std::int64_t b = spatial.dim(0), hw = spatial.dim(1), d = spatial.dim(2);
  const std::int64_t side = cfg.spatial_side;
  // back to [B, d, s, s] for pooling
  Tensor map = Tensor::zeros({b, d, side, side});
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t p = 0; p < hw; ++p) {
      for (std::int64_t c = 0; c < d; ++c) {
        map.data()[static_cast<std::size_t>(((i * d + c) * side + p / side) * side + p % side)] =
            spatial.data()[static_cast<std::size_t>((i * hw + p) * d + c)];
      }
    }
  }
  const Tensor pooled = adaptive_max_pool2d(map, 2);  // [B, d, 2, 2]
  return l2_normalize(reshape(pooled, {b, d * 4}));
}

Tensor LinearClassifier::scores(const Tensor& x) const {
  return add_rowvec(matmul(x, transpose(w)), b);
}

std::vector<std::int64_t> LinearClassifier::predict(const Tensor& x) const {
  const Tensor s = scores(x);
  std::vector<std::int64_t> out(static_cast<std::size_t>(s.dim(0)));
  for (std::int64_t i = 0; i < s.dim(0); ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < s.dim(1); ++c) {
      if (s.at(i, c) > s.at(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

namespace {

// objective, gradients, and probabilities of the regularized multinomial
// logistic regression; plain loops on raw buffers
struct LogRegWork {
  std::int64_t n, d, c;
  const real* x;
  const std::vector<std::int64_t>* y;
  real penalty;

  double objective(const std::vector<double>& w, const std::vector<double>& b) const {
    double loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      double mx = -1e300;
      std::vector<double> logits(static_cast<std::size_t>(c));
      for (std::int64_t k = 0; k < c; ++k) {
        double s = b[static_cast<std::size_t>(k)];
        for (std::int64_t j = 0; j < d; ++j) s += w[static_cast<std::size_t>(k * d + j)] * x[i * d + j];
        logits[static_cast<std::size_t>(k)] = s;
        mx = std::max(mx, s);
      }
      double denom = 0;
      for (std::int64_t k = 0; k < c; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)] - mx);
      loss += -(logits[static_cast<std::size_t>((*y)[static_cast<std::size_t>(i)])] - mx - std::log(denom));
    }
    loss /= static_cast<double>(n);
    double reg = 0;
    for (const double v : w) reg += v * v;
    return loss + static_cast<double>(penalty) * reg;
  }

  void gradient(const std::vector<double>& w, const std::vector<double>& b,
                std::vector<double>& gw, std::vector<double>& gb) const {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      double mx = -1e300;
      std::vector<double> logits(static_cast<std::size_t>(c));
      for (std::int64_t k = 0; k < c; ++k) {
        double s = b[static_cast<std::size_t>(k)];
        for (std::int64_t j = 0; j < d; ++j) s += w[static_cast<std::size_t>(k * d + j)] * x[i * d + j];
        logits[static_cast<std::size_t>(k)] = s;
        mx = std::max(mx, s);
      }
      double denom = 0;
      for (std::int64_t k = 0; k < c; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)] - mx);
      for (std::int64_t k = 0; k < c; ++k) {
        const double p = std::exp(logits[static_cast<std::size_t>(k)] - mx) / denom;
        const double delta = (p - (k == (*y)[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) /
                             static_cast<double>(n);
        gb[static_cast<std::size_t>(k)] += delta;
        for (std::int64_t j = 0; j < d; ++j) gw[static_cast<std::size_t>(k * d + j)] += delta * x[i * d + j];
      }
    }
    for (std::size_t idx = 0; idx < gw.size(); ++idx) {
      gw[idx] += 2.0 * static_cast<double>(penalty) * w[idx];
    }
  }
};

}  // namespace

LinearClassifier fit_linear(const Tensor& x, const std::vector<std::int64_t>& labels,
                            std::int64_t n_classes, const FitOptions& opts) {
  if (x.rank() != 2) throw ContractError("fit_linear: features must be [n, D]");
  if (!x.all_finite()) throw ContractError("fit_linear: non-finite features");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ContractError("fit_linear: label count does not match feature rows");
  }
  std::vector<std::int64_t> per_class(static_cast<std::size_t>(n_classes), 0);
  for (const auto yv : labels) {
    if (yv < 0 || yv >= n_classes) throw ContractError("fit_linear: label out of range");
    ++per_class[static_cast<std::size_t>(yv)];
  }
  for (std::int64_t c = 0; c < n_classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      throw ContractError("fit_linear: class " + std::to_string(c) + " has no examples");
    }
  }

  std::vector<double> w(static_cast<std::size_t>(n_classes * d), 0.0);
  std::vector<double> b(static_cast<std::size_t>(n_classes), 0.0);
  if (opts.imprint_init) {
    const LinearClassifier imprint = imprint_weights(x, labels, n_classes);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = imprint.w.data()[i];
  }

  LogRegWork work{n, d, n_classes, x.data().data(), &labels, opts.penalty};
  std::vector<double> gw(w.size()), gb(b.size());
  double cur = work.objective(w, b);
  const double init_loss = cur;
  // Per-block step sizes; the penalty curves the W block independently of b,
  // so a joint step would crawl on strongly regularized fits. Each iteration
  // retries from twice the last accepted step and halves until the objective
  // decreases; a failed search leaves the remembered step untouched.
  double step_w = 1.0, step_b = 1.0;
  std::int64_t iter = 0;
  for (; iter < opts.max_iters; ++iter) {
    work.gradient(w, b, gw, gb);
    double gnorm = 0;
    for (const double g : gw) gnorm += g * g;
    for (const double g : gb) gnorm += g * g;
    gnorm = std::sqrt(gnorm);
    if (gnorm <= static_cast<double>(opts.grad_tol)) break;

    bool any_accepted = false;
    std::vector<double> wn(w.size()), bn(b.size());
    double trial = step_w * 2.0;
    for (int halving = 0; halving < 80; ++halving) {
      for (std::size_t i = 0; i < w.size(); ++i) wn[i] = w[i] - trial * gw[i];
      const double cand = work.objective(wn, b);
      if (cand < cur) {
        w.swap(wn);
        cur = cand;
        step_w = trial;
        any_accepted = true;
        break;
      }
      trial *= 0.5;
    }
    // fresh gradient for the bias block after the W move
    work.gradient(w, b, gw, gb);
    trial = step_b * 2.0;
    for (int halving = 0; halving < 80; ++halving) {
      for (std::size_t i = 0; i < b.size(); ++i) bn[i] = b[i] - trial * gb[i];
      const double cand = work.objective(w, bn);
      if (cand < cur) {
        b.swap(bn);
        cur = cand;
        step_b = trial;
        any_accepted = true;
        break;
      }
      trial *= 0.5;
    }
    if (!any_accepted) break;  // no descent at numeric resolution
  }

  LinearClassifier out;
  out.w = Tensor::zeros({n_classes, d});
  out.b = Tensor::zeros({n_classes});
  for (std::size_t i = 0; i < w.size(); ++i) out.w.data()[i] = static_cast<real>(w[i]);
  for (std::size_t i = 0; i < b.size(); ++i) out.b.data()[i] = static_cast<real>(b[i]);
  out.penalty = opts.penalty;
  out.init_loss = init_loss;
  out.final_loss = cur;
  out.iterations = iter;
  if (!out.w.all_finite() || !out.b.all_finite()) {
    throw NumericError("fit_linear produced non-finite parameters");
  }
  return out;
}

LinearClassifier imprint_weights(const Tensor& x, const std::vector<std::int64_t>& labels,
                                 std::int64_t n_classes) {
  if (x.rank() != 2) throw ContractError("imprint_weights: features must be [n, D]");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  Tensor means = Tensor::zeros({n_classes, d});
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= n_classes) throw ContractError("imprint_weights: label out of range");
    ++counts[static_cast<std::size_t>(c)];
    for (std::int64_t j = 0; j < d; ++j) means.at(c, j) += x.at(i, j);
  }
  for (std::int64_t c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw ContractError("imprint_weights: class " + std::to_string(c) + " has no examples");
    }
    for (std::int64_t j = 0; j < d; ++j) {
      means.at(c, j) /= static_cast<real>(counts[static_cast<std::size_t>(c)]);
    }
  }
  LinearClassifier out;
  out.w = l2_normalize(means);
  out.b = Tensor::zeros({n_classes});
  return out;
}

Tensor combine_scores(const Tensor& global_scores, const Tensor& spatial_scores,
                      BothAggregation agg) {
  if (global_scores.shape() != spatial_scores.shape()) {
    throw ContractError("combine_scores: score shapes differ");
  }
  if (agg == BothAggregation::kSum) return add(global_scores, spatial_scores);
  Tensor out = Tensor::zeros(global_scores.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out.data()[static_cast<std::size_t>(i)] =
        std::max(global_scores.data()[static_cast<std::size_t>(i)],
                 spatial_scores.data()[static_cast<std::size_t>(i)]);
  }
  return out;
}

RunRecord run_stats(std::int64_t run, std::vector<double> episode_acc) {
  RunRecord rec;
  rec.run = run;
  rec.episode_acc = std::move(episode_acc);
  const std::size_t n = rec.episode_acc.size();
  double mean = 0;
  for (const double a : rec.episode_acc) mean += a;
  mean /= static_cast<double>(n);
  rec.mean_acc = mean;
  if (n > 1) {
    double var = 0;
    for (const double a : rec.episode_acc) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n - 1);
    rec.ci95 = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(n));
  }
  return rec;
}

namespace {

double score_episode(const Backbone& phi, const Episode& ep, const EpisodeSpec& spec,
                     const EvalConfig& cfg, RngStream& rng) {
  // augmented support copies supplement the originals
  std::vector<LabeledImage> support = ep.support;
  std::vector<std::int64_t> support_labels;
  for (const auto& img : ep.support) support_labels.push_back(img.label);
  const ModelConfig& mc = phi.config();
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    for (std::int64_t copy = 0; copy < spec.support_aug_copies; ++copy) {
      RngStream stream = rng.child("support_aug", {static_cast<std::uint64_t>(i),
                                                   static_cast<std::uint64_t>(copy)});
      support.push_back(simclr_aug(ep.support[i], mc.input_channels, mc.input_size, stream));
      support_labels.push_back(ep.support[i].label);
    }
  }
  std::vector<std::int64_t> query_labels;
  for (const auto& img : ep.query) query_labels.push_back(img.label);

  const std::int64_t ways = static_cast<std::int64_t>(ep.class_ids.size());
  Tensor scores;
  if (cfg.mode == FeatureMode::kGlobal || cfg.mode == FeatureMode::kBoth) {
    const Tensor xs = extract_global_features(phi, support);
    const Tensor xq = extract_global_features(phi, ep.query);
    const LinearClassifier clf = fit_linear(xs, support_labels, ways, cfg.fit);
    scores = clf.scores(xq);
  }
  if (cfg.mode == FeatureMode::kSpatial || cfg.mode == FeatureMode::kBoth) {
    const Tensor xs = extract_spatial_features(phi, support);
    const Tensor xq = extract_spatial_features(phi, ep.query);
    const LinearClassifier clf = fit_linear(xs, support_labels, ways, cfg.fit);
    const Tensor sp = clf.scores(xq);
    scores = cfg.mode == FeatureMode::kBoth ? combine_scores(scores, sp, cfg.both_agg) : sp;
  }
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < scores.dim(0); ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < scores.dim(1); ++c) {
      if (scores.at(i, c) > scores.at(i, best)) best = c;
    }
    if (best == query_labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.dim(0));
}

}  // namespace

MetricsRecord evaluate(const Backbone& phi, const MetaDataset& meta, const EpisodeSpec& spec,
                       const EvalConfig& cfg) {
  spec.validate();
  MetricsRecord out;
  for (std::int64_t run = 0; run < spec.n_runs; ++run) {
    std::vector<double> accs(static_cast<std::size_t>(spec.n_episodes), 0.0);
    // episodes are independent; accumulate in index order for determinism
#pragma omp parallel for schedule(dynamic) if (parallel_enabled())
    for (std::int64_t e = 0; e < spec.n_episodes; ++e) {
      RngStream rng(cfg.seed, "episode",
                    {static_cast<std::uint64_t>(run), static_cast<std::uint64_t>(e)});
      RngStream sample_rng = rng.child("sample");
      const Episode ep = sample_episode(meta, meta.test_classes, spec.ways, spec.shots,
                                        spec.queries, sample_rng);
      accs[static_cast<std::size_t>(e)] = score_episode(phi, ep, spec, cfg, rng);
    }
    out.runs.push_back(run_stats(run, std::move(accs)));
  }
  std::vector<double> means;
  for (const auto& r : out.runs) means.push_back(r.mean_acc);
  std::sort(means.begin(), means.end());
  const std::size_t m = means.size();
  out.median_mean_acc = m % 2 == 1 ? means[m / 2] : 0.5 * (means[m / 2 - 1] + means[m / 2]);
  return out;
}

void write_metrics_jsonl(const std::string& path, const MetricsRecord& rec) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open metrics file " + path + " for writing", 0);
  for (const auto& r : rec.runs) {
    nlohmann::json line;
    line["run"] = r.run;
    line["n_episodes"] = r.episode_acc.size();
    line["mean_accuracy"] = r.mean_acc;
    line["ci95_halfwidth"] = r.ci95;
    line["median_over_runs"] = rec.median_mean_acc;
    line["episode_accuracy"] = r.episode_acc;
    os << line.dump() << "\n";
  }
}

void write_metrics_csv(const std::string& path, const MetricsRecord& rec) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open metrics file " + path + " for writing", 0);
  os << "run,n_episodes,mean_accuracy,ci95_halfwidth,median_over_runs\n";
  char buf[160];
  for (const auto& r : rec.runs) {
    std::snprintf(buf, sizeof(buf), "%lld,%zu,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.run), r.episode_acc.size(), r.mean_acc, r.ci95,
                  rec.median_mean_acc);
    os << buf;
  }
}

}  // namespace scl
