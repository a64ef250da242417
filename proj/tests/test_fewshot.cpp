#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "scl/fewshot.hpp"
#include "test_util.hpp"

using namespace scl;

namespace {

SynthConfig eval_data_cfg() {
  SynthConfig cfg;
  cfg.n_classes = 12;
  cfg.per_class = 8;
  cfg.image_size = 8;
  cfg.channels = 3;
  cfg.seed = 5;
  cfg.noise = 0.1;
  return cfg;
}

ModelConfig tiny_model_cfg() {
  ModelConfig c;
  c.input_channels = 3;
  c.input_size = 8;
  c.conv1_channels = 4;
  c.conv2_channels = 6;
  c.feature_dim = 8;
  c.head_dim = 4;
  c.finalize();
  return c;
}

ModelConfig pooled_model_cfg() {
  ModelConfig c = tiny_model_cfg();
  c.input_size = 16;  // conv side 2, supports spatial mode
  c.finalize();
  return c;
}

}  // namespace

TEST_CASE("sample_episode obeys the C/K/Q contract") {
  MetaDataset data = synth_generate(eval_data_cfg());
  RngStream rng(1, "ep");
  const Episode ep = sample_episode(data, data.test_classes, 3, 1, 3, rng);
  CHECK(ep.support.size() == 3);
  CHECK(ep.query.size() == 9);
  // classes remapped to 0..C-1
  std::set<std::int64_t> support_labels, query_labels;
  for (const auto& img : ep.support) support_labels.insert(img.label);
  for (const auto& img : ep.query) query_labels.insert(img.label);
  CHECK(support_labels == std::set<std::int64_t>{0, 1, 2});
  CHECK(query_labels == std::set<std::int64_t>{0, 1, 2});
  // support and query draw disjoint examples
  std::set<std::size_t> s(ep.support_sources.begin(), ep.support_sources.end());
  for (const auto q : ep.query_sources) CHECK(s.find(q) == s.end());
  // original ids never leak into classifier labels
  for (const auto cid : ep.class_ids) CHECK(cid >= 8);  // test classes of the 12-class set

  // distinct episode indices differ under one seed
  RngStream r1(2, "episode", {0});
  RngStream r2(2, "episode", {1});
  const Episode e1 = sample_episode(data, data.test_classes, 3, 1, 3, r1);
  const Episode e2 = sample_episode(data, data.test_classes, 3, 1, 3, r2);
  CHECK((e1.class_ids != e2.class_ids || e1.support_sources != e2.support_sources));

  CHECK_THROWS_AS(sample_episode(data, data.test_classes, 5, 1, 3, rng), ConfigError);
  CHECK_THROWS_AS(sample_episode(data, data.test_classes, 3, 5, 5, rng), ConfigError);
}

TEST_CASE("extract_features modes") {
  MetaDataset data = synth_generate(eval_data_cfg());
  Backbone phi(tiny_model_cfg(), RngStream(3, "init"));
  std::vector<LabeledImage> imgs(data.images.begin(), data.images.begin() + 6);
  const Tensor g = extract_global_features(phi, imgs);
  CHECK(g.shape() == Shape{6, 8});
  for (std::int64_t i = 0; i < 6; ++i) {
    double n = 0;
    for (std::int64_t j = 0; j < 8; ++j) n += g.at(i, j) * g.at(i, j);
    CHECK(std::fabs(std::sqrt(n) - 1.0) <= 1e-6);
  }
  // deterministic
  const Tensor g2 = extract_global_features(phi, imgs);
  CHECK(g.data() == g2.data());

  // spatial mode needs spatial_side >= 2
  CHECK_THROWS_AS(extract_spatial_features(phi, imgs), ConfigError);

  SynthConfig big = eval_data_cfg();
  big.image_size = 16;
  MetaDataset data16 = synth_generate(big);
  Backbone phi16(pooled_model_cfg(), RngStream(4, "init"));
  std::vector<LabeledImage> imgs16(data16.images.begin(), data16.images.begin() + 5);
  const Tensor sp = extract_spatial_features(phi16, imgs16);
  CHECK(sp.shape() == Shape{5, 4 * 8});  // dim = 4*d
  for (std::int64_t i = 0; i < 5; ++i) {
    double n = 0;
    for (std::int64_t j = 0; j < sp.dim(1); ++j) n += sp.at(i, j) * sp.at(i, j);
    CHECK(std::fabs(std::sqrt(n) - 1.0) <= 1e-6);
  }
}

TEST_CASE("fit_linear separates separable data") {
  // 1-D two-class data with a margin
  Tensor x = Tensor::from({6, 1}, {-2, -1.5, -1, 1, 1.5, 2});
  const std::vector<std::int64_t> y{0, 0, 0, 1, 1, 1};
  FitOptions opts;
  opts.penalty = real(1e-4);
  const LinearClassifier clf = fit_linear(x, y, 2, opts);
  CHECK(clf.predict(x) == y);
  CHECK(clf.final_loss <= clf.init_loss);
  CHECK(clf.w.all_finite());
}

TEST_CASE("fit_linear with huge penalty collapses to class priors") {
  RngStream rng(5, "prior");
  Tensor x = testutil::random_tensor({12, 3}, rng, -1, 1);
  // class 0 has 9 of 12 examples
  std::vector<std::int64_t> y{0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  FitOptions opts;
  opts.penalty = real(1e7);
  const LinearClassifier clf = fit_linear(x, y, 2, opts);
  double wnorm = 0;
  for (const real v : clf.w.data()) wnorm += v * v;
  CHECK(std::sqrt(wnorm) <= 1e-3);
  // softmax of the bias approximates the empirical priors
  const double p0 = 1.0 / (1.0 + std::exp(clf.b.at(1) - clf.b.at(0)));
  CHECK(p0 == doctest::Approx(0.75).epsilon(0.05));
}

TEST_CASE("fit_linear agrees with an independent fixed-step optimizer") {
  // pinned 20x8 four-class problem
  RngStream rng(6, "logreg");
  Tensor x = testutil::random_tensor({20, 8}, rng, -1, 1);
  std::vector<std::int64_t> y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = static_cast<std::int64_t>(i % 4);
  FitOptions opts;
  opts.penalty = real(0.05);
  const LinearClassifier clf = fit_linear(x, y, 4, opts);

  // reference: plain gradient descent, fixed small step, many iterations
  const std::int64_t n = 20, d = 8, c = 4;
  std::vector<double> w(static_cast<std::size_t>(c * d), 0.0), b(static_cast<std::size_t>(c), 0.0);
  auto objective = [&](const std::vector<double>& wv, const std::vector<double>& bv) {
    double loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<double> logits(static_cast<std::size_t>(c));
      double mx = -1e300;
      for (std::int64_t k = 0; k < c; ++k) {
        double s = bv[static_cast<std::size_t>(k)];
        for (std::int64_t j = 0; j < d; ++j) s += wv[static_cast<std::size_t>(k * d + j)] * x.at(i, j);
        logits[static_cast<std::size_t>(k)] = s;
        mx = std::max(mx, s);
      }
      double denom = 0;
      for (std::int64_t k = 0; k < c; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)] - mx);
      loss += -(logits[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])] - mx - std::log(denom));
    }
    loss /= static_cast<double>(n);
    double reg = 0;
    for (const double v : wv) reg += v * v;
    return loss + 0.05 * reg;
  };
  for (int it = 0; it < 40000; ++it) {
    std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<double> logits(static_cast<std::size_t>(c));
      double mx = -1e300;
      for (std::int64_t k = 0; k < c; ++k) {
        double s = b[static_cast<std::size_t>(k)];
        for (std::int64_t j = 0; j < d; ++j) s += w[static_cast<std::size_t>(k * d + j)] * x.at(i, j);
        logits[static_cast<std::size_t>(k)] = s;
        mx = std::max(mx, s);
      }
      double denom = 0;
      for (std::int64_t k = 0; k < c; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)] - mx);
      for (std::int64_t k = 0; k < c; ++k) {
        const double p = std::exp(logits[static_cast<std::size_t>(k)] - mx) / denom;
        const double delta = (p - (k == y[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) / static_cast<double>(n);
        gb[static_cast<std::size_t>(k)] += delta;
        for (std::int64_t j = 0; j < d; ++j) gw[static_cast<std::size_t>(k * d + j)] += delta * x.at(i, j);
      }
    }
    for (std::size_t idx = 0; idx < w.size(); ++idx) w[idx] -= 0.2 * (gw[idx] + 2.0 * 0.05 * w[idx]);
    for (std::size_t idx = 0; idx < b.size(); ++idx) b[idx] -= 0.2 * gb[idx];
  }
  CHECK(std::fabs(clf.final_loss - objective(w, b)) <= 1e-4);
}

TEST_CASE("fit_linear rejects bad inputs") {
  Tensor x = Tensor::from({2, 1}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(fit_linear(x, {0, 1}, 2, FitOptions{}), ContractError);
  Tensor ok = Tensor::from({2, 1}, {0.0, 1.0});
  CHECK_THROWS_AS(fit_linear(ok, {0, 0}, 2, FitOptions{}), ContractError);  // class 1 empty
}

TEST_CASE("imprint_weights builds normalized prototypes") {
  Tensor x = Tensor::from({3, 2}, {3, 4, 0, 2, 2, 0});
  const std::vector<std::int64_t> y{0, 1, 1};
  const LinearClassifier clf = imprint_weights(x, y, 2);
  // K=1 class: row equals the normalized support feature
  CHECK(clf.w.at(0, 0) == doctest::Approx(0.6));
  CHECK(clf.w.at(0, 1) == doctest::Approx(0.8));
  // rows are unit norm
  for (std::int64_t c = 0; c < 2; ++c) {
    double n = 0;
    for (std::int64_t j = 0; j < 2; ++j) n += clf.w.at(c, j) * clf.w.at(c, j);
    CHECK(std::sqrt(n) == doctest::Approx(1.0));
  }
  for (const real v : clf.b.data()) CHECK(v == 0.0);
  // invariant to support ordering
  Tensor x2 = Tensor::from({3, 2}, {2, 0, 3, 4, 0, 2});
  const LinearClassifier clf2 = imprint_weights(x2, {1, 0, 1}, 2);
  CHECK(clf.w.data() == clf2.w.data());
}

TEST_CASE("combine_scores sum equals global when spatial scores vanish") {
  RngStream rng(7, "comb");
  Tensor g = testutil::random_tensor({4, 3}, rng, -1, 1);
  Tensor zero = Tensor::zeros({4, 3});
  const Tensor sum = combine_scores(g, zero, BothAggregation::kSum);
  CHECK(sum.data() == g.data());
  Tensor a = Tensor::from({1, 2}, {1, -3});
  Tensor b = Tensor::from({1, 2}, {0, 5});
  const Tensor mx = combine_scores(a, b, BothAggregation::kMax);
  CHECK(mx.at(0, 0) == 1.0);
  CHECK(mx.at(0, 1) == 5.0);
}

TEST_CASE("run_stats implements the protocol statistics") {
  const RunRecord same = run_stats(0, {0.5, 0.5, 0.5, 0.5});
  CHECK(same.mean_acc == doctest::Approx(0.5));
  CHECK(same.ci95 == 0.0);

  const RunRecord rec = run_stats(1, {0.2, 0.4, 0.6, 0.8});
  CHECK(rec.mean_acc == doctest::Approx(0.5));
  // hand-computed: sample std = sqrt(var(0.2,0.4,0.6,0.8, ddof=1))
  const double sd = std::sqrt(((0.09 + 0.01 + 0.01 + 0.09) / 3.0));
  CHECK(rec.ci95 == doctest::Approx(1.96 * sd / 2.0));
}

TEST_CASE("evaluate: chance level for a random model, deterministic outputs") {
  SynthConfig dcfg;
  dcfg.n_classes = 15;  // 10 train / 5 test classes
  dcfg.per_class = 8;
  dcfg.image_size = 16;
  dcfg.channels = 3;
  dcfg.seed = 5;
  dcfg.noise = 0.5;
  MetaDataset data = synth_generate(dcfg);
  Backbone phi(pooled_model_cfg(), RngStream(20, "init"));
  EpisodeSpec spec;
  spec.ways = 5;
  spec.shots = 1;
  spec.queries = 3;
  spec.n_episodes = 200;
  spec.n_runs = 1;
  spec.support_aug_copies = 2;
  EvalConfig cfg;
  cfg.seed = 9;
  const MetricsRecord rec = evaluate(phi, data, spec, cfg);
  REQUIRE(rec.runs.size() == 1);
  // chance is 0.20 on 5-way tasks
  CHECK(rec.runs[0].mean_acc >= 0.12);
  CHECK(rec.runs[0].mean_acc <= 0.28);
  CHECK(rec.runs[0].ci95 >= 0.0);

  const MetricsRecord rec2 = evaluate(phi, data, spec, cfg);
  CHECK(rec.runs[0].episode_acc == rec2.runs[0].episode_acc);  // bitwise
  CHECK(rec.median_mean_acc == rec2.median_mean_acc);
}

TEST_CASE("metrics files round-trip through JSON and CSV") {
  MetricsRecord rec;
  rec.runs.push_back(run_stats(0, {0.25, 0.75}));
  rec.runs.push_back(run_stats(1, {0.5, 0.5}));
  rec.runs.push_back(run_stats(2, {1.0, 0.0}));
  std::vector<double> means{0.5, 0.5, 0.5};
  rec.median_mean_acc = 0.5;
  const std::string jpath = "/tmp/scl_metrics_test.jsonl";
  const std::string cpath = "/tmp/scl_metrics_test.csv";
  write_metrics_jsonl(jpath, rec);
  write_metrics_csv(cpath, rec);
  std::ifstream in(jpath);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    const auto parsed = nlohmann::json::parse(line);  // throws on malformed output
    CHECK(parsed["ci95_halfwidth"].get<double>() >= 0.0);
    CHECK(parsed["median_over_runs"].get<double>() == doctest::Approx(0.5));
  }
  CHECK(lines == 3);
  std::ifstream cin_(cpath);
  std::getline(cin_, line);
  CHECK(line == "run,n_episodes,mean_accuracy,ci95_halfwidth,median_over_runs");
  std::remove(jpath.c_str());
  std::remove(cpath.c_str());
}
