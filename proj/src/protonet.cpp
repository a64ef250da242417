#include "scl/protonet.hpp"

#include <cmath>

namespace scl {

void ProtoConfig::validate() const {
  model.validate();
  if (ways < 2 || shots < 1 || queries < 1) {
    throw ConfigError("protonet: need ways >= 2, shots >= 1, queries >= 1");
  }
  if (n_episodes < 1) throw ConfigError("protonet: n_episodes must be >= 1");
  if (lambda_ce < 0 || lambda_gc < 0 || lambda_sc < 0) {
    throw ConfigError("protonet: loss weights must be nonnegative");
  }
  if (!(lr > 0)) throw ConfigError("protonet: lr must be positive");
  loss_cfg.validate();
}

ProtoConfig ProtoConfig::paper() {
  ProtoConfig c;
  c.model = ModelConfig::paper_mini();
  c.ways = 5;
  c.shots = 5;
  c.queries = 16;
  c.n_episodes = 60000;
  c.lambda_ce = real(1.0);
  c.lambda_gc = real(0.5);
  c.lambda_sc = real(0.5);
  c.lr = real(1e-3);
  c.loss_cfg.anchor_normalization = AnchorNorm::kMean;
  return c;
}

ProtoConfig ProtoConfig::desk() {
  ProtoConfig c = paper();
  c.model = ModelConfig::desk();
  c.ways = 5;
  c.shots = 1;
  c.queries = 3;
  c.n_episodes = 300;
  return c;
}

Tensor prototypes(const Tensor& support_global, const std::vector<std::int64_t>& labels,
                  std::int64_t ways) {
  if (support_global.rank() != 2) throw ContractError("prototypes: need [n, d] features");
  const std::int64_t n = support_global.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ContractError("prototypes: label count does not match features");
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(ways), 0);
  for (const auto y : labels) {
    if (y < 0 || y >= ways) throw ContractError("prototypes: label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  // per-class averaging as a constant matrix keeps the op differentiable
  Tensor assign = Tensor::zeros({ways, n});
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t c = labels[static_cast<std::size_t>(i)];
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    assign.at(c, i) = real(1) / static_cast<real>(counts[static_cast<std::size_t>(c)]);
  }
  for (std::int64_t c = 0; c < ways; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw ContractError("prototypes: class " + std::to_string(c) + " missing from support");
    }
  }
  return matmul(assign, support_global);
}

Tensor proto_logits(const Tensor& query_global, const Tensor& protos) {
  if (query_global.rank() != 2 || protos.rank() != 2 ||
      query_global.dim(1) != protos.dim(1)) {
    throw ShapeError("proto_logits: feature dims differ: " + shape_str(query_global.shape()) +
                     " vs " + shape_str(protos.shape()));
  }
  // -|q - p|^2 = 2 q.p - |q|^2 - |p|^2
  const Tensor cross = mul_scalar(matmul(query_global, transpose(protos)), real(2));
  const Tensor qn = reduce(mul(query_global, query_global), Reduce::kSum, 1);  // [Q]
  const Tensor pn = reduce(mul(protos, protos), Reduce::kSum, 1);              // [C]
  return add_rowvec(add_colvec(cross, neg(qn)), neg(pn));
}

EpisodeLosses episodic_train_step(const Episode& episode, Backbone& phi, AuxHeads& psi,
                                  const ProtoConfig& cfg, Adam& opt, RngStream& rng) {
  const ModelConfig& mc = phi.config();
  std::vector<LabeledImage> originals = episode.support;
  originals.insert(originals.end(), episode.query.begin(), episode.query.end());
  const std::int64_t n_support = static_cast<std::int64_t>(episode.support.size());
  const std::int64_t n_total = static_cast<std::int64_t>(originals.size());

  std::vector<std::int64_t> support_labels, query_labels;
  for (const auto& img : episode.support) support_labels.push_back(img.label);
  for (const auto& img : episode.query) query_labels.push_back(img.label);

  // contrastive views of the merged support+query set
  RngStream aug_rng = rng.child("views");
  const BatchInputs views = (cfg.use_gc || cfg.use_sc)
                                ? make_contrast_views(originals, mc.input_channels, mc.input_size,
                                                      aug_rng)
                                : BatchInputs{};

  GradTape tape;
  Tensor originals_batch = Tensor::zeros({n_total, mc.input_channels, mc.input_size, mc.input_size});
  {
    const std::int64_t per = mc.input_channels * mc.input_size * mc.input_size;
    for (std::int64_t i = 0; i < n_total; ++i) {
      const auto& px = originals[static_cast<std::size_t>(i)].pixels;
      for (std::int64_t j = 0; j < per; ++j) {
        originals_batch.data()[static_cast<std::size_t>(i * per + j)] =
            static_cast<real>(px[static_cast<std::size_t>(j)]);
      }
    }
  }
  const FeaturePack fp = phi.embed(originals_batch);
  const Tensor support_g = slice0(fp.global, 0, n_support);
  const Tensor query_g = slice0(fp.global, n_support, n_total - n_support);
  const Tensor protos = prototypes(support_g, support_labels, cfg.ways);
  const Tensor ce = cross_entropy(proto_logits(query_g, protos), query_labels);

  Tensor gc = Tensor::scalar(0);
  Tensor sc = Tensor::scalar(0);
  EpisodeLosses out;
  if (cfg.use_gc || cfg.use_sc) {
    const FeaturePack vfp = phi.embed(views.images);
    const std::vector<std::int64_t> contrast_labels =
        cfg.self_supervised ? ss_labels(n_total) : views.labels;
    out.contrast_batch = static_cast<std::int64_t>(views.labels.size());
    if (cfg.use_gc) {
      ContrastBatch b;
      b.features = psi.project_global(vfp.global);
      b.labels = contrast_labels;
      b.n = n_total;
      gc = gc_loss(b, cfg.loss_cfg);
    }
    if (cfg.use_sc) {
      ContrastBatch b;
      b.features = vfp.spatial;
      b.labels = contrast_labels;
      b.n = n_total;
      sc = sc_loss(b, psi, cfg.loss_cfg);
    }
  }
  const Tensor total = add(add(mul_scalar(ce, cfg.lambda_ce), mul_scalar(gc, cfg.lambda_gc)),
                           mul_scalar(sc, cfg.lambda_sc));
  out.ce = ce.item();
  out.gc = gc.item();
  out.sc = sc.item();
  out.total = total.item();
  if (!std::isfinite(out.total)) return out;  // caller aborts
  tape.backward(total);
  opt.step();
  opt.zero_grad();
  return out;
}

ProtoResult train_protonet(const MetaDataset& meta, const ProtoConfig& cfg) {
  cfg.validate();
  meta.validate();
  Backbone phi(cfg.model, RngStream(cfg.seed, "proto_init_phi"));
  AuxHeads psi(cfg.model, RngStream(cfg.seed, "proto_init_psi"));
  ParamList params = phi.params();
  for (auto& p : psi.params()) params.push_back(p);
  Adam opt(params, cfg.lr);

  std::vector<EpisodeLosses> history;
  for (std::int64_t step = 0; step < cfg.n_episodes; ++step) {
    RngStream rng(cfg.seed, "proto_episode", {static_cast<std::uint64_t>(step)});
    RngStream sample_rng = rng.child("sample");
    const Episode ep =
        sample_episode(meta, meta.train_classes, cfg.ways, cfg.shots, cfg.queries, sample_rng);
    const EpisodeLosses l = episodic_train_step(ep, phi, psi, cfg, opt, rng);
    if (!std::isfinite(l.total)) {
      throw NumericError("protonet: non-finite loss at episode " + std::to_string(step));
    }
    history.push_back(l);
  }
  return ProtoResult{std::move(phi), std::move(psi), std::move(history)};
}

}  // namespace scl
