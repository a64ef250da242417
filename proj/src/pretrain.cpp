#include "scl/pretrain.hpp"

#include <algorithm>
#include <cmath>

namespace scl {

Objective Objective::parse(const std::string& s) {
  Objective o;
  if (s == "ce") return o;
  if (s == "ce+gc") {
    o.use_gc = true;
    return o;
  }
  if (s == "ce+sc") {
    o.use_sc = true;
    return o;
  }
  if (s == "ce+gc+sc") {
    o.use_gc = o.use_sc = true;
    return o;
  }
  if (s == "ce+ssgc") {
    o.use_gc = o.self_supervised = true;
    return o;
  }
  if (s == "ce+sssc") {
    o.use_sc = o.self_supervised = true;
    return o;
  }
  throw ConfigError("unknown objective '" + s + "' (ce|ce+gc|ce+sc|ce+gc+sc|ce+ssgc|ce+sssc)");
}

std::string Objective::str() const {
  if (!use_gc && !use_sc) return "ce";
  std::string out = "ce";
  if (use_gc) out += self_supervised ? "+ssgc" : "+gc";
  if (use_sc) out += self_supervised ? "+sssc" : "+sc";
  return out;
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0) && lr != 0) throw ConfigError("train: lr must be >= 0");
  if (lr < 0) throw ConfigError("train: lr must be >= 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0,1)");
  if (weight_decay < 0) throw ConfigError("train: weight decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(decay_factor > 0) || decay_factor > 1) throw ConfigError("train: decay factor in (0,1]");
  weights.validate();
  loss_cfg.validate();
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.model = ModelConfig::paper_mini();
  c.lr = real(5e-2);
  c.momentum = real(0.9);
  c.weight_decay = real(5e-4);
  c.batch_size = 64;
  c.epochs = 30;
  c.decay_epochs = {20, 26};
  // unit loss weights only balance CE when anchors are averaged; the summed
  // form grows with the batch and drowns the CE term
  c.loss_cfg.anchor_normalization = AnchorNorm::kMean;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c = paper();
  c.model = ModelConfig::desk();
  c.batch_size = 32;
  // auxiliary weights follow the paper's small-dataset pattern scaled one
  // step further down; unit weights stall CE at this data size
  c.weights.lambda_sc = real(0.25);
  c.weights.lambda_gc = real(0.25);
  return c;
}

namespace {

Tensor images_to_tensor(const std::vector<LabeledImage>& imgs, std::int64_t channels,
                        std::int64_t size) {
  const std::int64_t b = static_cast<std::int64_t>(imgs.size());
  Tensor x = Tensor::zeros({b, channels, size, size});
  const std::int64_t per = channels * size * size;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& px = imgs[static_cast<std::size_t>(i)].pixels;
    for (std::int64_t j = 0; j < per; ++j) {
      x.data()[static_cast<std::size_t>(i * per + j)] = static_cast<real>(px[static_cast<std::size_t>(j)]);
    }
  }
  return x;
}

}  // namespace

BatchInputs make_contrast_views(const std::vector<LabeledImage>& sources, std::int64_t channels,
                                std::int64_t size, RngStream& rng) {
  const std::int64_t n = static_cast<std::int64_t>(sources.size());
  if (n < 1) throw ConfigError("make_contrast_views: empty source set");
  std::vector<LabeledImage> views;
  views.reserve(static_cast<std::size_t>(2 * n));
  BatchInputs out;
  out.labels.resize(static_cast<std::size_t>(2 * n));
  out.sources.resize(static_cast<std::size_t>(2 * n));
  for (std::int64_t i = 0; i < n; ++i) {
    RngStream stream = rng.child("std", {static_cast<std::uint64_t>(i)});
    views.push_back(standard_aug(sources[static_cast<std::size_t>(i)], channels, size, stream));
    out.labels[static_cast<std::size_t>(i)] = sources[static_cast<std::size_t>(i)].label;
    out.sources[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    RngStream stream = rng.child("simclr", {static_cast<std::uint64_t>(i)});
    views.push_back(simclr_aug(sources[static_cast<std::size_t>(i)], channels, size, stream));
    out.labels[static_cast<std::size_t>(i + n)] = sources[static_cast<std::size_t>(i)].label;
    out.sources[static_cast<std::size_t>(i + n)] = static_cast<std::size_t>(i);
  }
  out.images = images_to_tensor(views, channels, size);
  return out;
}

BatchInputs make_train_batch(const MergedDataset& ds, const std::vector<std::size_t>& indices,
                             RngStream& rng) {
  if (indices.empty()) throw ConfigError("make_train_batch: empty index set");
  std::vector<LabeledImage> sources;
  sources.reserve(indices.size());
  for (const auto idx : indices) sources.push_back(ds.images.at(idx));
  BatchInputs out = make_contrast_views(sources, ds.channels, ds.image_size, rng);
  // report dataset indices rather than positions within the batch
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.sources[i] = indices[i];
    out.sources[i + indices.size()] = indices[i];
  }
  return out;
}

BatchInputs make_train_batch(const MergedDataset& ds, std::int64_t n, RngStream& rng) {
  if (n > static_cast<std::int64_t>(ds.images.size())) {
    throw ConfigError("make_train_batch: batch of " + std::to_string(n) + " from " +
                      std::to_string(ds.images.size()) + " images");
  }
  std::vector<std::size_t> all(ds.images.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  rng.shuffle(all.data(), static_cast<std::int64_t>(all.size()));
  all.resize(static_cast<std::size_t>(n));
  return make_train_batch(ds, all, rng);
}

namespace {

struct StepLosses {
  double ce = 0, gc = 0, sc = 0, total = 0;
};

// One composite-objective step on an already-built 2N batch. Shared by
// pretrain (per batch) and the episodic trainer.
StepLosses composite_step(const BatchInputs& in, Backbone& phi, AuxHeads& psi, Dense& classifier,
                          const TrainConfig& cfg, Sgd& opt) {
  const std::int64_t n = static_cast<std::int64_t>(in.labels.size()) / 2;
  GradTape tape;
  const FeaturePack fp = phi.embed(in.images);
  const Tensor ce = cross_entropy(classifier.forward(fp.global), in.labels);
  Tensor gc = Tensor::scalar(0);
  Tensor sc = Tensor::scalar(0);
  const std::vector<std::int64_t> contrast_labels =
      cfg.objective.self_supervised ? ss_labels(n) : in.labels;
  if (cfg.objective.use_gc) {
    ContrastBatch b;
    b.features = psi.project_global(fp.global);
    b.labels = contrast_labels;
    b.n = n;
    gc = gc_loss(b, cfg.loss_cfg);
  }
  if (cfg.objective.use_sc) {
    ContrastBatch b;
    b.features = fp.spatial;
    b.labels = contrast_labels;
    b.n = n;
    sc = sc_loss(b, psi, cfg.loss_cfg);
  }
  const Tensor total = total_loss(ce, gc, sc, cfg.weights);
  StepLosses out;
  out.ce = ce.item();
  out.gc = gc.item();
  out.sc = sc.item();
  out.total = total.item();
  if (!std::isfinite(out.total)) return out;  // caller aborts with diagnostics
  tape.backward(total);
  opt.step();
  opt.zero_grad();
  return out;
}

}  // namespace

PretrainResult pretrain(const MergedDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.images.empty() || ds.n_classes < 2) {
    throw ConfigError("pretrain: need a merged dataset with >= 2 classes");
  }
  if (cfg.batch_size > static_cast<std::int64_t>(ds.images.size())) {
    throw ConfigError("pretrain: batch size exceeds dataset size");
  }
  Backbone phi(cfg.model, RngStream(cfg.seed, "init_phi"));
  AuxHeads psi(cfg.model, RngStream(cfg.seed, "init_psi"));
  RngStream clf_rng(cfg.seed, "init_classifier");
  Dense classifier(cfg.model.feature_dim, ds.n_classes, clf_rng);

  ParamList params = phi.params();
  for (auto& p : psi.params()) params.push_back(p);
  classifier.collect("classifier", params);
  Sgd opt(params, cfg.lr, cfg.momentum, cfg.weight_decay);

  std::vector<std::size_t> order(ds.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>(ds.images.size()) / cfg.batch_size;

  std::vector<EpochStats> history;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (std::find(cfg.decay_epochs.begin(), cfg.decay_epochs.end(), epoch) !=
        cfg.decay_epochs.end()) {
      opt.set_lr(opt.lr() * cfg.decay_factor);
    }
    RngStream shuffle_rng(cfg.seed, "epoch_shuffle", {static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order.data(), static_cast<std::int64_t>(order.size()));

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = opt.lr();
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<std::size_t> idx(order.begin() + b * cfg.batch_size,
                                   order.begin() + (b + 1) * cfg.batch_size);
      RngStream batch_rng(cfg.seed, "batch",
                          {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)});
      const BatchInputs in = make_train_batch(ds, idx, batch_rng);
      const StepLosses l = composite_step(in, phi, psi, classifier, cfg, opt);
      if (!std::isfinite(l.total)) {
        throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                           ", lr " + std::to_string(opt.lr()));
      }
      stats.ce += l.ce;
      stats.gc += l.gc;
      stats.sc += l.sc;
      stats.total += l.total;
    }
    const double denom = static_cast<double>(std::max<std::int64_t>(steps_per_epoch, 1));
    stats.ce /= denom;
    stats.gc /= denom;
    stats.sc /= denom;
    stats.total /= denom;
    history.push_back(stats);
  }
  return PretrainResult{std::move(phi), std::move(psi), std::move(classifier),
                        std::move(history)};
}

namespace {

Backbone clone_frozen(const Backbone& src) {
  Backbone copy(src.config(), RngStream(0, "clone"));
  Checkpoint ck;
  ck.config = src.config();
  ck.add(const_cast<Backbone&>(src).params());
  ck.restore(copy.params());
  copy.freeze();
  return copy;
}

Dense clone_frozen(const Dense& src) {
  RngStream rng(0, "clone_dense");
  Dense copy(src.w.dim(0), src.w.dim(1), rng);
  copy.w.data() = src.w.data();
  copy.b.data() = src.b.data();
  copy.w.set_requires_grad(false);
  copy.b.set_requires_grad(false);
  return copy;
}

}  // namespace

DistillResult distill(const Backbone& teacher_phi, const Dense& teacher_classifier,
                      const MergedDataset& ds, const TrainConfig& cfg, const DistillConfig& dcfg,
                      std::int64_t generations, bool init_from_teacher) {
  cfg.validate();
  dcfg.validate();
  if (generations < 1) throw ConfigError("distill: generations must be >= 1");
  if (teacher_phi.config().feature_dim != cfg.model.feature_dim ||
      teacher_phi.config().input_size != cfg.model.input_size ||
      teacher_phi.config().input_channels != cfg.model.input_channels) {
    throw ContractError("distill: teacher and student architectures differ");
  }
  if (teacher_classifier.w.dim(1) != ds.n_classes) {
    throw ContractError("distill: teacher head predicts " +
                        std::to_string(teacher_classifier.w.dim(1)) + " classes, dataset has " +
                        std::to_string(ds.n_classes));
  }

  Backbone teacher = clone_frozen(teacher_phi);
  Dense teacher_clf = clone_frozen(teacher_classifier);

  std::vector<DistillStats> history;
  Backbone student = clone_frozen(teacher_phi);  // replaced before use
  Dense student_clf = clone_frozen(teacher_classifier);

  for (std::int64_t gen = 0; gen < generations; ++gen) {
    if (init_from_teacher) {
      student = clone_frozen(teacher);
      student_clf = clone_frozen(teacher_clf);
      for (auto& p : student.params()) p.tensor.set_requires_grad(true);
      student_clf.w.set_requires_grad(true);
      student_clf.b.set_requires_grad(true);
    } else {
      student = Backbone(cfg.model, RngStream(cfg.seed, "distill_init_phi",
                                              {static_cast<std::uint64_t>(gen)}));
      RngStream clf_rng(cfg.seed, "distill_init_clf", {static_cast<std::uint64_t>(gen)});
      student_clf = Dense(cfg.model.feature_dim, ds.n_classes, clf_rng);
    }

    ParamList params = student.params();
    student_clf.collect("classifier", params);
    Sgd opt(params, cfg.lr, cfg.momentum, cfg.weight_decay);

    std::vector<std::size_t> order(ds.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>(ds.images.size()) / cfg.batch_size;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      if (std::find(cfg.decay_epochs.begin(), cfg.decay_epochs.end(), epoch) !=
          cfg.decay_epochs.end()) {
        opt.set_lr(opt.lr() * cfg.decay_factor);
      }
      RngStream shuffle_rng(cfg.seed, "distill_shuffle",
                            {static_cast<std::uint64_t>(gen), static_cast<std::uint64_t>(epoch)});
      shuffle_rng.shuffle(order.data(), static_cast<std::int64_t>(order.size()));

      DistillStats stats;
      stats.generation = gen;
      stats.epoch = epoch;
      for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
        // distillation batches use standard augmentation only
        std::vector<LabeledImage> views;
        views.reserve(static_cast<std::size_t>(cfg.batch_size));
        RngStream batch_rng(cfg.seed, "distill_batch",
                            {static_cast<std::uint64_t>(gen), static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(b)});
        for (std::int64_t i = 0; i < cfg.batch_size; ++i) {
          RngStream stream = batch_rng.child("std", {static_cast<std::uint64_t>(i)});
          views.push_back(standard_aug(ds.images[order[static_cast<std::size_t>(b * cfg.batch_size + i)]],
                                       ds.channels, ds.image_size, stream));
        }
        const Tensor x = images_to_tensor(views, ds.channels, ds.image_size);

        const FeaturePack teacher_fp = teacher.embed(x);
        const Tensor teacher_logits = teacher_clf.forward(teacher_fp.global);

        GradTape tape;
        const FeaturePack student_fp = student.embed(x);
        const Tensor student_logits = student_clf.forward(student_fp.global);
        const Tensor cd = dcfg.lambda_cd != real(0) ? cd_loss(teacher_fp, student_fp, dcfg)
                                                    : Tensor::scalar(0);
        const Tensor kl = dcfg.lambda_kl != real(0)
                              ? kl_distill(student_logits, teacher_logits, dcfg.kl_temperature)
                              : Tensor::scalar(0);
        const Tensor total =
            add(mul_scalar(cd, dcfg.lambda_cd), mul_scalar(kl, dcfg.lambda_kl));
        stats.cd += cd.item();
        stats.kl += kl.item();
        stats.total += total.item();
        if (!std::isfinite(total.item())) {
          throw NumericError("distill: non-finite loss at generation " + std::to_string(gen) +
                             ", epoch " + std::to_string(epoch) + ", lr " +
                             std::to_string(opt.lr()));
        }
        tape.backward(total);
        opt.step();
        opt.zero_grad();
      }
      const double denom = static_cast<double>(std::max<std::int64_t>(steps_per_epoch, 1));
      stats.cd /= denom;
      stats.kl /= denom;
      stats.total /= denom;
      history.push_back(stats);
    }

    if (gen + 1 < generations) {
      teacher = clone_frozen(student);
      teacher_clf = clone_frozen(student_clf);
    }
  }
  return DistillResult{std::move(student), std::move(student_clf), std::move(history)};
}

double mean_normalized_global_distance(const Backbone& a, const Backbone& b,
                                       const MergedDataset& ds, std::size_t cap) {
  const std::size_t count = std::min(cap, ds.images.size());
  if (count == 0) throw ConfigError("mean_normalized_global_distance: empty dataset");
  std::vector<LabeledImage> imgs(ds.images.begin(),
                                 ds.images.begin() + static_cast<std::ptrdiff_t>(count));
  const Tensor x = images_to_tensor(imgs, ds.channels, ds.image_size);
  const Tensor ga = l2_normalize(a.embed(x).global);
  const Tensor gb = l2_normalize(b.embed(x).global);
  const std::int64_t d = ga.dim(1);
  double total = 0;
  for (std::int64_t i = 0; i < ga.dim(0); ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double diff = ga.at(i, j) - gb.at(i, j);
      s += diff * diff;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(count);
}

}  // namespace scl
