#include "scl/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "scl/analysis.hpp"
#include "scl/fewshot.hpp"
#include "scl/parallel.hpp"
#include "scl/pretrain.hpp"
#include "scl/protonet.hpp"

namespace scl {

namespace {

constexpr const char* kVersion = "1.0.0";

void require_writable(const std::string& path, bool force) {
  if (path.empty()) throw ConfigError("output path is empty");
  if (!force && std::filesystem::exists(path)) {
    throw ConfigError("refusing to overwrite " + path + " (pass --force)");
  }
}

// key=value echo sufficient to re-run the command
class Manifest {
 public:
  explicit Manifest(const std::string& command) { add("command", command); add("version", kVersion); }

  template <typename T>
  void add(const std::string& key, const T& value) {
    std::ostringstream os;
    os << value;
    lines_.push_back(key + "=" + os.str());
  }
  void add_f(const std::string& key, double value) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    lines_.push_back(key + "=" + std::string(buf));
  }

  std::string str() const {
    std::string out;
    for (const auto& l : lines_) out += l + "\n";
    return out;
  }
  void write(const std::string& out_path) const {
    std::ofstream os(out_path + ".manifest", std::ios::trunc);
    if (!os) throw FormatError("cannot write manifest for " + out_path, 0);
    os << str();
  }

 private:
  std::vector<std::string> lines_;
};

// Expands "--config FILE" into flags: each "key=value" line becomes
// "--key value" unless --key was already given, so command-line flags win
// over config keys. Unknown keys then fail subcommand parsing (exit 2).
std::vector<std::string> expand_config_args(std::vector<std::string> args) {
  for (std::size_t i = 0; i < args.size();) {
    if (args[i] != "--config") {
      ++i;
      continue;
    }
    if (i + 1 >= args.size()) throw ConfigError("--config needs a file path");
    const std::string path = args[i + 1];
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
               args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file " + path, 0);
    std::string line;
    std::vector<std::string> extra;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line without '=': " + line);
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      const std::string flag = "--" + key;
      bool given = false;
      for (const auto& a : args) {
        if (a == flag || a.rfind(flag + "=", 0) == 0) {
          given = true;
          break;
        }
      }
      if (!given) {
        extra.push_back(flag);
        extra.push_back(value);
      }
    }
    args.insert(args.end(), extra.begin(), extra.end());
  }
  return args;
}

std::vector<std::int64_t> parse_int_list(const std::string& csv) {
  std::vector<std::int64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

std::string int_list_str(const std::vector<std::int64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

Backbone backbone_from(const Checkpoint& ckpt) {
  Backbone phi(ckpt.config, RngStream(0, "load"));
  ckpt.restore(phi.params());
  phi.freeze();
  return phi;
}

Dense classifier_from(const Checkpoint& ckpt) {
  Tensor w, b;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name == "classifier.w") w = t;
    if (name == "classifier.b") b = t;
  }
  if (!w.defined() || !b.defined()) {
    throw ContractError("checkpoint has no classifier head (needed for distillation)");
  }
  RngStream rng(0, "load_clf");
  Dense clf(w.dim(0), w.dim(1), rng);
  clf.w.data() = w.data();
  clf.b.data() = b.data();
  return clf;
}

// echo of the training configuration shared by pretrain and distill
void echo_train_config(Manifest& m, const TrainConfig& cfg) {
  m.add("model.input_channels", cfg.model.input_channels);
  m.add("model.input_size", cfg.model.input_size);
  m.add("model.conv1_channels", cfg.model.conv1_channels);
  m.add("model.conv2_channels", cfg.model.conv2_channels);
  m.add("model.feature_dim", cfg.model.feature_dim);
  m.add("model.head_dim", cfg.model.head_dim);
  m.add("model.pool_target", cfg.model.pool_target);
  m.add("model.spatial_side", cfg.model.spatial_side);
  m.add_f("lr", cfg.lr);
  m.add_f("momentum", cfg.momentum);
  m.add_f("weight_decay", cfg.weight_decay);
  m.add("batch_size", cfg.batch_size);
  m.add("epochs", cfg.epochs);
  m.add("decay_epochs", int_list_str(cfg.decay_epochs));
  m.add_f("decay_factor", cfg.decay_factor);
  m.add("objective", cfg.objective.str());
  m.add_f("lambda_ce", cfg.weights.lambda_ce);
  m.add_f("lambda_sc", cfg.weights.lambda_sc);
  m.add_f("lambda_gc", cfg.weights.lambda_gc);
  m.add_f("tau", cfg.loss_cfg.tau);
  m.add_f("tau_prime", cfg.loss_cfg.tau_prime);
  m.add("aggregation", to_string(cfg.loss_cfg.aggregation));
  m.add("anchor_normalization", to_string(cfg.loss_cfg.anchor_normalization));
  m.add("seed", cfg.seed);
}

struct PresetChoice {
  std::string name = "desk";
  TrainConfig train() const {
    if (name == "desk") return TrainConfig::desk();
    if (name == "paper-mini") return TrainConfig::paper();
    if (name == "paper-cifar") {
      TrainConfig c = TrainConfig::paper();
      c.model = ModelConfig::paper_cifar();
      c.weights.lambda_sc = real(0.5);
      c.weights.lambda_gc = real(0.5);
      return c;
    }
    throw ConfigError("unknown preset '" + name + "' (desk|paper-mini|paper-cifar)");
  }
};

// ---- subcommand wiring ----

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  require_writable(a.out, a.force);
  MetaDataset data = synth_generate(a.cfg);
  write_dataset(a.out, data);
  Manifest m("synth");
  m.add("out", a.out);
  m.add("n_classes", a.cfg.n_classes);
  m.add("per_class", a.cfg.per_class);
  m.add("image_size", a.cfg.image_size);
  m.add("channels", a.cfg.channels);
  m.add("train_classes", a.cfg.train_classes);
  m.add("val_classes", a.cfg.val_classes);
  m.add("seed", a.cfg.seed);
  m.add_f("noise", a.cfg.noise);
  m.write(a.out);
  std::cout << "wrote " << data.images.size() << " images to " << a.out << "\n";
  return 0;
}

struct PretrainArgs {
  std::string data, out;
  TrainConfig cfg;
  bool force = false;
};

int cmd_pretrain(const PretrainArgs& a) {
  require_writable(a.out, a.force);
  const MetaDataset meta = read_dataset(a.data);
  const MergedDataset merged = merge_tasks(meta);
  PretrainResult res = pretrain(merged, a.cfg);

  Manifest m("pretrain");
  m.add("data", a.data);
  m.add("out", a.out);
  echo_train_config(m, a.cfg);
  m.add("n_classes", merged.n_classes);
  m.add_f("final_ce", res.history.back().ce);
  m.add_f("final_gc", res.history.back().gc);
  m.add_f("final_sc", res.history.back().sc);
  m.add_f("final_total", res.history.back().total);

  Checkpoint ckpt;
  ckpt.config = res.phi.config();
  ckpt.manifest = m.str();
  ckpt.add(res.phi.params());
  ckpt.add(res.psi.params());
  ParamList clf;
  res.classifier.collect("classifier", clf);
  ckpt.add(clf);
  save_checkpoint(a.out, ckpt);
  m.write(a.out);
  std::cout << "pretrained " << a.cfg.objective.str() << ": final ce "
            << res.history.back().ce << ", checkpoint " << a.out << "\n";
  return 0;
}

struct DistillArgs {
  std::string data, teacher, out;
  TrainConfig cfg;
  DistillConfig dcfg;
  std::int64_t generations = 1;
  bool init_from_teacher = false;
  bool force = false;
};

int cmd_distill(const DistillArgs& a) {
  require_writable(a.out, a.force);
  if (a.out == a.teacher) throw ConfigError("student checkpoint must differ from the teacher");
  const MetaDataset meta = read_dataset(a.data);
  const MergedDataset merged = merge_tasks(meta);
  const Checkpoint teacher_ckpt = load_checkpoint(a.teacher);
  Backbone teacher = backbone_from(teacher_ckpt);
  Dense teacher_clf = classifier_from(teacher_ckpt);
  TrainConfig cfg = a.cfg;
  cfg.model = teacher.config();
  DistillResult res =
      distill(teacher, teacher_clf, merged, cfg, a.dcfg, a.generations, a.init_from_teacher);

  Manifest m("distill");
  m.add("data", a.data);
  m.add("teacher", a.teacher);
  m.add("out", a.out);
  echo_train_config(m, cfg);
  m.add_f("lambda_cd", a.dcfg.lambda_cd);
  m.add_f("lambda_kl", a.dcfg.lambda_kl);
  m.add_f("kl_temperature", a.dcfg.kl_temperature);
  m.add_f("alpha", a.dcfg.alpha);
  m.add_f("beta", a.dcfg.beta);
  m.add("generations", a.generations);
  m.add("init_from_teacher", a.init_from_teacher ? 1 : 0);
  m.add_f("final_cd", res.history.back().cd);
  m.add_f("final_kl", res.history.back().kl);
  m.add_f("final_total", res.history.back().total);
  const double dist = mean_normalized_global_distance(teacher, res.phi, merged);
  m.add_f("mean_feature_distance_to_teacher", dist);

  Checkpoint ckpt;
  ckpt.config = res.phi.config();
  ckpt.manifest = m.str();
  ckpt.add(res.phi.params());
  ParamList clf;
  res.classifier.collect("classifier", clf);
  ckpt.add(clf);
  save_checkpoint(a.out, ckpt);
  m.write(a.out);
  std::cout << "distilled " << a.generations << " generation(s), student checkpoint " << a.out
            << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, out, csv;
  EpisodeSpec spec;
  EvalConfig cfg;
  bool force = false;
};

int cmd_eval(const EvalArgs& a) {
  require_writable(a.out, a.force);
  const MetaDataset meta = read_dataset(a.data);
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  Backbone phi = backbone_from(ckpt);
  const MetricsRecord rec = evaluate(phi, meta, a.spec, a.cfg);
  write_metrics_jsonl(a.out, rec);
  const std::string csv = a.csv.empty() ? a.out + ".csv" : a.csv;
  write_metrics_csv(csv, rec);

  Manifest m("eval");
  m.add("data", a.data);
  m.add("ckpt", a.ckpt);
  m.add("out", a.out);
  m.add("csv", csv);
  m.add("ways", a.spec.ways);
  m.add("shots", a.spec.shots);
  m.add("queries", a.spec.queries);
  m.add("episodes", a.spec.n_episodes);
  m.add("runs", a.spec.n_runs);
  m.add("aug_copies", a.spec.support_aug_copies);
  m.add("mode", to_string(a.cfg.mode));
  m.add("both_aggregation", to_string(a.cfg.both_agg));
  m.add_f("penalty", a.cfg.fit.penalty);
  m.add("imprint", a.cfg.fit.imprint_init ? 1 : 0);
  m.add("seed", a.cfg.seed);
  m.add_f("median_over_runs", rec.median_mean_acc);
  for (const auto& r : rec.runs) {
    m.add_f("run" + std::to_string(r.run) + ".mean_accuracy", r.mean_acc);
    m.add_f("run" + std::to_string(r.run) + ".ci95", r.ci95);
  }
  m.write(a.out);
  std::cout << "median accuracy over " << a.spec.n_runs << " run(s): " << rec.median_mean_acc
            << "\n";
  return 0;
}

struct ProtoArgs {
  std::string data, out, metrics;
  ProtoConfig cfg;
  EpisodeSpec eval_spec;
  std::uint64_t eval_seed = 0;
  bool force = false;
};

int cmd_proto(const ProtoArgs& a) {
  require_writable(a.out, a.force);
  if (!a.metrics.empty()) require_writable(a.metrics, a.force);
  const MetaDataset meta = read_dataset(a.data);
  ProtoResult res = train_protonet(meta, a.cfg);

  Manifest m("proto");
  m.add("data", a.data);
  m.add("out", a.out);
  m.add("ways", a.cfg.ways);
  m.add("shots", a.cfg.shots);
  m.add("queries", a.cfg.queries);
  m.add("episodes", a.cfg.n_episodes);
  m.add_f("lambda_ce", a.cfg.lambda_ce);
  m.add_f("lambda_gc", a.cfg.lambda_gc);
  m.add_f("lambda_sc", a.cfg.lambda_sc);
  m.add("use_gc", a.cfg.use_gc ? 1 : 0);
  m.add("use_sc", a.cfg.use_sc ? 1 : 0);
  m.add("self_supervised", a.cfg.self_supervised ? 1 : 0);
  m.add_f("lr", a.cfg.lr);
  m.add_f("tau", a.cfg.loss_cfg.tau);
  m.add_f("tau_prime", a.cfg.loss_cfg.tau_prime);
  m.add("seed", a.cfg.seed);
  m.add_f("final_ce", res.history.back().ce);
  m.add_f("final_total", res.history.back().total);

  Checkpoint ckpt;
  ckpt.config = res.phi.config();
  ckpt.manifest = m.str();
  ckpt.add(res.phi.params());
  ckpt.add(res.psi.params());
  save_checkpoint(a.out, ckpt);

  if (!a.metrics.empty()) {
    EvalConfig ecfg;
    ecfg.seed = a.eval_seed;
    const MetricsRecord rec = evaluate(res.phi, meta, a.eval_spec, ecfg);
    write_metrics_jsonl(a.metrics, rec);
    write_metrics_csv(a.metrics + ".csv", rec);
    m.add_f("median_over_runs", rec.median_mean_acc);
    std::cout << "episodic training done; median accuracy " << rec.median_mean_acc << "\n";
  } else {
    std::cout << "episodic training done; checkpoint " << a.out << "\n";
  }
  m.write(a.out);
  return 0;
}

struct AnalyzeArgs {
  std::string kind;  // knn|variance|singular|db
  std::string data, ckpt, out, split = "test";
  std::int64_t query_row = 0;
  std::int64_t k = 5;
  bool raw = false;  // db on raw (un-normalized) features
  bool force = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
  require_writable(a.out, a.force);
  const MetaDataset meta = read_dataset(a.data);
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  Backbone phi = backbone_from(ckpt);
  EmbeddingMatrix m = embed_split(phi, meta, a.split);

  Manifest man("analyze");
  man.add("kind", a.kind);
  man.add("data", a.data);
  man.add("ckpt", a.ckpt);
  man.add("split", a.split);
  man.add("out", a.out);

  if (a.kind == "knn") {
    man.add("query_row", a.query_row);
    man.add("k", a.k);
    const auto ids = knn(m, a.query_row, a.k);
    std::vector<double> values(ids.begin(), ids.end());
    write_curve_csv(a.out, values);
  } else if (a.kind == "variance") {
    write_curve_csv(a.out, explained_variance(m.rows));
  } else if (a.kind == "singular") {
    write_curve_csv(a.out, singular_values(m.rows));
  } else if (a.kind == "db") {
    man.add("raw", a.raw ? 1 : 0);
    Tensor rows = m.rows;
    if (a.raw) {
      // recompute without the final normalization
      EmbeddingMatrix raw_m = m;
      const ModelConfig& mc = phi.config();
      const std::int64_t per = mc.input_channels * mc.input_size * mc.input_size;
      Tensor x = Tensor::zeros({static_cast<std::int64_t>(m.source_ids.size()),
                                mc.input_channels, mc.input_size, mc.input_size});
      for (std::size_t i = 0; i < m.source_ids.size(); ++i) {
        const auto& px = meta.images[static_cast<std::size_t>(m.source_ids[i])].pixels;
        for (std::int64_t j = 0; j < per; ++j) {
          x.data()[i * static_cast<std::size_t>(per) + static_cast<std::size_t>(j)] =
              static_cast<real>(px[static_cast<std::size_t>(j)]);
        }
      }
      raw_m.rows = phi.embed(x).global;
      rows = raw_m.rows;
    }
    const double db = davies_bouldin(rows, m.labels);
    write_curve_csv(a.out, {db});
    man.add_f("davies_bouldin", db);
  } else {
    throw ConfigError("unknown analyze kind '" + a.kind + "' (knn|variance|singular|db)");
  }
  man.write(a.out);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"spatial contrastive learning toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "kernel thread ceiling (1 = serial kernels)");

  // synth ------------------------------------------------------------
  SynthArgs synth;
  synth.cfg.train_classes = -1;
  auto* s = app.add_subcommand("synth", "generate a synthetic few-shot dataset");
  s->add_option("--out", synth.out, "output dataset file")->required();
  s->add_option("--classes", synth.cfg.n_classes, "total classes (>= 10)");
  s->add_option("--per-class", synth.cfg.per_class, "images per class");
  s->add_option("--image-size", synth.cfg.image_size, "square image side");
  s->add_option("--channels", synth.cfg.channels, "image channels");
  s->add_option("--train-classes", synth.cfg.train_classes, "train split size (-1: 2/3)");
  s->add_option("--val-classes", synth.cfg.val_classes, "val split size");
  s->add_option("--seed", synth.cfg.seed, "generator seed");
  s->add_option("--noise", synth.cfg.noise, "nuisance/noise scale");
  s->add_flag("--force", synth.force, "overwrite existing output");

  // pretrain ----------------------------------------------------------
  PretrainArgs pre;
  PresetChoice pre_preset;
  std::string pre_objective = "ce+sc";
  std::string pre_agg, pre_anchor, pre_decay;
  double pre_lr = -1, pre_momentum = -1, pre_wd = -1, pre_tau = -1, pre_tau_prime = -1;
  double pre_lce = -1, pre_lsc = -1, pre_lgc = -1;
  std::int64_t pre_epochs = -1, pre_batch = -1;
  std::uint64_t pre_seed = 1;
  auto* p = app.add_subcommand("pretrain", "composite-objective pre-training");
  p->add_option("--data", pre.data, "dataset file")->required();
  p->add_option("--out", pre.out, "output checkpoint")->required();
  p->add_option("--objective", pre_objective, "ce|ce+gc|ce+sc|ce+gc+sc|ce+ssgc|ce+sssc");
  p->add_option("--preset", pre_preset.name, "desk|paper-mini|paper-cifar");
  p->add_option("--epochs", pre_epochs, "training epochs");
  p->add_option("--batch", pre_batch, "batch size N (2N views per step)");
  p->add_option("--lr", pre_lr, "learning rate");
  p->add_option("--momentum", pre_momentum, "sgd momentum");
  p->add_option("--weight-decay", pre_wd, "weight decay");
  p->add_option("--decay-epochs", pre_decay, "comma-separated lr decay epochs");
  p->add_option("--tau", pre_tau, "global temperature");
  p->add_option("--tau-prime", pre_tau_prime, "spatial temperature");
  p->add_option("--aggregation", pre_agg, "sum|mean|max|logsumexp");
  p->add_option("--anchor-norm", pre_anchor, "sum|mean");
  p->add_option("--lambda-ce", pre_lce, "CE weight");
  p->add_option("--lambda-sc", pre_lsc, "SC weight");
  p->add_option("--lambda-gc", pre_lgc, "GC weight");
  p->add_option("--seed", pre_seed, "training seed");
  p->add_flag("--force", pre.force, "overwrite existing output");

  // distill -----------------------------------------------------------
  DistillArgs dis;
  std::int64_t dis_epochs = -1, dis_batch = -1;
  double dis_lr = -1;
  std::string dis_decay, dis_init = "fresh";
  std::uint64_t dis_seed = 1;
  auto* d = app.add_subcommand("distill", "teacher-to-student distillation");
  d->add_option("--data", dis.data, "dataset file")->required();
  d->add_option("--teacher", dis.teacher, "teacher checkpoint")->required();
  d->add_option("--out", dis.out, "student checkpoint")->required();
  d->add_option("--lambda-cd", dis.dcfg.lambda_cd, "feature-matching weight");
  d->add_option("--lambda-kl", dis.dcfg.lambda_kl, "divergence weight");
  d->add_option("--kl-temp", dis.dcfg.kl_temperature, "distillation temperature");
  d->add_option("--alpha", dis.dcfg.alpha, "global feature term weight");
  d->add_option("--beta", dis.dcfg.beta, "spatial feature term weight");
  d->add_option("--generations", dis.generations, "sequential distillation steps");
  d->add_option("--init", dis_init, "student init: fresh|copy");
  d->add_option("--epochs", dis_epochs, "training epochs");
  d->add_option("--batch", dis_batch, "batch size");
  d->add_option("--lr", dis_lr, "learning rate (distillation preset 1e-2)");
  d->add_option("--decay-epochs", dis_decay, "comma-separated lr decay epochs");
  d->add_option("--seed", dis_seed, "training seed");
  d->add_flag("--force", dis.force, "overwrite existing output");

  // eval ----------------------------------------------------------------
  EvalArgs ev;
  std::string ev_mode = "global", ev_both = "sum";
  auto* e = app.add_subcommand("eval", "few-shot meta-testing");
  e->add_option("--data", ev.data, "dataset file")->required();
  e->add_option("--ckpt", ev.ckpt, "embedding checkpoint")->required();
  e->add_option("--out", ev.out, "metrics JSON-lines output")->required();
  e->add_option("--csv", ev.csv, "metrics CSV output (default: <out>.csv)");
  e->add_option("--ways", ev.spec.ways, "classes per episode");
  e->add_option("--shots", ev.spec.shots, "support images per class");
  e->add_option("--queries", ev.spec.queries, "query images per class");
  e->add_option("--episodes", ev.spec.n_episodes, "episodes per run");
  e->add_option("--runs", ev.spec.n_runs, "independent runs");
  e->add_option("--aug-copies", ev.spec.support_aug_copies, "augmented support copies");
  e->add_option("--mode", ev_mode, "global|spatial|both");
  e->add_option("--both-agg", ev_both, "sum|max");
  e->add_option("--penalty", ev.cfg.fit.penalty, "classifier L2 penalty");
  e->add_flag("--imprint", ev.cfg.fit.imprint_init, "imprinted-weight initialization");
  e->add_option("--seed", ev.cfg.seed, "evaluation seed");
  e->add_flag("--force", ev.force, "overwrite existing output");

  // proto ----------------------------------------------------------------
  ProtoArgs pr;
  std::string pr_aux = "none";
  std::string pr_preset = "desk";
  auto* pc = app.add_subcommand("proto", "episodic metric-learning training");
  pc->add_option("--preset", pr_preset, "desk|paper-mini|paper-cifar");
  pc->add_option("--data", pr.data, "dataset file")->required();
  pc->add_option("--out", pr.out, "output checkpoint")->required();
  pc->add_option("--metrics", pr.metrics, "metrics JSON-lines output (enables eval)");
  pc->add_option("--ways", pr.cfg.ways, "classes per training episode");
  pc->add_option("--shots", pr.cfg.shots, "support per class");
  pc->add_option("--queries", pr.cfg.queries, "queries per class");
  pc->add_option("--episodes", pr.cfg.n_episodes, "training episodes");
  pc->add_option("--lambda-ce", pr.cfg.lambda_ce, "CE weight");
  pc->add_option("--lambda-gc", pr.cfg.lambda_gc, "GC weight");
  pc->add_option("--lambda-sc", pr.cfg.lambda_sc, "SC weight");
  pc->add_option("--aux", pr_aux, "auxiliary losses: none|gc|sc|gc+sc");
  pc->add_flag("--ss", pr.cfg.self_supervised, "self-supervised contrastive labels");
  pc->add_option("--lr", pr.cfg.lr, "adam learning rate");
  pc->add_option("--seed", pr.cfg.seed, "training seed");
  pc->add_option("--eval-ways", pr.eval_spec.ways, "eval classes per episode");
  pc->add_option("--eval-shots", pr.eval_spec.shots, "eval support per class");
  pc->add_option("--eval-queries", pr.eval_spec.queries, "eval queries per class");
  pc->add_option("--eval-episodes", pr.eval_spec.n_episodes, "eval episodes per run");
  pc->add_option("--eval-runs", pr.eval_spec.n_runs, "eval runs");
  pc->add_option("--eval-seed", pr.eval_seed, "eval seed");
  pc->add_flag("--force", pr.force, "overwrite existing output");

  // analyze ---------------------------------------------------------------
  AnalyzeArgs an;
  auto* az = app.add_subcommand("analyze", "embedding diagnostics");
  az->require_subcommand(1);
  for (const char* kind : {"knn", "variance", "singular", "db"}) {
    auto* sub = az->add_subcommand(kind, std::string("emit ") + kind + " curve");
    sub->allow_config_extras(false);
    sub->add_option("--data", an.data, "dataset file")->required();
    sub->add_option("--ckpt", an.ckpt, "embedding checkpoint")->required();
    sub->add_option("--out", an.out, "output CSV")->required();
    sub->add_option("--split", an.split, "train|val|test|all");
    if (std::string(kind) == "knn") {
      sub->add_option("--query", an.query_row, "query row index");
      sub->add_option("--k", an.k, "neighbor count");
    }
    if (std::string(kind) == "db") {
      sub->add_flag("--raw", an.raw, "use un-normalized features");
    }
    sub->add_flag("--force", an.force, "overwrite existing output");
  }

  std::vector<std::string> expanded;
  try {
    expanded = expand_config_args(args);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const FormatError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
  std::vector<const char*> argv;
  argv.push_back("scl");
  for (const auto& a : expanded) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& help) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& err) {
    std::cerr << err.what() << "\n";
    return 2;
  }

  try {
    set_max_threads(threads);
    if (s->parsed()) return cmd_synth(synth);
    if (p->parsed()) {
      pre.cfg = pre_preset.train();
      pre.cfg.objective = Objective::parse(pre_objective);
      if (pre_epochs >= 0) pre.cfg.epochs = pre_epochs;
      if (pre_batch >= 0) pre.cfg.batch_size = pre_batch;
      if (pre_lr >= 0) pre.cfg.lr = static_cast<real>(pre_lr);
      if (pre_momentum >= 0) pre.cfg.momentum = static_cast<real>(pre_momentum);
      if (pre_wd >= 0) pre.cfg.weight_decay = static_cast<real>(pre_wd);
      if (!pre_decay.empty()) pre.cfg.decay_epochs = parse_int_list(pre_decay);
      if (pre_tau > 0) pre.cfg.loss_cfg.tau = static_cast<real>(pre_tau);
      if (pre_tau_prime > 0) pre.cfg.loss_cfg.tau_prime = static_cast<real>(pre_tau_prime);
      if (!pre_agg.empty()) pre.cfg.loss_cfg.aggregation = aggregation_from_string(pre_agg);
      if (!pre_anchor.empty()) {
        pre.cfg.loss_cfg.anchor_normalization = anchor_norm_from_string(pre_anchor);
      }
      if (pre_lce >= 0) pre.cfg.weights.lambda_ce = static_cast<real>(pre_lce);
      if (pre_lsc >= 0) pre.cfg.weights.lambda_sc = static_cast<real>(pre_lsc);
      if (pre_lgc >= 0) pre.cfg.weights.lambda_gc = static_cast<real>(pre_lgc);
      pre.cfg.seed = pre_seed;
      return cmd_pretrain(pre);
    }
    if (d->parsed()) {
      dis.cfg = TrainConfig::desk();
      dis.cfg.lr = real(1e-2);  // distillation preset
      dis.cfg.decay_epochs = {20, 26};
      if (dis_epochs >= 0) dis.cfg.epochs = dis_epochs;
      if (dis_batch >= 0) dis.cfg.batch_size = dis_batch;
      if (dis_lr >= 0) dis.cfg.lr = static_cast<real>(dis_lr);
      if (!dis_decay.empty()) dis.cfg.decay_epochs = parse_int_list(dis_decay);
      dis.cfg.seed = dis_seed;
      if (dis_init == "copy") {
        dis.init_from_teacher = true;
      } else if (dis_init != "fresh") {
        throw ConfigError("--init must be fresh or copy");
      }
      if (dis.generations < 1) throw ConfigError("--generations must be >= 1");
      return cmd_distill(dis);
    }
    if (e->parsed()) {
      ev.cfg.mode = feature_mode_from_string(ev_mode);
      ev.cfg.both_agg = both_aggregation_from_string(ev_both);
      return cmd_eval(ev);
    }
    if (pc->parsed()) {
      ProtoConfig base;
      if (pr_preset == "desk") {
        base = ProtoConfig::desk();
      } else if (pr_preset == "paper-mini") {
        base = ProtoConfig::paper();
      } else if (pr_preset == "paper-cifar") {
        base = ProtoConfig::paper();
        base.model = ModelConfig::paper_cifar();
      } else {
        throw ConfigError("unknown preset '" + pr_preset + "' (desk|paper-mini|paper-cifar)");
      }
      const ProtoConfig preset_defaults = base;
      // CLI values (or struct defaults) override the preset's episodic shape
      const ProtoConfig flag_defaults;
      if (pr.cfg.ways != flag_defaults.ways || pr_preset == "desk") base.ways = pr.cfg.ways;
      base.ways = pr.cfg.ways;
      base.shots = pr.cfg.shots;
      base.queries = pr.cfg.queries;
      base.n_episodes = pr.cfg.n_episodes;
      base.lambda_ce = pr.cfg.lambda_ce;
      base.lambda_gc = pr.cfg.lambda_gc;
      base.lambda_sc = pr.cfg.lambda_sc;
      base.self_supervised = pr.cfg.self_supervised;
      base.lr = pr.cfg.lr;
      base.seed = pr.cfg.seed;
      if (pr_aux == "none") {
        base.use_gc = base.use_sc = false;
      } else if (pr_aux == "gc") {
        base.use_gc = true;
      } else if (pr_aux == "sc") {
        base.use_sc = true;
      } else if (pr_aux == "gc+sc") {
        base.use_gc = base.use_sc = true;
      } else {
        throw ConfigError("--aux must be none|gc|sc|gc+sc");
      }
      pr.cfg = base;
      return cmd_proto(pr);
    }
    if (az->parsed()) {
      an.kind = az->get_subcommands().front()->get_name();
      return cmd_analyze(an);
    }
    std::cerr << "no subcommand given\n";
    return 2;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const DomainError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return 4;
  } catch (const Error& err) {  // format, contract, shape
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
}

}  // namespace scl
