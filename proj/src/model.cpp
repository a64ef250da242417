#include "scl/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace scl {

void ModelConfig::validate() const {
  if (input_channels < 1 || input_size < 8) {
    throw ConfigError("model: need input_channels >= 1 and input_size >= 8");
  }
  if (input_size % 8 != 0) {
    throw ConfigError("model: input_size " + std::to_string(input_size) +
                      " must be divisible by 8 (three 2x2 pools)");
  }
  if (conv1_channels < 1 || conv2_channels < 1) throw ConfigError("model: conv channels must be >= 1");
  if (!(feature_dim >= head_dim && head_dim >= 1)) {
    throw ConfigError("model: need feature_dim >= head_dim >= 1, got d=" +
                      std::to_string(feature_dim) + ", d'=" + std::to_string(head_dim));
  }
  if (pool_target < 1) throw ConfigError("model: pool_target must be >= 1");
  if (spatial_side < 1) throw ConfigError("model: spatial_side must be >= 1");
}

void ModelConfig::finalize() {
  const std::int64_t conv_side = input_size / 8;
  spatial_side = conv_side > pool_target ? pool_target : conv_side;
  validate();
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.input_channels = 3;
  c.input_size = 16;
  c.conv1_channels = 16;
  c.conv2_channels = 32;
  c.feature_dim = 64;
  c.head_dim = 16;
  c.pool_target = 3;
  c.finalize();
  return c;
}

ModelConfig ModelConfig::paper_mini() {
  ModelConfig c;
  c.input_channels = 3;
  c.input_size = 80;  // nearest multiple of 8 to the 84-pixel original
  c.conv1_channels = 16;
  c.conv2_channels = 32;
  c.feature_dim = 640;
  c.head_dim = 80;
  c.pool_target = 3;
  c.finalize();
  return c;
}

ModelConfig ModelConfig::paper_cifar() {
  ModelConfig c = paper_mini();
  c.input_size = 32;
  c.finalize();
  return c;
}

Dense::Dense(std::int64_t in, std::int64_t out, RngStream& rng)
    : w(Tensor::uniform_fan_in({in, out}, in, rng)), b(Tensor::zeros({out}, true)) {}

Tensor Dense::forward(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }

void Dense::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".w", w, true});
  out.push_back({prefix + ".b", b, false});
}

Mlp2::Mlp2(std::int64_t in, std::int64_t out, RngStream& rng)
    : fc1(in, in, rng), fc2(in, out, rng) {}

Tensor Mlp2::forward(const Tensor& x) const { return fc2.forward(relu(fc1.forward(x))); }

void Mlp2::collect(const std::string& prefix, ParamList& out) {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Backbone::Backbone(ModelConfig cfg, RngStream rng) : cfg_(cfg) {
  cfg_.finalize();
  const auto conv_init = [&rng](std::int64_t o, std::int64_t c) {
    return Tensor::uniform_fan_in({o, c, 3, 3}, c * 9, rng);
  };
  conv1_w_ = conv_init(cfg_.conv1_channels, cfg_.input_channels);
  conv1_b_ = Tensor::zeros({cfg_.conv1_channels}, true);
  conv2_w_ = conv_init(cfg_.conv2_channels, cfg_.conv1_channels);
  conv2_b_ = Tensor::zeros({cfg_.conv2_channels}, true);
  conv3_w_ = conv_init(cfg_.feature_dim, cfg_.conv2_channels);
  conv3_b_ = Tensor::zeros({cfg_.feature_dim}, true);
}

FeaturePack Backbone::embed(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.input_channels || x.dim(2) != cfg_.input_size ||
      x.dim(3) != cfg_.input_size) {
    throw ConfigError("embed: input " + shape_str(x.shape()) + " does not match config [B," +
                      std::to_string(cfg_.input_channels) + "," + std::to_string(cfg_.input_size) +
                      "," + std::to_string(cfg_.input_size) + "]");
  }
  Tensor h = max_pool2d(relu(conv2d(x, conv1_w_, conv1_b_, 1, 1)), 2, 2);
  h = max_pool2d(relu(conv2d(h, conv2_w_, conv2_b_, 1, 1)), 2, 2);
  h = max_pool2d(relu(conv2d(h, conv3_w_, conv3_b_, 1, 1)), 2, 2);
  if (h.dim(2) > cfg_.pool_target) h = adaptive_avg_pool2d(h, cfg_.pool_target);
  FeaturePack fp;
  fp.spatial = spatial_flatten(h);                   // [B, HW, d]
  fp.global = reduce(fp.spatial, Reduce::kMean, 1);  // [B, d]
  return fp;
}

ParamList Backbone::params() {
  ParamList out;
  out.push_back({"conv1.w", conv1_w_, true});
  out.push_back({"conv1.b", conv1_b_, false});
  out.push_back({"conv2.w", conv2_w_, true});
  out.push_back({"conv2.b", conv2_b_, false});
  out.push_back({"conv3.w", conv3_w_, true});
  out.push_back({"conv3.b", conv3_b_, false});
  return out;
}

void Backbone::freeze() {
  for (auto& p : params()) p.tensor.set_requires_grad(false);
}

AuxHeads::AuxHeads(const ModelConfig& cfg, RngStream rng)
    : projection(cfg.feature_dim, cfg.head_dim, rng),
      value_head(cfg.feature_dim, cfg.head_dim, rng),
      query_head(cfg.feature_dim, cfg.head_dim, rng),
      key_head(cfg.feature_dim, cfg.head_dim, rng) {}

Tensor AuxHeads::project_global(const Tensor& zg) const { return projection.forward(zg); }

AttentionFeatures AuxHeads::attention_features(const Tensor& zs) const {
  if (zs.rank() != 3) {
    throw ShapeError("attention_features: need [B,HW,d], got " + shape_str(zs.shape()));
  }
  const std::int64_t b = zs.dim(0), hw = zs.dim(1), d = zs.dim(2);
  const Tensor flat = reshape(zs, {b * hw, d});
  const std::int64_t dp = value_head.fc2.w.dim(1);
  AttentionFeatures f;
  f.value = reshape(l2_normalize(value_head.forward(flat)), {b, hw, dp});
  f.query = reshape(query_head.forward(flat), {b, hw, dp});
  f.key = reshape(key_head.forward(flat), {b, hw, dp});
  return f;
}

ParamList AuxHeads::params() {
  ParamList out;
  projection.collect("proj", out);
  value_head.collect("value", out);
  query_head.collect("query", out);
  key_head.collect("key", out);
  return out;
}

void Checkpoint::add(const ParamList& params) {
  for (const auto& p : params) tensors.emplace_back(p.name, p.tensor);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void Checkpoint::restore(ParamList params) const {
  for (auto& p : params) {
    bool found = false;
    for (const auto& [n, t] : tensors) {
      if (n != p.name) continue;
      if (t.shape() != p.tensor.shape()) {
        throw ContractError("checkpoint tensor " + n + " has shape " + shape_str(t.shape()) +
                            ", model expects " + shape_str(p.tensor.shape()));
      }
      p.tensor.data() = t.data();
      found = true;
      break;
    }
    if (!found) throw ContractError("checkpoint is missing tensor " + p.name);
  }
}

namespace {

constexpr char kMagic[5] = {'S', 'C', 'L', 'K', '1'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

struct Reader {
  std::ifstream in;
  std::size_t offset = 0;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {}

  void need(char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, offset);
    }
    offset += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    need(reinterpret_cast<char*>(&v), 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    need(reinterpret_cast<char*>(&v), 8, what);
    return v;
  }
  double f64(const char* what) {
    double v;
    need(reinterpret_cast<char*>(&v), 8, what);
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint file " + path + " for writing", 0);
  os.write(kMagic, 5);
  const auto& c = ckpt.config;
  for (const std::int64_t v : {c.input_channels, c.input_size, c.conv1_channels, c.conv2_channels,
                               c.feature_dim, c.head_dim, c.pool_target, c.spatial_side}) {
    put_u32(os, static_cast<std::uint32_t>(v));
  }
  put_u64(os, ckpt.manifest.size());
  os.write(ckpt.manifest.data(), static_cast<std::streamsize>(ckpt.manifest.size()));
  put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(os, static_cast<std::uint64_t>(t.dim(i)));
    for (const real v : t.data()) put_f64(os, static_cast<double>(v));
  }
  if (!os) throw FormatError("write failure on checkpoint file " + path, 0);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  if (!r.in) throw FormatError("cannot open checkpoint file " + path, 0);
  char magic[5];
  r.need(magic, 5, "magic");
  if (std::memcmp(magic, kMagic, 5) != 0) {
    throw FormatError("bad checkpoint magic in " + path, 0);
  }
  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.input_channels = r.u32("config");
  c.input_size = r.u32("config");
  c.conv1_channels = r.u32("config");
  c.conv2_channels = r.u32("config");
  c.feature_dim = r.u32("config");
  c.head_dim = r.u32("config");
  c.pool_target = r.u32("config");
  c.spatial_side = r.u32("config");
  c.validate();
  const std::uint64_t msize = r.u64("manifest size");
  ckpt.manifest.resize(msize);
  if (msize > 0) r.need(ckpt.manifest.data(), msize, "manifest");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t nlen = r.u32("tensor name length");
    std::string name(nlen, '\0');
    r.need(name.data(), nlen, "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::int64_t>(r.u64("tensor dims")));
      numel *= shape.back();
    }
    std::vector<real> data(static_cast<std::size_t>(numel));
    for (auto& v : data) v = static_cast<real>(r.f64("tensor data"));
    ckpt.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  return ckpt;
}

}  // namespace scl
