#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "scl/model.hpp"
#include "test_util.hpp"

using namespace scl;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_channels = 1;
  c.input_size = 8;
  c.conv1_channels = 2;
  c.conv2_channels = 3;
  c.feature_dim = 4;
  c.head_dim = 3;
  c.pool_target = 3;
  c.finalize();
  return c;
}

}  // namespace

TEST_CASE("config invariants are enforced") {
  ModelConfig c = ModelConfig::desk();
  CHECK(c.spatial_side == 2);
  CHECK(c.feature_dim == 64);
  CHECK(c.head_dim == 16);
  ModelConfig p = ModelConfig::paper_mini();
  CHECK(p.feature_dim == 640);
  CHECK(p.head_dim == 80);
  c.head_dim = c.feature_dim + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  ModelConfig bad = ModelConfig::desk();
  bad.input_size = 20;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("large feature maps are shrunk by adaptive pooling") {
  ModelConfig c = ModelConfig::desk();
  c.input_size = 32;  // conv side 4 > pool_target 3
  c.finalize();
  CHECK(c.spatial_side == 3);
  Backbone net(c, RngStream(1, "init"));
  RngStream rng(2, "x");
  FeaturePack fp = net.embed(testutil::random_tensor({2, 3, 32, 32}, rng, 0, 1));
  CHECK(fp.spatial.shape() == Shape{2, 9, 64});
}

TEST_CASE("embed shape contract and global/spatial consistency") {
  ModelConfig c = ModelConfig::desk();
  Backbone net(c, RngStream(3, "init"));
  RngStream rng(4, "x");
  Tensor x = random_tensor({2, 3, 16, 16}, rng, 0, 1);
  FeaturePack fp = net.embed(x);
  const std::int64_t hw = c.spatial_locations();
  CHECK(fp.spatial.shape() == Shape{2, hw, 64});
  CHECK(fp.global.shape() == Shape{2, 64});
  // global equals the brute-force per-sample mean of spatial rows
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t j = 0; j < 64; ++j) {
      double mean = 0;
      for (std::int64_t p = 0; p < hw; ++p) {
        mean += fp.spatial.data()[static_cast<std::size_t>((b * hw + p) * 64 + j)];
      }
      mean /= static_cast<double>(hw);
      CHECK(std::fabs(mean - fp.global.at(b, j)) <= 1e-12);
    }
  }
}

TEST_CASE("zero final conv produces all-zero features") {
  ModelConfig c = tiny_config();
  Backbone net(c, RngStream(5, "init"));
  for (auto& p : net.params()) {
    if (p.name.rfind("conv3", 0) == 0) {
      for (auto& v : p.tensor.data()) v = 0;
    }
  }
  Tensor x = Tensor::full({1, 1, 8, 8}, real(0.7));
  FeaturePack fp = net.embed(x);
  for (const real v : fp.spatial.data()) CHECK(v == 0.0);
  for (const real v : fp.global.data()) CHECK(v == 0.0);
}

TEST_CASE("embed is permutation-equivariant over the batch") {
  ModelConfig c = tiny_config();
  Backbone net(c, RngStream(6, "init"));
  RngStream rng(7, "x");
  Tensor x = random_tensor({3, 1, 8, 8}, rng, 0, 1);
  FeaturePack fp = net.embed(x);
  // reversed batch
  Tensor xr = Tensor::zeros(x.shape());
  const std::int64_t per = x.numel() / 3;
  for (std::int64_t b = 0; b < 3; ++b) {
    std::copy_n(x.data().begin() + b * per, per, xr.data().begin() + (2 - b) * per);
  }
  FeaturePack fpr = net.embed(xr);
  const std::int64_t gper = fp.global.numel() / 3;
  for (std::int64_t b = 0; b < 3; ++b) {
    for (std::int64_t j = 0; j < gper; ++j) {
      CHECK(fp.global.data()[static_cast<std::size_t>(b * gper + j)] ==
            fpr.global.data()[static_cast<std::size_t>((2 - b) * gper + j)]);
    }
  }
}

TEST_CASE("embed rejects mismatched input") {
  Backbone net(tiny_config(), RngStream(8, "init"));
  CHECK_THROWS_AS(net.embed(Tensor::zeros({1, 2, 8, 8})), ConfigError);
  CHECK_THROWS_AS(net.embed(Tensor::zeros({1, 1, 16, 16})), ConfigError);
}

TEST_CASE("project_global basics and gradient") {
  ModelConfig c = tiny_config();
  AuxHeads heads(c, RngStream(9, "heads"));
  // zero input with zero biases gives zero output
  Tensor z = Tensor::zeros({2, c.feature_dim});
  Tensor f = heads.project_global(z);
  CHECK(f.shape() == Shape{2, c.head_dim});
  for (const real v : f.data()) CHECK(v == 0.0);

  RngStream rng(10, "x");
  Tensor zg = random_tensor({2, c.feature_dim}, rng, -1, 1, true);
  Tensor mask = random_tensor({2, c.head_dim}, rng, 0, 1);
  auto fwd = [&] { return sum_all(mul(heads.project_global(zg), mask)); };
  std::vector<Tensor> leaves{zg};
  for (auto& p : heads.params()) leaves.push_back(p.tensor);
  CHECK(grad_check(fwd, leaves).max_rel_err <= 1e-5);
}

TEST_CASE("attention_features shapes, normalization, determinism") {
  ModelConfig c = tiny_config();
  AuxHeads h1(c, RngStream(11, "heads"));
  AuxHeads h2(c, RngStream(11, "heads"));
  RngStream rng(12, "z");
  Tensor zs = random_tensor({2, 1, c.feature_dim}, rng, -1, 1);
  AttentionFeatures a1 = h1.attention_features(zs);
  CHECK(a1.value.shape() == Shape{2, 1, c.head_dim});
  CHECK(a1.query.shape() == Shape{2, 1, c.head_dim});
  CHECK(a1.key.shape() == Shape{2, 1, c.head_dim});
  // every value row has unit norm (or is zero)
  Tensor zs4 = random_tensor({3, 4, c.feature_dim}, rng, -1, 1);
  AttentionFeatures a4 = h1.attention_features(zs4);
  for (std::int64_t r = 0; r < 12; ++r) {
    double n = 0;
    for (std::int64_t j = 0; j < c.head_dim; ++j) {
      const double v = a4.value.data()[static_cast<std::size_t>(r * c.head_dim + j)];
      n += v * v;
    }
    n = std::sqrt(n);
    CHECK((std::fabs(n - 1.0) <= 1e-6 || n == 0.0));
  }
  // deterministic under a fixed seed
  AttentionFeatures a2 = h2.attention_features(zs);
  CHECK(a1.value.data() == a2.value.data());
  CHECK(a1.query.data() == a2.query.data());
  CHECK(a1.key.data() == a2.key.data());
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  ModelConfig c = tiny_config();
  Backbone net(c, RngStream(13, "init"));
  AuxHeads heads(c, RngStream(13, "heads"));
  Checkpoint ck;
  ck.config = c;
  ck.manifest = "seed=13\nobjective=ce+sc\n";
  ck.add(net.params());
  ck.add(heads.params());
  const std::string path = "/tmp/scl_test_ckpt.bin";
  save_checkpoint(path, ck);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.manifest == ck.manifest);
  CHECK(loaded.config.feature_dim == c.feature_dim);
  REQUIRE(loaded.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(loaded.tensors[i].first == ck.tensors[i].first);
    CHECK(loaded.tensors[i].second.data() == ck.tensors[i].second.data());  // bit-exact
  }

  // restoring into a fresh model reproduces embeddings exactly
  Backbone net2(c, RngStream(99, "other"));
  loaded.restore(net2.params());
  RngStream rng(14, "x");
  Tensor x = random_tensor({1, 1, 8, 8}, rng, 0, 1);
  CHECK(net.embed(x).global.data() == net2.embed(x).global.data());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint format errors carry byte offsets") {
  const std::string path = "/tmp/scl_test_ckpt_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os.write("XXXXX", 5);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  {
    std::ofstream os(path, std::ios::binary);
    os.write("SCLK1", 5);  // truncated right after the magic
  }
  try {
    load_checkpoint(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset() == 5);
  }
  std::remove(path.c_str());
}

TEST_CASE("restore rejects missing and mismatched tensors") {
  ModelConfig c = tiny_config();
  Backbone net(c, RngStream(15, "init"));
  Checkpoint ck;
  ck.config = c;
  ck.add(net.params());
  ck.tensors[0].second = Tensor::zeros({1, 1, 2, 2});  // wrong shape for conv1.w
  CHECK_THROWS_AS(ck.restore(net.params()), ContractError);
  Checkpoint empty;
  empty.config = c;
  CHECK_THROWS_AS(empty.restore(net.params()), ContractError);
}
