#pragma once

#include <string>
#include <vector>

#include "scl/tensor.hpp"

namespace scl {

// A trainable tensor plus its registry name and weight-decay eligibility.
// Decay applies to weights only, never to biases.
struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

using ParamList = std::vector<NamedParam>;

class Sgd {
 public:
  Sgd(ParamList params, real lr, real momentum, real weight_decay);

  void step();
  void zero_grad();
  void set_lr(real lr) { lr_ = lr; }
  real lr() const { return lr_; }

 private:
  ParamList params_;
  std::vector<std::vector<real>> velocity_;
  real lr_;
  real momentum_;
  real weight_decay_;
};

class Adam {
 public:
  Adam(ParamList params, real lr, real beta1 = real(0.9), real beta2 = real(0.999),
       real eps = real(1e-8));

  void step();
  void zero_grad();
  void set_lr(real lr) { lr_ = lr; }
  real lr() const { return lr_; }

 private:
  ParamList params_;
  std::vector<std::vector<real>> m_;
  std::vector<std::vector<real>> v_;
  real lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace scl
