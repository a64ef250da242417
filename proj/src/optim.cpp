#include "scl/optim.hpp"

#include <cmath>

namespace scl {

Sgd::Sgd(ParamList params, real lr, real momentum, real weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    velocity_.emplace_back(p.tensor.numel(), real(0));
  }
}

void Sgd::step() {
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.tensor.has_grad()) continue;
    const auto& g = p.tensor.grad();
    auto& w = p.tensor.data();
    auto& v = velocity_[pi];
    const real wd = p.decay ? weight_decay_ : real(0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const real gi = g[i] + wd * w[i];
      v[i] = momentum_ * v[i] + gi;
      w[i] -= lr_ * v[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Adam::Adam(ParamList params, real lr, real beta1, real beta2, real eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), real(0));
    v_.emplace_back(p.tensor.numel(), real(0));
  }
}

void Adam::step() {
  ++t_;
  const real bc1 = real(1) - std::pow(beta1_, static_cast<real>(t_));
  const real bc2 = real(1) - std::pow(beta2_, static_cast<real>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.tensor.has_grad()) continue;
    const auto& g = p.tensor.grad();
    auto& w = p.tensor.data();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (real(1) - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (real(1) - beta2_) * g[i] * g[i];
      const real mhat = m[i] / bc1;
      const real vhat = v[i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace scl
