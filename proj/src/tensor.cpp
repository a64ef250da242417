#include "scl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace scl {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (const auto d : s) n *= d;
  return n;
}

namespace detail {

void TensorNode::accumulate(const real* g, std::int64_t n) {
  if (grad.empty()) grad.assign(data.size(), real(0));
  for (std::int64_t i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += g[i];
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<detail::TensorNode>();
  const std::int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->data.assign(static_cast<std::size_t>(count), real(0));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<real> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor data of length " + std::to_string(data.size()) +
                     " does not fill shape " + shape_str(shape));
  }
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::uniform_fan_in(Shape shape, std::int64_t fan_in, RngStream& rng,
                              bool requires_grad) {
  if (fan_in < 1) throw ConfigError("fan_in must be >= 1");
  Tensor t = zeros(std::move(shape), requires_grad);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<real>(rng.uniform(-bound, bound));
  return t;
}

real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

real& Tensor::at(std::int64_t i, std::int64_t j) {
  return node_->data[static_cast<std::size_t>(i * dim(1) + j)];
}

real Tensor::at(std::int64_t i, std::int64_t j) const {
  return node_->data[static_cast<std::size_t>(i * dim(1) + j)];
}

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  return *this;
}

const std::vector<real>& Tensor::grad() const {
  if (node_->grad.empty()) {
    throw ShapeError("tensor has no gradient (shape " + shape_str(shape()) + ")");
  }
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = false;
  return Tensor(std::move(n));
}

bool Tensor::all_finite() const {
  for (const real v : node_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {
thread_local GradTape* t_active_tape = nullptr;
}

GradTape::GradTape() {
  if (t_active_tape != nullptr) {
    throw ContractError("a GradTape is already active in this execution context");
  }
  t_active_tape = this;
}

GradTape::~GradTape() { t_active_tape = nullptr; }

GradTape* GradTape::active() { return t_active_tape; }

void GradTape::record(std::shared_ptr<detail::TensorNode> out, std::function<void()> pull) {
  nodes_.push_back(Record{std::move(out), std::move(pull)});
}

void GradTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a tensor that does not require gradients");
  }
  loss.node()->accumulate(&(std::vector<real>{real(1)})[0], 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // no gradient reached this op
    it->pull();
  }
}

}  // namespace scl
