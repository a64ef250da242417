#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scl/common.hpp"
#include "scl/rng.hpp"

namespace scl {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void accumulate(const real* g, std::int64_t n);
};
}  // namespace detail

// Dense n-dimensional value. Cheap to copy (shared payload); ops record onto
// the thread's active GradTape when any input participates in gradients.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);
  // Fan-in-scaled uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Tensor uniform_fan_in(Shape shape, std::int64_t fan_in, RngStream& rng,
                               bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return node_->numel(); }

  std::vector<real>& data() { return node_->data; }
  const std::vector<real>& data() const { return node_->data; }
  real item() const;

  real& at(std::int64_t i) { return node_->data[static_cast<std::size_t>(i)]; }
  real at(std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }
  real& at(std::int64_t i, std::int64_t j);
  real at(std::int64_t i, std::int64_t j) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  // Gradient of the last backward pass; ShapeError if none was produced.
  const std::vector<real>& grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad();

  // Value copy detached from any gradient bookkeeping.
  Tensor detach() const;

  bool all_finite() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend class GradTape;
};

// Ordered record of differentiable ops. Constructing one installs it as the
// thread's active tape (one at a time per thread); backward() replays the
// records in strict reverse insertion order. Single-context use only.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Seeds d(loss)/d(loss)=1 and propagates to every recorded input.
  void backward(const Tensor& loss);

  void record(std::shared_ptr<detail::TensorNode> out, std::function<void()> pull);
  std::size_t size() const { return nodes_.size(); }

  static GradTape* active();

 private:
  struct Record {
    std::shared_ptr<detail::TensorNode> out;
    std::function<void()> pull;
  };
  std::vector<Record> nodes_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, real s);
Tensor mul_scalar(const Tensor& a, real s);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, real s) { return mul_scalar(a, s); }
inline Tensor operator*(real s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, real s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- shape ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x);  // 2-D only
// [B,C,H,W] -> [B, H*W, C]
Tensor spatial_flatten(const Tensor& x);
// Select slices along axis 0; out[t] = x[idx[t]].
Tensor gather0(const Tensor& x, const std::vector<std::int64_t>& idx);
// Contiguous row-block view-copy along axis 0.
Tensor slice0(const Tensor& x, std::int64_t begin, std::int64_t count);
// out[i] = x[i, idx[i]] for a 2-D x.
Tensor take_per_row(const Tensor& x, const std::vector<std::int64_t>& idx);
// Pack scalars into a length-n vector.
Tensor stack_scalars(const std::vector<Tensor>& xs);

// ---- broadcast helpers ----
// mat[m x n] + v[n] per row / v[m] per column.
Tensor add_rowvec(const Tensor& mat, const Tensor& v);
Tensor add_colvec(const Tensor& mat, const Tensor& v);

// ---- reductions ----
enum class Reduce { kSum, kMean, kMax, kLogSumExp };
// Removes `axis`. Max routes its gradient to the first maximal index.
Tensor reduce(const Tensor& x, Reduce kind, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- rows of 2-D tensors ----
// Row-stochastic softmax with max-subtraction; NumericError on NaN input.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// Trailing-axis vectors scaled to unit norm; vectors with norm < eps are
// divided by eps instead.
Tensor l2_normalize(const Tensor& x, real eps = real(1e-12));

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- convolution / pooling ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::int64_t stride, std::int64_t pad);
Tensor max_pool2d(const Tensor& x, std::int64_t k, std::int64_t stride);
Tensor avg_pool2d(const Tensor& x, std::int64_t k, std::int64_t stride);
Tensor adaptive_avg_pool2d(const Tensor& x, std::int64_t out_side);
Tensor adaptive_max_pool2d(const Tensor& x, std::int64_t out_side);

}  // namespace scl
