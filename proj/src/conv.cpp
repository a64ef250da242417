#include <algorithm>
#include <cmath>
#include <limits>

#include "scl/kernels.hpp"
#include "scl/tensor.hpp"

namespace scl {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

bool taping(std::initializer_list<const Tensor*> inputs) {
  if (GradTape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

real* ensure_grad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), real(0));
  return n->grad.data();
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: need x[B,C,H,W] and w[O,C,kh,kw], got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                     " do not match weights " + shape_str(w.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for weights " +
                     shape_str(w.shape()));
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >= 1, pad >= 0");
  kern::Conv2dDims d;
  d.batch = x.dim(0);
  d.c_in = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.c_out = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.h_out = (d.h + 2 * pad - d.kh) / stride + 1;
  d.w_out = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw || d.h_out < 1 || d.w_out < 1) {
    throw ShapeError("conv2d: spatial dims of " + shape_str(x.shape()) +
                     " incompatible with kernel " + shape_str(w.shape()) + ", stride " +
                     std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  Tensor out = Tensor::zeros({d.batch, d.c_out, d.h_out, d.w_out});
  kern::conv2d_forward(d, x.data().data(), w.data().data(), bias.data().data(),
                       out.data().data());
  if (taping({&x, &w, &bias})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), wn = w.node(), bn = bias.node(), on = out.node();
    GradTape::active()->record(on, [xn, wn, bn, on, d] {
      if (xn->requires_grad) {
        kern::conv2d_backward_input(d, on->grad.data(), wn->data.data(), ensure_grad(xn));
      }
      if (wn->requires_grad || bn->requires_grad) {
        real* gw = wn->requires_grad ? ensure_grad(wn) : nullptr;
        real* gb = bn->requires_grad ? ensure_grad(bn) : nullptr;
        if (gw) {
          kern::conv2d_backward_params(d, on->grad.data(), xn->data.data(), gw, gb);
        } else if (gb) {
          // bias-only gradient
          for (std::int64_t o = 0; o < d.c_out; ++o) {
            real acc = 0;
            for (std::int64_t b = 0; b < d.batch; ++b) {
              for (std::int64_t i = 0; i < d.h_out * d.w_out; ++i) {
                acc += on->grad[static_cast<std::size_t>((b * d.c_out + o) * d.h_out * d.w_out + i)];
              }
            }
            gb[o] += acc;
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Shared pooling driver. Bins are [lo, hi) ranges per output cell; regular
// k/stride pooling and adaptive pooling only differ in how bins are laid out.
struct PoolBins {
  std::vector<std::int64_t> lo_h, hi_h, lo_w, hi_w;
  std::int64_t out_h = 0, out_w = 0;
};

PoolBins regular_bins(std::int64_t h, std::int64_t w, std::int64_t k, std::int64_t stride) {
  if (k < 1 || stride < 1) throw ConfigError("pool: kernel and stride must be >= 1");
  if (h < k || w < k) {
    throw ShapeError("pool: window " + std::to_string(k) + " larger than input " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  PoolBins b;
  b.out_h = (h - k) / stride + 1;
  b.out_w = (w - k) / stride + 1;
  for (std::int64_t i = 0; i < b.out_h; ++i) {
    b.lo_h.push_back(i * stride);
    b.hi_h.push_back(i * stride + k);
  }
  for (std::int64_t j = 0; j < b.out_w; ++j) {
    b.lo_w.push_back(j * stride);
    b.hi_w.push_back(j * stride + k);
  }
  return b;
}

PoolBins adaptive_bins(std::int64_t h, std::int64_t w, std::int64_t out_side) {
  if (out_side < 1) throw ConfigError("adaptive pool: output side must be >= 1");
  if (out_side > h || out_side > w) {
    throw ShapeError("adaptive pool: output side " + std::to_string(out_side) +
                     " exceeds input " + std::to_string(h) + "x" + std::to_string(w));
  }
  PoolBins b;
  b.out_h = out_side;
  b.out_w = out_side;
  for (std::int64_t i = 0; i < out_side; ++i) {
    b.lo_h.push_back(i * h / out_side);
    b.hi_h.push_back((i + 1) * h / out_side);
  }
  for (std::int64_t j = 0; j < out_side; ++j) {
    b.lo_w.push_back(j * w / out_side);
    b.hi_w.push_back((j + 1) * w / out_side);
  }
  return b;
}

Tensor pool_op(const Tensor& x, const PoolBins& bins, bool is_max) {
  if (x.rank() != 4) throw ShapeError("pool: need [B,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros({batch, ch, bins.out_h, bins.out_w});
  const auto& xd = x.data();
  auto& yd = out.data();
  // argmax (flat input offset) per output cell, first maximal index wins
  std::vector<std::int64_t> arg;
  if (is_max) arg.assign(static_cast<std::size_t>(out.numel()), 0);
  std::int64_t oi = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const std::int64_t base = (b * ch + c) * h * w;
      for (std::int64_t i = 0; i < bins.out_h; ++i) {
        for (std::int64_t j = 0; j < bins.out_w; ++j, ++oi) {
          if (is_max) {
            real best = -std::numeric_limits<real>::infinity();
            std::int64_t bestpos = base + bins.lo_h[static_cast<std::size_t>(i)] * w +
                                   bins.lo_w[static_cast<std::size_t>(j)];
            for (std::int64_t p = bins.lo_h[static_cast<std::size_t>(i)]; p < bins.hi_h[static_cast<std::size_t>(i)]; ++p) {
              for (std::int64_t q = bins.lo_w[static_cast<std::size_t>(j)]; q < bins.hi_w[static_cast<std::size_t>(j)]; ++q) {
                const real v = xd[static_cast<std::size_t>(base + p * w + q)];
                if (v > best) {
                  best = v;
                  bestpos = base + p * w + q;
                }
              }
            }
            yd[static_cast<std::size_t>(oi)] = best;
            arg[static_cast<std::size_t>(oi)] = bestpos;
          } else {
            real acc = 0;
            std::int64_t cnt = 0;
            for (std::int64_t p = bins.lo_h[static_cast<std::size_t>(i)]; p < bins.hi_h[static_cast<std::size_t>(i)]; ++p) {
              for (std::int64_t q = bins.lo_w[static_cast<std::size_t>(j)]; q < bins.hi_w[static_cast<std::size_t>(j)]; ++q) {
                acc += xd[static_cast<std::size_t>(base + p * w + q)];
                ++cnt;
              }
            }
            yd[static_cast<std::size_t>(oi)] = acc / static_cast<real>(cnt);
          }
        }
      }
    }
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, bins, is_max, arg, batch, ch, h, w] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      std::int64_t oi = 0;
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < ch; ++c) {
          const std::int64_t base = (b * ch + c) * h * w;
          for (std::int64_t i = 0; i < bins.out_h; ++i) {
            for (std::int64_t j = 0; j < bins.out_w; ++j, ++oi) {
              const real g = on->grad[static_cast<std::size_t>(oi)];
              if (is_max) {
                gx[arg[static_cast<std::size_t>(oi)]] += g;
              } else {
                const std::int64_t cnt =
                    (bins.hi_h[static_cast<std::size_t>(i)] - bins.lo_h[static_cast<std::size_t>(i)]) *
                    (bins.hi_w[static_cast<std::size_t>(j)] - bins.lo_w[static_cast<std::size_t>(j)]);
                for (std::int64_t p = bins.lo_h[static_cast<std::size_t>(i)]; p < bins.hi_h[static_cast<std::size_t>(i)]; ++p) {
                  for (std::int64_t q = bins.lo_w[static_cast<std::size_t>(j)]; q < bins.hi_w[static_cast<std::size_t>(j)]; ++q) {
                    gx[base + p * w + q] += g / static_cast<real>(cnt);
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

namespace {
void check_pool_rank(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("pool: need [B,C,H,W], got " + shape_str(x.shape()));
}
}  // namespace

Tensor max_pool2d(const Tensor& x, std::int64_t k, std::int64_t stride) {
  check_pool_rank(x);
  return pool_op(x, regular_bins(x.dim(2), x.dim(3), k, stride), true);
}

Tensor avg_pool2d(const Tensor& x, std::int64_t k, std::int64_t stride) {
  check_pool_rank(x);
  return pool_op(x, regular_bins(x.dim(2), x.dim(3), k, stride), false);
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::int64_t out_side) {
  check_pool_rank(x);
  return pool_op(x, adaptive_bins(x.dim(2), x.dim(3), out_side), false);
}

Tensor adaptive_max_pool2d(const Tensor& x, std::int64_t out_side) {
  check_pool_rank(x);
  return pool_op(x, adaptive_bins(x.dim(2), x.dim(3), out_side), true);
}

}  // namespace scl
