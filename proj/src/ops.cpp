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

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

// y_i = f(x_i); backward pulls g_i * dfdx(x_i, y_i).
template <typename F, typename D>
Tensor unary_op(const Tensor& x, F f, D dfdx) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.data();
  auto& yd = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = f(xd[i]);
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, dfdx] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::size_t i = 0; i < xn->data.size(); ++i) {
        gx[i] += on->grad[i] * dfdx(xn->data[i], on->data[i]);
      }
    });
  }
  return out;
}

enum class BinKind { kAdd, kSub, kMul, kDiv };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  check_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.shape());
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& yd = out.data();
  switch (kind) {
    case BinKind::kAdd:
      for (std::size_t i = 0; i < ad.size(); ++i) yd[i] = ad[i] + bd[i];
      break;
    case BinKind::kSub:
      for (std::size_t i = 0; i < ad.size(); ++i) yd[i] = ad[i] - bd[i];
      break;
    case BinKind::kMul:
      for (std::size_t i = 0; i < ad.size(); ++i) yd[i] = ad[i] * bd[i];
      break;
    case BinKind::kDiv:
      for (std::size_t i = 0; i < ad.size(); ++i) yd[i] = ad[i] / bd[i];
      break;
  }
  if (taping({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record(on, [an, bn, on, kind] {
      const auto& g = on->grad;
      const std::size_t n = g.size();
      if (an->requires_grad) {
        real* ga = ensure_grad(an);
        switch (kind) {
          case BinKind::kAdd:
          case BinKind::kSub:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            break;
          case BinKind::kMul:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->data[i];
            break;
          case BinKind::kDiv:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bn->data[i];
            break;
        }
      }
      if (bn->requires_grad) {
        real* gb = ensure_grad(bn);
        switch (kind) {
          case BinKind::kAdd:
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            break;
          case BinKind::kSub:
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            break;
          case BinKind::kMul:
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * an->data[i];
            break;
          case BinKind::kDiv:
            for (std::size_t i = 0; i < n; ++i) {
              gb[i] -= g[i] * an->data[i] / (bn->data[i] * bn->data[i]);
            }
            break;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kDiv, "div"); }

Tensor add_scalar(const Tensor& a, real s) {
  return unary_op(a, [s](real v) { return v + s; }, [](real, real) { return real(1); });
}

Tensor mul_scalar(const Tensor& a, real s) {
  return unary_op(a, [s](real v) { return v * s; }, [s](real, real) { return s; });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](real v) { return v > 0 ? v : real(0); },
                  [](real v, real) { return v > 0 ? real(1) : real(0); });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, [](real v) { return std::exp(v); }, [](real, real y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, [](real v) { return std::log(v); },
                  [](real v, real) { return real(1) / v; });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, [](real v) { return -v; }, [](real, real) { return real(-1); });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                     " changes element count");
  }
  Tensor out = Tensor::from(std::move(new_shape), x.data());
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on] {
      if (!xn->requires_grad) return;
      xn->accumulate(on->grad.data(), on->numel());
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: need rank 2, got " + shape_str(x.shape()));
  const std::int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, m, n] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) gx[i * n + j] += on->grad[static_cast<std::size_t>(j * m + i)];
      }
    });
  }
  return out;
}

Tensor spatial_flatten(const Tensor& x) {
  if (x.rank() != 4) {
    throw ShapeError("spatial_flatten: need [B,C,H,W], got " + shape_str(x.shape()));
  }
  const std::int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({b, hw, c});
  const auto& xd = x.data();
  auto& yd = out.data();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      for (std::int64_t p = 0; p < hw; ++p) {
        yd[static_cast<std::size_t>((bi * hw + p) * c + ci)] =
            xd[static_cast<std::size_t>((bi * c + ci) * hw + p)];
      }
    }
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, b, c, hw] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
          for (std::int64_t p = 0; p < hw; ++p) {
            gx[(bi * c + ci) * hw + p] += on->grad[static_cast<std::size_t>((bi * hw + p) * c + ci)];
          }
        }
      }
    });
  }
  return out;
}

Tensor gather0(const Tensor& x, const std::vector<std::int64_t>& idx) {
  if (x.rank() < 1) throw ShapeError("gather0: need rank >= 1");
  const std::int64_t d0 = x.dim(0);
  const std::int64_t slice = x.numel() / d0;
  for (const auto i : idx) {
    if (i < 0 || i >= d0) throw DomainError("gather0: index " + std::to_string(i) + " out of [0," + std::to_string(d0) + ")");
  }
  Shape os = x.shape();
  os[0] = static_cast<std::int64_t>(idx.size());
  Tensor out = Tensor::zeros(os);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    std::copy_n(x.data().begin() + idx[t] * slice, slice,
                out.data().begin() + static_cast<std::int64_t>(t) * slice);
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, idx, slice] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::size_t t = 0; t < idx.size(); ++t) {
        const real* g = on->grad.data() + static_cast<std::int64_t>(t) * slice;
        real* dst = gx + idx[t] * slice;
        for (std::int64_t i = 0; i < slice; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor slice0(const Tensor& x, std::int64_t begin, std::int64_t count) {
  if (x.rank() < 1 || begin < 0 || count < 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice0: rows [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " + shape_str(x.shape()));
  }
  const std::int64_t slice = x.numel() / x.dim(0);
  Shape os = x.shape();
  os[0] = count;
  Tensor out = Tensor::zeros(os);
  std::copy_n(x.data().begin() + begin * slice, count * slice, out.data().begin());
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, begin, slice] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn) + begin * slice;
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[i] += on->grad[i];
    });
  }
  return out;
}

Tensor take_per_row(const Tensor& x, const std::vector<std::int64_t>& idx) {
  if (x.rank() != 2) throw ShapeError("take_per_row: need rank 2");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  if (static_cast<std::int64_t>(idx.size()) != m) {
    throw ShapeError("take_per_row: " + std::to_string(idx.size()) + " indices for " +
                     std::to_string(m) + " rows");
  }
  for (const auto j : idx) {
    if (j < 0 || j >= n) {
      throw DomainError("take_per_row: column " + std::to_string(j) + " out of [0," +
                        std::to_string(n) + ")");
    }
  }
  Tensor out = Tensor::zeros({m});
  for (std::int64_t i = 0; i < m; ++i) out.at(i) = x.at(i, idx[i]);
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, idx, n] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        gx[static_cast<std::int64_t>(i) * n + idx[i]] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("stack_scalars: empty input");
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(xs.size())});
  bool any_grad = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].numel() != 1) throw ShapeError("stack_scalars: input " + std::to_string(i) + " not scalar");
    out.at(static_cast<std::int64_t>(i)) = xs[i].item();
    any_grad = any_grad || xs[i].requires_grad();
  }
  if (GradTape::active() && any_grad) {
    out.set_requires_grad(true);
    std::vector<NodePtr> ins;
    ins.reserve(xs.size());
    for (const auto& t : xs) ins.push_back(t.node());
    NodePtr on = out.node();
    GradTape::active()->record(on, [ins, on] {
      for (std::size_t i = 0; i < ins.size(); ++i) {
        if (!ins[i]->requires_grad) continue;
        ins[i]->accumulate(&on->grad[i], 1);
      }
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& mat, const Tensor& v) {
  if (mat.rank() != 2 || v.rank() != 1 || v.dim(0) != mat.dim(1)) {
    throw ShapeError("add_rowvec: " + shape_str(mat.shape()) + " + " + shape_str(v.shape()));
  }
  const std::int64_t m = mat.dim(0), n = mat.dim(1);
  Tensor out = Tensor::zeros(mat.shape());
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = mat.at(i, j) + v.at(j);
  }
  if (taping({&mat, &v})) {
    out.set_requires_grad(true);
    NodePtr mn = mat.node(), vn = v.node(), on = out.node();
    GradTape::active()->record(on, [mn, vn, on, m, n] {
      if (mn->requires_grad) mn->accumulate(on->grad.data(), on->numel());
      if (vn->requires_grad) {
        real* gv = ensure_grad(vn);
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t j = 0; j < n; ++j) gv[j] += on->grad[static_cast<std::size_t>(i * n + j)];
        }
      }
    });
  }
  return out;
}

Tensor add_colvec(const Tensor& mat, const Tensor& v) {
  if (mat.rank() != 2 || v.rank() != 1 || v.dim(0) != mat.dim(0)) {
    throw ShapeError("add_colvec: " + shape_str(mat.shape()) + " + " + shape_str(v.shape()));
  }
  const std::int64_t m = mat.dim(0), n = mat.dim(1);
  Tensor out = Tensor::zeros(mat.shape());
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = mat.at(i, j) + v.at(i);
  }
  if (taping({&mat, &v})) {
    out.set_requires_grad(true);
    NodePtr mn = mat.node(), vn = v.node(), on = out.node();
    GradTape::active()->record(on, [mn, vn, on, m, n] {
      if (mn->requires_grad) mn->accumulate(on->grad.data(), on->numel());
      if (vn->requires_grad) {
        real* gv = ensure_grad(vn);
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t j = 0; j < n; ++j) gv[i] += on->grad[static_cast<std::size_t>(i * n + j)];
        }
      }
    });
  }
  return out;
}

Tensor reduce(const Tensor& x, Reduce kind, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw DomainError("reduce: axis " + std::to_string(axis) + " invalid for " +
                      shape_str(x.shape()));
  }
  const std::int64_t n = x.dim(axis);
  if (n == 0) throw DomainError("reduce: empty axis " + std::to_string(axis));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape os;
  for (int i = 0; i < x.rank(); ++i) {
    if (i != axis) os.push_back(x.dim(i));
  }
  if (os.empty()) os.push_back(1);
  Tensor out = Tensor::zeros(os);
  const auto& xd = x.data();
  auto& yd = out.data();
  // argmax per output slot (kMax only), first maximal index wins ties.
  std::vector<std::int64_t> arg;
  if (kind == Reduce::kMax) arg.assign(static_cast<std::size_t>(outer * inner), 0);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::size_t oi = static_cast<std::size_t>(o * inner + i);
      auto at = [&](std::int64_t t) { return xd[static_cast<std::size_t>((o * n + t) * inner + i)]; };
      switch (kind) {
        case Reduce::kSum:
        case Reduce::kMean: {
          real acc = 0;
          for (std::int64_t t = 0; t < n; ++t) acc += at(t);
          yd[oi] = kind == Reduce::kMean ? acc / static_cast<real>(n) : acc;
          break;
        }
        case Reduce::kMax: {
          real best = at(0);
          std::int64_t bi = 0;
          for (std::int64_t t = 1; t < n; ++t) {
            if (at(t) > best) {
              best = at(t);
              bi = t;
            }
          }
          yd[oi] = best;
          arg[oi] = bi;
          break;
        }
        case Reduce::kLogSumExp: {
          real m = at(0);
          for (std::int64_t t = 1; t < n; ++t) m = std::max(m, at(t));
          real acc = 0;
          for (std::int64_t t = 0; t < n; ++t) acc += std::exp(at(t) - m);
          yd[oi] = m + std::log(acc);
          break;
        }
      }
    }
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, kind, outer, inner, n, arg] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::size_t oi = static_cast<std::size_t>(o * inner + i);
          const real g = on->grad[oi];
          switch (kind) {
            case Reduce::kSum:
              for (std::int64_t t = 0; t < n; ++t) gx[(o * n + t) * inner + i] += g;
              break;
            case Reduce::kMean:
              for (std::int64_t t = 0; t < n; ++t) {
                gx[(o * n + t) * inner + i] += g / static_cast<real>(n);
              }
              break;
            case Reduce::kMax:
              gx[(o * n + arg[oi]) * inner + i] += g;
              break;
            case Reduce::kLogSumExp: {
              const real y = on->data[oi];
              for (std::int64_t t = 0; t < n; ++t) {
                const std::int64_t xi = (o * n + t) * inner + i;
                gx[xi] += g * std::exp(xn->data[static_cast<std::size_t>(xi)] - y);
              }
              break;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor flat = reshape(x, {x.numel()});
  return reduce(flat, Reduce::kSum, 0);
}

Tensor mean_all(const Tensor& x) {
  Tensor flat = reshape(x, {x.numel()});
  return reduce(flat, Reduce::kMean, 0);
}

namespace {

void check_finite_rows_input(const Tensor& x, const char* op) {
  for (const real v : x.data()) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: need rank 2, got " + shape_str(x.shape()));
  check_finite_rows_input(x, "softmax_rows");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < m; ++i) {
    real mx = x.at(i, 0);
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    real denom = 0;
    for (std::int64_t j = 0; j < n; ++j) {
      const real e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) /= denom;
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, m, n] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::int64_t i = 0; i < m; ++i) {
        real dot = 0;
        for (std::int64_t j = 0; j < n; ++j) {
          dot += on->grad[static_cast<std::size_t>(i * n + j)] *
                 on->data[static_cast<std::size_t>(i * n + j)];
        }
        for (std::int64_t j = 0; j < n; ++j) {
          const std::size_t k = static_cast<std::size_t>(i * n + j);
          gx[k] += on->data[k] * (on->grad[k] - dot);
        }
      }
    });
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("log_softmax_rows: need rank 2, got " + shape_str(x.shape()));
  }
  check_finite_rows_input(x, "log_softmax_rows");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < m; ++i) {
    real mx = x.at(i, 0);
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    real denom = 0;
    for (std::int64_t j = 0; j < n; ++j) denom += std::exp(x.at(i, j) - mx);
    const real lse = mx + std::log(denom);
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) - lse;
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, m, n] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::int64_t i = 0; i < m; ++i) {
        real gsum = 0;
        for (std::int64_t j = 0; j < n; ++j) gsum += on->grad[static_cast<std::size_t>(i * n + j)];
        for (std::int64_t j = 0; j < n; ++j) {
          const std::size_t k = static_cast<std::size_t>(i * n + j);
          gx[k] += on->grad[k] - std::exp(on->data[k]) * gsum;
        }
      }
    });
  }
  return out;
}

Tensor l2_normalize(const Tensor& x, real eps) {
  if (x.rank() < 1) throw ShapeError("l2_normalize: need rank >= 1");
  const std::int64_t d = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.data();
  auto& yd = out.data();
  std::vector<real> norms(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    real s = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const real v = xd[static_cast<std::size_t>(r * d + j)];
      s += v * v;
    }
    const real nrm = std::sqrt(s);
    norms[static_cast<std::size_t>(r)] = nrm;
    const real denom = std::max(nrm, eps);
    for (std::int64_t j = 0; j < d; ++j) {
      yd[static_cast<std::size_t>(r * d + j)] = xd[static_cast<std::size_t>(r * d + j)] / denom;
    }
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record(on, [xn, on, rows, d, eps, norms] {
      if (!xn->requires_grad) return;
      real* gx = ensure_grad(xn);
      for (std::int64_t r = 0; r < rows; ++r) {
        const real nrm = norms[static_cast<std::size_t>(r)];
        const real* g = on->grad.data() + r * d;
        const real* y = on->data.data() + r * d;
        if (nrm >= eps) {
          real dot = 0;
          for (std::int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
          for (std::int64_t j = 0; j < d; ++j) gx[r * d + j] += (g[j] - dot * y[j]) / nrm;
        } else {
          for (std::int64_t j = 0; j < d; ++j) gx[r * d + j] += g[j] / eps;
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not agree");
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  kern::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data().data(), false);
  if (taping({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record(on, [an, bn, on, m, n, k] {
      if (an->requires_grad) {
        // grad_a += g . b^T
        kern::gemm(false, true, m, k, n, on->grad.data(), bn->data.data(), ensure_grad(an), true);
      }
      if (bn->requires_grad) {
        // grad_b += a^T . g
        kern::gemm(true, false, k, n, m, an->data.data(), on->grad.data(), ensure_grad(bn), true);
      }
    });
  }
  return out;
}

}  // namespace scl
