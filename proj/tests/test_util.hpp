#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "scl/model.hpp"
#include "scl/rng.hpp"
#include "scl/tensor.hpp"

namespace testutil {

inline scl::Tensor random_tensor(scl::Shape shape, scl::RngStream& rng, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = false) {
  scl::Tensor t = scl::Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<scl::real>(rng.uniform(lo, hi));
  return t;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::int64_t entries = 0;
  std::int64_t kink_skips = 0;
};

// Two-tier comparison: differences at the finite-difference noise floor
// (loss is O(1) in doubles, so the numeric derivative carries ~1e-10 noise)
// count as exact; above it the error is relative.
inline double rel_err(double a, double b, double atol = 1e-7) {
  const double diff = std::fabs(a - b);
  if (diff <= atol) return 0.0;
  return diff / std::max(std::fabs(a), std::fabs(b));
}

// Central finite differences against reverse-mode gradients for every entry
// of every leaf. `forward` must rebuild the full computation from the leaves.
//
// With skip_kinks, entries where the loss is locally non-smooth (relu or max
// argmax switching inside the +-h window) are detected and excluded: at a
// kink the second difference |f+ + f- - 2 f0| / h equals the left/right
// slope gap, the same order as the analytic/numeric mismatch itself, while
// at a smooth point it is only h * f''. A wrong gradient at a smooth point
// therefore still fails. Skipped entries are counted.
inline GradCheckResult grad_check(const std::function<scl::Tensor()>& forward,
                                  const std::vector<scl::Tensor>& leaves, double h = 1e-5,
                                  bool skip_kinks = false) {
  // analytic pass
  std::vector<std::vector<scl::real>> analytic;
  {
    for (const auto& l : leaves) const_cast<scl::Tensor&>(l).zero_grad();
    scl::GradTape tape;
    scl::Tensor loss = forward();
    tape.backward(loss);
    for (const auto& l : leaves) {
      analytic.push_back(l.has_grad() ? l.grad() : std::vector<scl::real>(l.numel(), 0));
    }
  }
  const double f0 = skip_kinks ? static_cast<double>(forward().item()) : 0.0;
  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    scl::Tensor leaf = leaves[li];
    for (std::int64_t i = 0; i < leaf.numel(); ++i) {
      const scl::real orig = leaf.at(i);
      leaf.at(i) = orig + static_cast<scl::real>(h);
      const double lp = forward().item();
      leaf.at(i) = orig - static_cast<scl::real>(h);
      const double lm = forward().item();
      leaf.at(i) = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[li][static_cast<std::size_t>(i)];
      ++res.entries;
      const double err = rel_err(a, numeric);
      if (skip_kinks && err > 0.0) {
        const double slope_gap = std::fabs(lp + lm - 2.0 * f0) / h;
        if (slope_gap >= 0.5 * std::fabs(a - numeric)) {
          ++res.kink_skips;
          continue;
        }
      }
      res.max_rel_err = std::max(res.max_rel_err, err);
      res.max_abs_err = std::max(res.max_abs_err, std::fabs(a - numeric));
    }
  }
  return res;
}

// ---- conversions into the oracle's plain types ----

inline oracles::Mat to_mat(const scl::Tensor& t) {
  oracles::Mat m(static_cast<std::size_t>(t.dim(0)),
                 oracles::Vec(static_cast<std::size_t>(t.dim(1))));
  for (std::int64_t i = 0; i < t.dim(0); ++i) {
    for (std::int64_t j = 0; j < t.dim(1); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.at(i, j);
  }
  return m;
}

// rank-3 tensor as one Mat per leading index
inline std::vector<oracles::Mat> to_mats(const scl::Tensor& t) {
  std::vector<oracles::Mat> out;
  const std::int64_t b = t.dim(0), r = t.dim(1), c = t.dim(2);
  for (std::int64_t i = 0; i < b; ++i) {
    oracles::Mat m(static_cast<std::size_t>(r), oracles::Vec(static_cast<std::size_t>(c)));
    for (std::int64_t p = 0; p < r; ++p) {
      for (std::int64_t q = 0; q < c; ++q) {
        m[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] =
            t.data()[static_cast<std::size_t>((i * r + p) * c + q)];
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline oracles::DenseRef to_dense_ref(const scl::Dense& d) {
  oracles::DenseRef ref;
  ref.w = to_mat(d.w);
  ref.b.assign(d.b.data().begin(), d.b.data().end());
  return ref;
}

inline oracles::MlpRef to_mlp_ref(const scl::Mlp2& m) {
  return oracles::MlpRef{to_dense_ref(m.fc1), to_dense_ref(m.fc2)};
}

}  // namespace testutil
