#include <algorithm>

#include "scl/kernels.hpp"

namespace scl::kern {

void gemm_serial(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
                 const real* a, const real* b, real* c, bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::int64_t t = 0; t < k; ++t) {
        const real av = ta ? a[t * m + i] : a[i * k + t];
        const real bv = tb ? b[j * k + t] : b[t * n + j];
        acc += av * bv;
      }
      if (accumulate) {
        c[i * n + j] += acc;
      } else {
        c[i * n + j] = acc;
      }
    }
  }
}

namespace detail {

// Output rows i with i*stride + p - pad inside [0, h).
inline void out_range(std::int64_t h, std::int64_t out, std::int64_t stride, std::int64_t pad,
                      std::int64_t p, std::int64_t& lo, std::int64_t& hi) {
  // smallest i with i*stride >= pad - p
  std::int64_t lo_num = pad - p;
  lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  // largest i with i*stride <= h - 1 + pad - p
  std::int64_t hi_num = h - 1 + pad - p;
  hi = hi_num < 0 ? 0 : std::min(out, hi_num / stride + 1);
  if (hi < lo) hi = lo;
}

// y[b,o] plane of one conv output; shifted-row accumulation, branch-free
// inner loops. Shared by the serial and OpenMP kernels so results are
// bit-identical at any thread count.
void conv2d_forward_plane(const Conv2dDims& d, const real* x, const real* w, const real* bias,
                          real* y, std::int64_t b, std::int64_t o) {
  real* yp = y + ((b * d.c_out + o) * d.h_out) * d.w_out;
  const real bv = bias ? bias[o] : real(0);
  for (std::int64_t i = 0; i < d.h_out * d.w_out; ++i) yp[i] = bv;
  for (std::int64_t c = 0; c < d.c_in; ++c) {
    const real* xp = x + ((b * d.c_in + c) * d.h) * d.w;
    const real* wp = w + ((o * d.c_in + c) * d.kh) * d.kw;
    for (std::int64_t p = 0; p < d.kh; ++p) {
      std::int64_t i_lo, i_hi;
      out_range(d.h, d.h_out, d.stride, d.pad, p, i_lo, i_hi);
      for (std::int64_t q = 0; q < d.kw; ++q) {
        const real wv = wp[p * d.kw + q];
        if (wv == real(0)) continue;
        std::int64_t j_lo, j_hi;
        out_range(d.w, d.w_out, d.stride, d.pad, q, j_lo, j_hi);
        for (std::int64_t i = i_lo; i < i_hi; ++i) {
          const real* xrow = xp + (i * d.stride + p - d.pad) * d.w + q - d.pad;
          real* yrow = yp + i * d.w_out;
          for (std::int64_t j = j_lo; j < j_hi; ++j) {
            yrow[j] += wv * xrow[j * d.stride];
          }
        }
      }
    }
  }
}

// gx[b,c] plane from gy and the kernel.
void conv2d_backward_input_plane(const Conv2dDims& d, const real* gy, const real* w, real* gx,
                                 std::int64_t b, std::int64_t c) {
  real* gxp = gx + ((b * d.c_in + c) * d.h) * d.w;
  for (std::int64_t o = 0; o < d.c_out; ++o) {
    const real* gyp = gy + ((b * d.c_out + o) * d.h_out) * d.w_out;
    const real* wp = w + ((o * d.c_in + c) * d.kh) * d.kw;
    for (std::int64_t p = 0; p < d.kh; ++p) {
      std::int64_t i_lo, i_hi;
      out_range(d.h, d.h_out, d.stride, d.pad, p, i_lo, i_hi);
      for (std::int64_t q = 0; q < d.kw; ++q) {
        const real wv = wp[p * d.kw + q];
        if (wv == real(0)) continue;
        std::int64_t j_lo, j_hi;
        out_range(d.w, d.w_out, d.stride, d.pad, q, j_lo, j_hi);
        for (std::int64_t i = i_lo; i < i_hi; ++i) {
          real* gxrow = gxp + (i * d.stride + p - d.pad) * d.w + q - d.pad;
          const real* gyrow = gyp + i * d.w_out;
          for (std::int64_t j = j_lo; j < j_hi; ++j) {
            gxrow[j * d.stride] += wv * gyrow[j];
          }
        }
      }
    }
  }
}

// gw[o,c] kernel block (and gb[o] when c == 0).
void conv2d_backward_params_block(const Conv2dDims& d, const real* gy, const real* x, real* gw,
                                  real* gb, std::int64_t o, std::int64_t c) {
  real* gwp = gw + ((o * d.c_in + c) * d.kh) * d.kw;
  for (std::int64_t b = 0; b < d.batch; ++b) {
    const real* gyp = gy + ((b * d.c_out + o) * d.h_out) * d.w_out;
    const real* xp = x + ((b * d.c_in + c) * d.h) * d.w;
    for (std::int64_t p = 0; p < d.kh; ++p) {
      std::int64_t i_lo, i_hi;
      out_range(d.h, d.h_out, d.stride, d.pad, p, i_lo, i_hi);
      for (std::int64_t q = 0; q < d.kw; ++q) {
        std::int64_t j_lo, j_hi;
        out_range(d.w, d.w_out, d.stride, d.pad, q, j_lo, j_hi);
        real acc = 0;
        for (std::int64_t i = i_lo; i < i_hi; ++i) {
          const real* xrow = xp + (i * d.stride + p - d.pad) * d.w + q - d.pad;
          const real* gyrow = gyp + i * d.w_out;
          for (std::int64_t j = j_lo; j < j_hi; ++j) {
            acc += gyrow[j] * xrow[j * d.stride];
          }
        }
        gwp[p * d.kw + q] += acc;
      }
    }
    if (gb && c == 0) {
      real acc = 0;
      for (std::int64_t i = 0; i < d.h_out * d.w_out; ++i) acc += gyp[i];
      gb[o] += acc;
    }
  }
}

}  // namespace detail

void conv2d_forward_serial(const Conv2dDims& d, const real* x, const real* w,
                           const real* bias, real* y) {
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t o = 0; o < d.c_out; ++o) {
      detail::conv2d_forward_plane(d, x, w, bias, y, b, o);
    }
  }
}

void conv2d_backward_input_serial(const Conv2dDims& d, const real* gy, const real* w, real* gx) {
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t c = 0; c < d.c_in; ++c) {
      detail::conv2d_backward_input_plane(d, gy, w, gx, b, c);
    }
  }
}

void conv2d_backward_params_serial(const Conv2dDims& d, const real* gy, const real* x,
                                   real* gw, real* gb) {
  for (std::int64_t o = 0; o < d.c_out; ++o) {
    for (std::int64_t c = 0; c < d.c_in; ++c) {
      detail::conv2d_backward_params_block(d, gy, x, gw, gb, o, c);
    }
  }
}

}  // namespace scl::kern
