#pragma once

#include <cstdint>

#include "scl/common.hpp"

namespace scl::kern {

// C[m x n] (+)= op(A) * op(B). A is m x k (k x m when ta), B is k x n
// (n x k when tb). When accumulate is false, C is overwritten.
// Each output element is one fixed-order dot product, so the serial and
// OpenMP variants produce bit-identical results.
void gemm_serial(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
                 const real* a, const real* b, real* c, bool accumulate);
void gemm_omp(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
              const real* a, const real* b, real* c, bool accumulate);
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
          const real* a, const real* b, real* c, bool accumulate);

struct Conv2dDims {
  std::int64_t batch;
  std::int64_t c_in;
  std::int64_t h;
  std::int64_t w;
  std::int64_t c_out;
  std::int64_t kh;
  std::int64_t kw;
  std::int64_t stride;
  std::int64_t pad;
  std::int64_t h_out;
  std::int64_t w_out;
};

// Cross-correlation with bias: y[b,o,i,j] = bias[o] + sum_{c,p,q} x * w.
void conv2d_forward_serial(const Conv2dDims& d, const real* x, const real* w,
                           const real* bias, real* y);
void conv2d_forward_omp(const Conv2dDims& d, const real* x, const real* w,
                        const real* bias, real* y);
void conv2d_forward(const Conv2dDims& d, const real* x, const real* w,
                    const real* bias, real* y);

// gx += dL/dx given gy. gx must be pre-zeroed (or hold a partial sum).
void conv2d_backward_input_serial(const Conv2dDims& d, const real* gy, const real* w, real* gx);
void conv2d_backward_input_omp(const Conv2dDims& d, const real* gy, const real* w, real* gx);
void conv2d_backward_input(const Conv2dDims& d, const real* gy, const real* w, real* gx);

// gw += dL/dw and gb += dL/dbias given gy.
void conv2d_backward_params_serial(const Conv2dDims& d, const real* gy, const real* x,
                                   real* gw, real* gb);
void conv2d_backward_params_omp(const Conv2dDims& d, const real* gy, const real* x,
                                real* gw, real* gb);
void conv2d_backward_params(const Conv2dDims& d, const real* gy, const real* x,
                            real* gw, real* gb);

namespace detail {
// Single-plane/block workers shared by the serial and OpenMP drivers.
void conv2d_forward_plane(const Conv2dDims& d, const real* x, const real* w, const real* bias,
                          real* y, std::int64_t b, std::int64_t o);
void conv2d_backward_input_plane(const Conv2dDims& d, const real* gy, const real* w, real* gx,
                                 std::int64_t b, std::int64_t c);
void conv2d_backward_params_block(const Conv2dDims& d, const real* gy, const real* x, real* gw,
                                  real* gb, std::int64_t o, std::int64_t c);
}  // namespace detail

}  // namespace scl::kern
