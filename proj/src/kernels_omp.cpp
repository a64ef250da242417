#include "scl/kernels.hpp"
#include "scl/parallel.hpp"

namespace scl::kern {

// The OpenMP drivers hand whole output planes/blocks to threads; each plane
// is computed by the same single-threaded worker the serial driver uses, so
// results are bit-identical at any thread count.

void gemm_omp(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
              const real* a, const real* b, real* c, bool accumulate) {
#pragma omp parallel for schedule(static)
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

void conv2d_forward_omp(const Conv2dDims& d, const real* x, const real* w,
                        const real* bias, real* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t o = 0; o < d.c_out; ++o) {
      detail::conv2d_forward_plane(d, x, w, bias, y, b, o);
    }
  }
}

void conv2d_backward_input_omp(const Conv2dDims& d, const real* gy, const real* w, real* gx) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t c = 0; c < d.c_in; ++c) {
      detail::conv2d_backward_input_plane(d, gy, w, gx, b, c);
    }
  }
}

void conv2d_backward_params_omp(const Conv2dDims& d, const real* gy, const real* x,
                                real* gw, real* gb) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t o = 0; o < d.c_out; ++o) {
    for (std::int64_t c = 0; c < d.c_in; ++c) {
      detail::conv2d_backward_params_block(d, gy, x, gw, gb, o, c);
    }
  }
}

void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
          const real* a, const real* b, real* c, bool accumulate) {
  if (parallel_enabled()) {
    gemm_omp(ta, tb, m, n, k, a, b, c, accumulate);
  } else {
    gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
  }
}

void conv2d_forward(const Conv2dDims& d, const real* x, const real* w,
                    const real* bias, real* y) {
  if (parallel_enabled()) {
    conv2d_forward_omp(d, x, w, bias, y);
  } else {
    conv2d_forward_serial(d, x, w, bias, y);
  }
}

void conv2d_backward_input(const Conv2dDims& d, const real* gy, const real* w, real* gx) {
  if (parallel_enabled()) {
    conv2d_backward_input_omp(d, gy, w, gx);
  } else {
    conv2d_backward_input_serial(d, gy, w, gx);
  }
}

void conv2d_backward_params(const Conv2dDims& d, const real* gy, const real* x,
                            real* gw, real* gb) {
  if (parallel_enabled()) {
    conv2d_backward_params_omp(d, gy, x, gw, gb);
  } else {
    conv2d_backward_params_serial(d, gy, x, gw, gb);
  }
}

}  // namespace scl::kern
