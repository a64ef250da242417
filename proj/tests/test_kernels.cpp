#include <vector>

#include "doctest.h"
#include "scl/kernels.hpp"
#include "scl/parallel.hpp"
#include "scl/rng.hpp"

using namespace scl;

namespace {

std::vector<real> random_vec(std::size_t n, RngStream& rng) {
  std::vector<real> v(n);
  for (auto& x : v) x = static_cast<real>(rng.uniform(-1, 1));
  return v;
}

}  // namespace

TEST_CASE("gemm transpose variants against naive reference") {
  RngStream rng(21, "gemm");
  const std::int64_t m = 5, n = 4, k = 3;
  const auto A = random_vec(static_cast<std::size_t>(m * k), rng);
  const auto B = random_vec(static_cast<std::size_t>(k * n), rng);
  std::vector<real> C(static_cast<std::size_t>(m * n), 0);
  kern::gemm_serial(false, false, m, n, k, A.data(), B.data(), C.data(), false);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::int64_t t = 0; t < k; ++t) acc += A[static_cast<std::size_t>(i * k + t)] * B[static_cast<std::size_t>(t * n + j)];
      CHECK(C[static_cast<std::size_t>(i * n + j)] == doctest::Approx(acc));
    }
  }

  // ta: A stored k x m
  const auto At = random_vec(static_cast<std::size_t>(k * m), rng);
  std::vector<real> C2(static_cast<std::size_t>(m * n), 0);
  kern::gemm_serial(true, false, m, n, k, At.data(), B.data(), C2.data(), false);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::int64_t t = 0; t < k; ++t) acc += At[static_cast<std::size_t>(t * m + i)] * B[static_cast<std::size_t>(t * n + j)];
      CHECK(C2[static_cast<std::size_t>(i * n + j)] == doctest::Approx(acc));
    }
  }

  // tb: B stored n x k
  const auto Bt = random_vec(static_cast<std::size_t>(n * k), rng);
  std::vector<real> C3(static_cast<std::size_t>(m * n), 0);
  kern::gemm_serial(false, true, m, n, k, A.data(), Bt.data(), C3.data(), false);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::int64_t t = 0; t < k; ++t) acc += A[static_cast<std::size_t>(i * k + t)] * Bt[static_cast<std::size_t>(j * k + t)];
      CHECK(C3[static_cast<std::size_t>(i * n + j)] == doctest::Approx(acc));
    }
  }
}

TEST_CASE("OpenMP kernels match the serial reference bit-for-bit") {
  if (!openmp_available()) return;  // serial-only build
  RngStream rng(22, "omp_eq");

  SUBCASE("gemm") {
    const std::int64_t m = 33, n = 17, k = 29;
    const auto A = random_vec(static_cast<std::size_t>(m * k), rng);
    const auto B = random_vec(static_cast<std::size_t>(k * n), rng);
    std::vector<real> c_ser(static_cast<std::size_t>(m * n), 0), c_omp = c_ser;
    kern::gemm_serial(false, false, m, n, k, A.data(), B.data(), c_ser.data(), false);
    set_max_threads(4);
    kern::gemm_omp(false, false, m, n, k, A.data(), B.data(), c_omp.data(), false);
    set_max_threads(1);
    CHECK(c_ser == c_omp);
  }

  SUBCASE("conv2d forward and backward") {
    kern::Conv2dDims d;
    d.batch = 3;
    d.c_in = 4;
    d.h = 9;
    d.w = 7;
    d.c_out = 5;
    d.kh = 3;
    d.kw = 3;
    d.stride = 2;
    d.pad = 1;
    d.h_out = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
    d.w_out = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
    const auto x = random_vec(static_cast<std::size_t>(d.batch * d.c_in * d.h * d.w), rng);
    const auto w = random_vec(static_cast<std::size_t>(d.c_out * d.c_in * d.kh * d.kw), rng);
    const auto b = random_vec(static_cast<std::size_t>(d.c_out), rng);
    const std::size_t ysz = static_cast<std::size_t>(d.batch * d.c_out * d.h_out * d.w_out);
    std::vector<real> y_ser(ysz, 0), y_omp(ysz, 0);
    kern::conv2d_forward_serial(d, x.data(), w.data(), b.data(), y_ser.data());
    set_max_threads(4);
    kern::conv2d_forward_omp(d, x.data(), w.data(), b.data(), y_omp.data());
    CHECK(y_ser == y_omp);

    const auto gy = random_vec(ysz, rng);
    std::vector<real> gx_ser(x.size(), 0), gx_omp(x.size(), 0);
    std::vector<real> gw_ser(w.size(), 0), gw_omp(w.size(), 0);
    std::vector<real> gb_ser(b.size(), 0), gb_omp(b.size(), 0);
    set_max_threads(1);
    kern::conv2d_backward_input_serial(d, gy.data(), w.data(), gx_ser.data());
    kern::conv2d_backward_params_serial(d, gy.data(), x.data(), gw_ser.data(), gb_ser.data());
    set_max_threads(4);
    kern::conv2d_backward_input_omp(d, gy.data(), w.data(), gx_omp.data());
    kern::conv2d_backward_params_omp(d, gy.data(), x.data(), gw_omp.data(), gb_omp.data());
    set_max_threads(1);
    CHECK(gx_ser == gx_omp);
    CHECK(gw_ser == gw_omp);
    CHECK(gb_ser == gb_omp);
  }
}
