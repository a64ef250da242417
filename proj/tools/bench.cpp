// Serial-vs-OpenMP kernel benchmark. Prints per-kernel timings, speedup, and
// the max absolute difference between the two results (expected 0: the
// OpenMP kernels assign whole output planes to threads and keep reduction
// order fixed).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "scl/kernels.hpp"
#include "scl/parallel.hpp"
#include "scl/rng.hpp"

using namespace scl;

namespace {

using Clock = std::chrono::steady_clock;

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
  }
  return best;
}

std::vector<real> random_vec(std::size_t n, RngStream& rng) {
  std::vector<real> v(n);
  for (auto& x : v) x = static_cast<real>(rng.uniform(-1, 1));
  return v;
}

double max_abs_diff(const std::vector<real>& a, const std::vector<real>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

void report(const char* name, double serial, double omp, double diff) {
  std::printf("%-28s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   max|diff| %g\n", name,
              serial * 1e3, omp * 1e3, serial / omp, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : 4;
  if (!openmp_available()) {
    std::printf("built without OpenMP; only serial kernels available\n");
    return 0;
  }
  std::printf("threads: %d\n", threads);
  RngStream rng(1234, "bench");

  {
    const std::int64_t m = 384, n = 384, k = 384;
    const auto a = random_vec(static_cast<std::size_t>(m * k), rng);
    const auto b = random_vec(static_cast<std::size_t>(k * n), rng);
    std::vector<real> c1(static_cast<std::size_t>(m * n)), c2 = c1;
    set_max_threads(1);
    const double ts = time_best_of(3, [&] {
      kern::gemm_serial(false, false, m, n, k, a.data(), b.data(), c1.data(), false);
    });
    set_max_threads(threads);
    const double tp = time_best_of(3, [&] {
      kern::gemm_omp(false, false, m, n, k, a.data(), b.data(), c2.data(), false);
    });
    report("gemm 384x384x384", ts, tp, max_abs_diff(c1, c2));
  }

  kern::Conv2dDims d;
  d.batch = 32;
  d.c_in = 16;
  d.h = 32;
  d.w = 32;
  d.c_out = 32;
  d.kh = 3;
  d.kw = 3;
  d.stride = 1;
  d.pad = 1;
  d.h_out = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.w_out = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
  const auto x = random_vec(static_cast<std::size_t>(d.batch * d.c_in * d.h * d.w), rng);
  const auto w = random_vec(static_cast<std::size_t>(d.c_out * d.c_in * d.kh * d.kw), rng);
  const auto bias = random_vec(static_cast<std::size_t>(d.c_out), rng);
  const std::size_t ysz = static_cast<std::size_t>(d.batch * d.c_out * d.h_out * d.w_out);

  {
    std::vector<real> y1(ysz), y2(ysz);
    set_max_threads(1);
    const double ts = time_best_of(3, [&] {
      kern::conv2d_forward_serial(d, x.data(), w.data(), bias.data(), y1.data());
    });
    set_max_threads(threads);
    const double tp = time_best_of(3, [&] {
      kern::conv2d_forward_omp(d, x.data(), w.data(), bias.data(), y2.data());
    });
    report("conv2d fwd 32x16x32x32", ts, tp, max_abs_diff(y1, y2));
  }

  const auto gy = random_vec(ysz, rng);
  {
    std::vector<real> g1(x.size(), 0), g2(x.size(), 0);
    set_max_threads(1);
    const double ts = time_best_of(3, [&] {
      std::fill(g1.begin(), g1.end(), real(0));
      kern::conv2d_backward_input_serial(d, gy.data(), w.data(), g1.data());
    });
    set_max_threads(threads);
    const double tp = time_best_of(3, [&] {
      std::fill(g2.begin(), g2.end(), real(0));
      kern::conv2d_backward_input_omp(d, gy.data(), w.data(), g2.data());
    });
    report("conv2d bwd-input", ts, tp, max_abs_diff(g1, g2));
  }

  {
    std::vector<real> gw1(w.size(), 0), gw2(w.size(), 0), gb1(bias.size(), 0), gb2(bias.size(), 0);
    set_max_threads(1);
    const double ts = time_best_of(3, [&] {
      std::fill(gw1.begin(), gw1.end(), real(0));
      std::fill(gb1.begin(), gb1.end(), real(0));
      kern::conv2d_backward_params_serial(d, gy.data(), x.data(), gw1.data(), gb1.data());
    });
    set_max_threads(threads);
    const double tp = time_best_of(3, [&] {
      std::fill(gw2.begin(), gw2.end(), real(0));
      std::fill(gb2.begin(), gb2.end(), real(0));
      kern::conv2d_backward_params_omp(d, gy.data(), x.data(), gw2.data(), gb2.data());
    });
    report("conv2d bwd-params", ts, tp,
           std::max(max_abs_diff(gw1, gw2), max_abs_diff(gb1, gb2)));
  }

  set_max_threads(1);
  return 0;
}
