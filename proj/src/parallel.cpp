#include "scl/parallel.hpp"

#include "scl/common.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace scl {

namespace {
int g_max_threads = 1;
}

void set_max_threads(int n) {
  if (n < 1) throw ConfigError("max threads must be >= 1, got " + std::to_string(n));
  g_max_threads = n;
#if defined(_OPENMP)
  omp_set_num_threads(n);
#endif
}

int max_threads() { return g_max_threads; }

bool parallel_enabled() { return openmp_available() && g_max_threads > 1; }

bool openmp_available() {
#if defined(_OPENMP)
  return true;
#else
  return false;
#endif
}

}  // namespace scl
