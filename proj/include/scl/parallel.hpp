#pragma once

namespace scl {

// Global kernel-thread ceiling. 1 (the default) selects the serial reference
// kernels; >1 dispatches to the OpenMP kernels with that many threads.
// Both kernel families assign each output element to exactly one thread and
// keep a fixed reduction order, so results are identical either way.
void set_max_threads(int n);
int max_threads();
bool parallel_enabled();

// True when the library was compiled with OpenMP support.
bool openmp_available();

}  // namespace scl
