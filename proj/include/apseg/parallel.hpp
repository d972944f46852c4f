#pragma once

// OpenMP shim. Kernels use APSEG_OMP(...) so the build works with or
// without OpenMP; when disabled every pragma expands to nothing.

#if defined(_MSC_VER)
#define APSEG_PRAGMA(X) __pragma(X)
#else
#define APSEG_PRAGMA(X) _Pragma(#X)
#endif

#ifdef _OPENMP
#include <omp.h>
#define APSEG_OMP(ARGS) APSEG_PRAGMA(omp ARGS)
#else
#define APSEG_OMP(ARGS)
inline int omp_get_max_threads() { return 1; }
inline int omp_get_thread_num() { return 0; }
inline double omp_get_wtime() { return 0.0; }
inline void omp_set_num_threads(int) {}
#endif

namespace apseg {

/// Below this many scalar multiply-adds a kernel stays serial; thread
/// start-up costs more than the loop.
inline constexpr long kParallelWorkThreshold = 1L << 15;

}  // namespace apseg
