#pragma once

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nsa {

/// Worker count for per-element loops. NA_THREADS caps it when set.
inline int thread_count() {
  int n = 1;
#ifdef _OPENMP
  n = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("NA_THREADS")) {
    try {
      int cap = std::stoi(env);
      if (cap >= 1 && cap < n) n = cap;
    } catch (...) {
    }
  }
  return n;
}

/// Runs fn(i) for i in [0, n). Iterations must not share mutable state.
template <typename Fn>
void parallel_for(long n, Fn&& fn) {
#ifdef _OPENMP
  const int threads = thread_count();
  if (threads > 1 && n > 256) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for (long i = 0; i < n; ++i) fn(i);
}

}  // namespace nsa
