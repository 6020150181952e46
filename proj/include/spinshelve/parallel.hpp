#pragma once

// Sweep-point parallelism. Every scan fills a preallocated result slot per
// index, so the output is identical whichever order points complete in;
// jobs <= 1 runs the plain serial loop that the tests and the benchmark
// compare against.

#ifdef _OPENMP
#include <omp.h>
#endif

#include <exception>
#include <mutex>
#include <utility>

namespace spinshelve {

inline int default_jobs() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <class Fn>
void for_each_index(int n, int jobs, Fn&& fn) {
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
#ifdef _OPENMP
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (int i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
#else
  for (int i = 0; i < n; ++i) fn(i);
#endif
}

}  // namespace spinshelve
