#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace koopman {

/// Runs body(i) for i in [0, n) on up to `threads` threads (static schedule).
///
/// The first exception thrown by any iteration is rethrown after the loop.
template <class Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  std::exception_ptr error;
  std::mutex mu;
  auto guarded = [&](std::size_t i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard lock(mu);
      if (!error) error = std::current_exception();
    }
  };
#ifdef _OPENMP
  if (threads > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      guarded(static_cast<std::size_t>(i));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  }
#else
  (void)threads;
  for (std::size_t i = 0; i < n; ++i) guarded(i);
#endif
  if (error) std::rethrow_exception(error);
}

}  // namespace koopman
