#pragma once

// Process-level tuning for the allocation pattern of tape evaluation: many
// short-lived buffers of a few hundred KB. glibc would serve those with
// mmap/munmap pairs, which dominates runtime, so keep them on the heap.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace koopman {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

}  // namespace koopman
