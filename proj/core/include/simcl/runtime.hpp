#pragma once

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace simcl {

// Training churns through multi-megabyte tensor buffers; glibc's default
// thresholds route those straight to mmap/munmap, and the page faults show
// up as system time. Raise the thresholds once at startup so freed buffers
// stay in the arena and get reused.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 128 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
}

}  // namespace simcl
