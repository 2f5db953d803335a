#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace samsa {

// Keeps freed buffers in the heap instead of returning them to the kernel.
// Every op allocates its output, so without this a training step spends much
// of its time in page faults. No-op outside glibc.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace samsa
