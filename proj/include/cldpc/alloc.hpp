#pragma once

#include <malloc.h>

namespace cldpc {

// Activation buffers are several MB and get freed every step. Left to its
// defaults glibc hands them back to the kernel and page-faults them in again,
// which costs about a third of a training step. Call once from main.
inline void keep_heap_resident() {
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace cldpc
