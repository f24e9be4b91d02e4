#pragma once

namespace daobs {

/// Keeps large freed blocks inside the heap instead of returning them to the
/// OS. Training allocates and frees feature maps of a few hundred KB per
/// layer per sample; without this every one of them is a fresh mmap and a
/// burst of page faults. No-op outside glibc.
void keep_heap_resident();

}  // namespace daobs
