#pragma once

namespace ewclab {

// Keeps freed blocks in the heap instead of returning them to the OS. The
// training loop allocates and frees the same large buffers every step, and
// without this most of its time goes to page faults. No-op off glibc.
void configure_allocator();

} // namespace ewclab
