#pragma once

#include <cstddef>
#include <functional>

namespace ewclab {

// EWCLAB_THREADS if set to a positive integer, else the logical CPU count.
std::size_t worker_count();

// Runs fn(i) for every i in [0, n) on up to worker_count() threads. Callers
// write results into per-index slots so the outcome never depends on the
// schedule. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace ewclab
