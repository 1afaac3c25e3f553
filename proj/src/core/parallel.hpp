#pragma once

#include <cstddef>
#include <functional>

namespace prunekit {

// Worker cap from PRUNEKIT_THREADS (>= 1), else the hardware concurrency.
std::size_t worker_count();

// Runs fn(0) .. fn(n - 1) on up to worker_count() threads. Jobs must write
// only to their own output slot. The exception of the lowest failing index
// is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace prunekit
