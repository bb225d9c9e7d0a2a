#pragma once

#include <cstddef>
#include <functional>

namespace somcpc {

/// Number of worker threads the process-wide pool runs with.
/// Defaults to the hardware concurrency; override with SOMCPC_THREADS.
int thread_count();

/// Runs fn(begin, end) over a static partition of [0, n) on the shared pool.
/// Chunks are disjoint, so results are bitwise independent of the thread
/// count as long as fn writes only to its own index range.
/// Nested calls from inside a worker run sequentially.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace somcpc
