#pragma once

#include <cstddef>
#include <functional>

namespace rislab {

/**
 * Worker count: min(hardware concurrency, RISLAB_THREADS if set).  A value
 * of 0 or an unparsable RISLAB_THREADS falls back to 1.
 */
std::size_t effective_thread_count();

/**
 * Runs fn(i) for i in [0, n) on up to effective_thread_count() workers.
 * Work is partitioned by index block, and callers store results into
 * index-addressed slots, so outputs are identical for any thread count.
 * Exceptions from workers are rethrown on the calling thread.
 */
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace rislab
