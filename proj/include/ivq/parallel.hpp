#pragma once

#include <cstddef>
#include <functional>

namespace ivq {

// Worker count for evaluation fan-out: hardware concurrency, capped by the
// IVQ_THREADS environment variable when set to a positive integer.
std::size_t evaluation_threads();

// Runs fn(i) for i in [0, n). Work items must write to disjoint outputs;
// callers reduce results in index order afterwards. The first exception (by
// index) is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ivq
