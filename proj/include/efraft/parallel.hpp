#pragma once

#include <cstddef>
#include <functional>

namespace efraft {

// Worker cap from EFRAFT_THREADS (0 or unset = hardware concurrency),
// read once per process.
int thread_cap();

// Runs fn over [0, n) split into contiguous chunks, one per worker. Callers
// must write only to disjoint output cells so the result is independent of
// the thread count. Small ranges run inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& fn);

}  // namespace efraft
