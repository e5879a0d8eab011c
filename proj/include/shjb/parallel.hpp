#pragma once

#include <cstddef>
#include <functional>

namespace shjb {

// Worker cap shared by all parallel loops; 1 means run inline.
void set_thread_count(int n);
int thread_count();

// Calls body(begin, end) over contiguous chunks of [0, n). Every index is owned
// by exactly one chunk, so writes to per-index slots stay deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace shjb
