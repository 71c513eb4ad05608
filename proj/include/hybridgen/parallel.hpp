#pragma once

#include <cstddef>
#include <functional>

namespace hg {

// Worker cap shared by every parallel loop. 0 means hardware concurrency.
void set_max_threads(std::size_t n);
std::size_t max_threads();

// Runs body(i) for i in [0, n) on up to max_threads() workers. Each index is
// visited exactly once; the first exception thrown is rethrown after all
// workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace hg
