#pragma once

#include <cstddef>
#include <functional>

namespace pfedgpa {

/// Runs fn(0..n-1) on up to `workers` threads. Each index runs exactly once;
/// if several indices throw, the exception from the lowest index is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Process-wide default used when a caller passes workers == 0.
std::size_t default_workers();
void set_default_workers(std::size_t workers);

}  // namespace pfedgpa
