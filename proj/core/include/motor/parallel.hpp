#pragma once

#include <cstddef>
#include <functional>

namespace motor {

/// Sets the worker count used by parallel_for. 0 restores the default
/// (hardware concurrency).
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(i) for i in [begin, end) over contiguous static chunks.
/// Bodies must write only to per-index state; results are therefore
/// independent of the worker count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& body);

}  // namespace motor
