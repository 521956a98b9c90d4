#include "motor/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace motor {
namespace {

std::atomic<std::size_t> g_threads{0};

}  // namespace

void set_num_threads(std::size_t n) { g_threads.store(n); }

std::size_t num_threads() {
  const std::size_t n = g_threads.load();
  if (n != 0) return n;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& body) {
  if (end <= begin) return;
  const std::size_t count = end - begin;
  const std::size_t workers = std::min(num_threads(), count);
  if (workers <= 1 || count < 64) {
    for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (std::size_t i = begin; i < std::min(end, begin + chunk); ++i) body(i);
}

}  // namespace motor
