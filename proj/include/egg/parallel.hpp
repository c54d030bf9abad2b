#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace egg {

// Runs fn(i) for i in [begin, end) on up to `workers` threads. Callers write
// results into pre-sized slots indexed by i, so output order never depends on
// scheduling. The exception from the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t workers, Fn&& fn) {
  if (begin >= end) return;
  workers = std::clamp<std::size_t>(workers, 1, end - begin);
  if (workers == 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{begin};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::size_t error_index = end;
  std::exception_ptr error;
  auto work = [&] {
    for (;;) {
      if (failed.load()) return;
      std::size_t i = next.fetch_add(1);
      if (i >= end) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
        failed = true;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace egg
