#pragma once

// Replica fan-out. Workers pull replica indices from a shared counter and
// write into index-addressed slots, so the reduction order (and therefore
// every reported number) does not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fragsim/error.hpp"

namespace fragsim {

/// Calls fn(i) for i in [0, n) on `threads` workers and returns the results
/// in index order. The first exception (lowest replica index) is rethrown
/// with the replica index attached.
template <class Fn>
auto parallel_replicas(std::size_t n, unsigned threads, Fn&& fn)
    -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> results(n);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = n;
  std::exception_ptr error;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        results[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
        next.store(n, std::memory_order_relaxed);
      }
    }
  };

  const unsigned count =
      static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n, 1)));
  if (count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(count);
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const Error& e) {
      throw Error(e.code(), "replica " + std::to_string(error_index) + ": " + e.what());
    }
  }
  return results;
}

}  // namespace fragsim
