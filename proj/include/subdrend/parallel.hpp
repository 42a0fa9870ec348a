#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace subdrend {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end) over fixed-size chunks of [0, count). The chunking is a
// function of count and chunk_size only, never of the thread count, so any
// chunk-local results combined in chunk order are bit-identical for every
// value of `threads`. fn must only write to disjoint, chunk-owned state.
inline void parallel_chunks(std::size_t count, std::size_t chunk_size, int threads,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  const std::size_t n_chunks = (count + chunk_size - 1) / chunk_size;
  const int n_threads = std::min<std::size_t>(resolve_threads(threads), n_chunks);
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      const std::size_t begin = c * chunk_size;
      fn(begin, std::min(begin + chunk_size, count));
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) {
        const std::size_t begin = c * chunk_size;
        fn(begin, std::min(begin + chunk_size, count));
      }
    });
  }
  for (auto& th : pool) th.join();
}

// Convenience: one item per index, default chunking.
inline void parallel_for(std::size_t count, int threads,
                         const std::function<void(std::size_t)>& fn,
                         std::size_t chunk_size = 16) {
  parallel_chunks(count, chunk_size, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace subdrend
