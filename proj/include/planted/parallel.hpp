#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace planted {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs `body(block_index, begin, end)` over fixed-size blocks of [0, count).
// Block boundaries are independent of the worker count, so per-block partial
// results combined in block order are deterministic for any thread count.
template <typename Body>
void for_each_block(std::int64_t count, int threads, Body&& body,
                    std::int64_t block_size = 1 << 16) {
  if (count <= 0) return;
  const std::int64_t nblocks = (count + block_size - 1) / block_size;
  threads = std::min<std::int64_t>(resolve_threads(threads), nblocks);
  if (threads <= 1) {
    for (std::int64_t b = 0; b < nblocks; ++b)
      body(b, b * block_size, std::min(count, (b + 1) * block_size));
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      for (std::int64_t b = w; b < nblocks; b += threads)
        body(b, b * block_size, std::min(count, (b + 1) * block_size));
    });
  }
  for (auto& t : pool) t.join();
}

// Convenience: per-block accumulators of type Acc, reduced in block order.
// Acc needs `void merge(const Acc&)`.
template <typename Acc, typename BlockFn>
Acc reduce_blocks(std::int64_t count, int threads, BlockFn&& fn,
                  std::int64_t block_size = 1 << 16) {
  if (count <= 0) return Acc{};
  const std::int64_t nblocks = (count + block_size - 1) / block_size;
  std::vector<Acc> partial(static_cast<std::size_t>(nblocks));
  for_each_block(
      count, threads,
      [&](std::int64_t b, std::int64_t lo, std::int64_t hi) {
        fn(partial[static_cast<std::size_t>(b)], b, lo, hi);
      },
      block_size);
  Acc total{};
  for (const auto& p : partial) total.merge(p);
  return total;
}

}  // namespace planted
