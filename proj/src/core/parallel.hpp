#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace st {

// Runs fn(lo, hi, shard) over `shards` contiguous row ranges of [0, n).
// shard boundaries depend only on (n, shards), so a fixed worker count gives
// bit-reproducible results.
inline void parallel_rows(int n, int workers,
                          const std::function<void(int, int, int)>& fn) {
  const int shards = std::max(1, std::min(workers, n));
  if (shards == 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(shards));
  for (int s = 0; s < shards; ++s) {
    const int lo = static_cast<int>(static_cast<long long>(n) * s / shards);
    const int hi = static_cast<int>(static_cast<long long>(n) * (s + 1) / shards);
    threads.emplace_back([&fn, lo, hi, s] { fn(lo, hi, s); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace st
