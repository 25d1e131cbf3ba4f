#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace carf {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Resolve a thread-count request: 0 -> all hardware threads, otherwise as
// given. threads == 1 is the strict sequential reference mode.
inline int resolve_threads(int requested) {
  return requested <= 0 ? hardware_threads() : requested;
}

// Run fn(chunk_index, begin, end) over [0, n) split into contiguous chunks,
// one per worker. With threads == 1 this is a plain loop on the calling
// thread; callers that need bitwise-reproducible reductions accumulate into
// per-chunk buffers and fold them in chunk order afterwards.
inline void parallel_chunks(int64_t n, int threads,
                            const std::function<void(int, int64_t, int64_t)>& fn) {
  threads = resolve_threads(threads);
  if (n <= 0) return;
  const int chunks = static_cast<int>(std::min<int64_t>(threads, n));
  if (chunks == 1) {
    fn(0, 0, n);
    return;
  }
  const int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(chunks));
  for (int c = 0; c < chunks; ++c) {
    const int64_t b = static_cast<int64_t>(c) * per;
    const int64_t e = std::min<int64_t>(n, b + per);
    if (b >= e) break;
    pool.emplace_back([&fn, c, b, e] { fn(c, b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace carf
