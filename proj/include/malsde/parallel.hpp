#pragma once

// Deterministic parallel map/reduce over path indices. Work is split into
// fixed-size chunks that do not depend on the worker count; results are
// stored per chunk and combined sequentially in chunk order, so the output is
// bit-identical for any number of workers.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace malsde {

constexpr std::size_t kDefaultChunk = 512;

inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Calls body(begin, end, chunk_index) for every chunk of [0, n).
template <class Body>
void parallel_chunks(std::size_t n, int workers, std::size_t chunk, Body&& body) {
  if (n == 0) return;
  const std::size_t chunks = (n + chunk - 1) / chunk;
  const int w = std::max(1, std::min<int>(resolve_workers(workers), static_cast<int>(chunks)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        body(c * chunk, std::min(n, (c + 1) * chunk), c);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(chunks);
        return;
      }
    }
  };
  if (w == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (int i = 0; i < w; ++i) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

/// out[i] = fn(i) for i in [0, n).
template <class R, class Fn>
std::vector<R> parallel_map(std::size_t n, int workers, Fn&& fn) {
  std::vector<R> out(n);
  parallel_chunks(n, workers, kDefaultChunk, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) out[i] = fn(i);
  });
  return out;
}

/// Per-chunk accumulation followed by an ordered merge.
template <class Acc, class Make, class Add, class Merge>
Acc parallel_reduce(std::size_t n, int workers, Make&& make, Add&& add, Merge&& merge) {
  const std::size_t chunks = (n + kDefaultChunk - 1) / kDefaultChunk;
  std::vector<Acc> partial;
  partial.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) partial.push_back(make());
  parallel_chunks(n, workers, kDefaultChunk, [&](std::size_t b, std::size_t e, std::size_t c) {
    for (std::size_t i = b; i < e; ++i) add(partial[c], i);
  });
  Acc total = make();
  for (auto& p : partial) merge(total, p);
  return total;
}

}  // namespace malsde
