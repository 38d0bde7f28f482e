#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mulde {

inline std::size_t default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs fn(begin, end, chunk) over `chunks` contiguous ranges of [0, n) on up to
// `threads` workers. Chunk boundaries depend only on n and `chunks`, so callers
// that reduce per-chunk results in chunk order get thread-count independent
// results. The first exception thrown by any chunk is rethrown.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t chunks, std::size_t threads, Fn&& fn) {
  chunks = std::max<std::size_t>(1, std::min(chunks, std::max<std::size_t>(n, 1)));
  auto bounds = [&](std::size_t c) { return n * c / chunks; };
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(bounds(c), bounds(c + 1), c);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += threads) fn(bounds(c), bounds(c + 1), c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mulde
