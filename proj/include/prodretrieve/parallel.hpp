#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace prodretrieve {

/// Thread count used when the caller passes 0: $PRODRETRIEVE_THREADS if set,
/// otherwise the hardware concurrency.
inline unsigned default_threads() {
  if (const char* env = std::getenv("PRODRETRIEVE_THREADS"); env && *env) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline unsigned resolve_threads(unsigned requested) {
  return requested == 0 ? default_threads() : requested;
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index belongs to
/// exactly one chunk, so callers that write only their own rows produce output
/// independent of the thread count. The first exception thrown by any worker
/// is rethrown on the calling thread.
template <typename Fn>
void parallel_for_chunks(std::size_t n, unsigned threads, std::size_t grain, Fn&& fn) {
  threads = resolve_threads(threads);
  grain = std::max<std::size_t>(grain, 1);
  const std::size_t n_chunks = (n + grain - 1) / grain;
  if (threads <= 1 || n_chunks <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) fn(c * grain, std::min(n, (c + 1) * grain));
    return;
  }
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n_chunks));
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        // Static round-robin assignment of chunks to workers.
        for (std::size_t c = w; c < n_chunks; c += workers) {
          fn(c * grain, std::min(n, (c + 1) * grain));
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  parallel_for_chunks(n, threads, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace prodretrieve
