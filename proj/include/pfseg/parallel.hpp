#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace pfseg {

namespace detail {
inline std::atomic<std::ptrdiff_t>& worker_override() {
  static std::atomic<std::ptrdiff_t> v{-1};
  return v;
}
}  // namespace detail

/// Worker cap from PFSEG_THREADS. 0 means serial conformance mode; unset means
/// one worker per hardware thread.
inline std::size_t worker_count() {
  if (const auto o = detail::worker_override().load(); o >= 0) return static_cast<std::size_t>(o);
  static const std::size_t cached = [] {
    if (const char* env = std::getenv("PFSEG_THREADS")) {
      try {
        return static_cast<std::size_t>(std::stoul(env));
      } catch (...) {
        return std::size_t{0};
      }
    }
    return static_cast<std::size_t>(std::max(1u, std::thread::hardware_concurrency()));
  }();
  return cached;
}

/// Replaces the PFSEG_THREADS setting for this process; a negative value
/// restores it.
inline void set_worker_count(std::ptrdiff_t n) { detail::worker_override().store(n); }

/// Splits [0, n) into contiguous chunks. Callers only write disjoint outputs
/// per index, so results never depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 1) {
  const std::size_t workers = std::min(worker_count(), (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
  if (workers <= 1) {
    if (n) fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

}  // namespace pfseg
