// Minimal fork-join helper for independent evaluations.
#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace adiabat {

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> value{0};
  return value;
}
}  // namespace detail

/// Worker count used when a caller passes threads = 0. Initialized from the
/// ADIABAT_THREADS environment variable, else hardware concurrency.
inline int default_threads() {
  int v = detail::thread_setting().load();
  if (v > 0) return v;
  if (const char* env = std::getenv("ADIABAT_THREADS")) {
    try {
      v = std::stoi(env);
    } catch (...) {
      v = 0;
    }
  }
  if (v <= 0) v = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return v;
}

inline void set_default_threads(int threads) { detail::thread_setting().store(threads); }

/// Calls fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception thrown by any call is rethrown after all workers join.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 0) threads = default_threads();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace adiabat
