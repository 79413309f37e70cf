#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cqiv {

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> value{0};
  return value;
}

// Nested parallel_for calls run serially on the calling worker.
inline bool& inside_parallel_region() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

/// Worker count used by parallel_for; 0 means hardware concurrency.
inline void set_thread_count(unsigned n) { detail::thread_setting() = n; }

inline unsigned thread_count() {
  const unsigned n = detail::thread_setting();
  if (n > 0) return n;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls body(i) for i in [0, count). Items are claimed dynamically, so the
/// body must write only to slots owned by its index. The exception of the
/// lowest failing index is rethrown after all workers finish.
template <class Body>
void parallel_for(std::size_t count, Body&& body, unsigned threads = 0) {
  if (threads == 0) threads = thread_count();
  if (detail::inside_parallel_region()) threads = 1;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex guard;
  std::exception_ptr error;
  std::size_t error_index = count;
  auto worker = [&] {
    const bool outer = detail::inside_parallel_region();
    detail::inside_parallel_region() = true;
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(guard);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
    detail::inside_parallel_region() = outer;
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace cqiv
