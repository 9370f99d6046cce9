#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gffperc {

// Executes body(i) for every i in [0, count), each index exactly once,
// across `threads` workers pulling from a shared atomic counter.  Tasks must
// be independent and write only their own output slot; results indexed by i
// are then identical for every worker count, which is what makes reports
// thread-count invariant.  The first exception thrown by any task is
// rethrown on the calling thread once all workers have finished.
template <typename Body>
void run_indexed_tasks(std::size_t count, int threads, Body&& body) {
  if (count == 0) return;
  std::size_t workers = threads < 1 ? 1 : static_cast<std::size_t>(threads);
  if (workers > count) workers = count;
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::mutex err_mtx;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mtx);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace gffperc
