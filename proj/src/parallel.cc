#include "epigeo/parallel.h"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace epigeo {

int ResolveThreadCount(int requested) {
  int cap = 0;
  if (const char* env = std::getenv("EPIGEO_THREADS")) {
    try {
      cap = std::stoi(env);
    } catch (...) {
      cap = 0;
    }
  }
  int threads = requested > 0 ? requested : cap;
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (cap > 0) threads = std::min(threads, cap);
  return std::max(threads, 1);
}

void ParallelFor(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace epigeo
