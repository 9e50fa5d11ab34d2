#include "safeguard/parallel.h"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace safeguard {

int ThreadBudget() {
  if (const char* env = std::getenv("SAFEGUARD_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
      // ignore malformed values
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void ParallelFor(int begin, int end, const std::function<void(int)>& fn) {
  const int count = end - begin;
  if (count <= 0) return;
  const int workers = std::min(ThreadBudget(), count);
  if (workers == 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<int> next{begin};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    for (int i = next++; i < end; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

int FirstHit(int count, const std::function<bool(int)>& probe) {
  const int chunk = ThreadBudget();
  for (int start = 0; start < count; start += chunk) {
    const int stop = std::min(count, start + chunk);
    std::vector<char> hit(stop - start, 0);
    ParallelFor(start, stop, [&](int i) { hit[i - start] = probe(i) ? 1 : 0; });
    for (int i = start; i < stop; ++i) {
      if (hit[i - start]) return i;
    }
  }
  return -1;
}

}  // namespace safeguard
