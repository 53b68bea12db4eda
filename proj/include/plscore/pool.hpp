#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace plscore {

// Fan-out helper for embarrassingly parallel scoring work. Each index is
// processed exactly once; callers write results by index so the output
// order never depends on scheduling.
class Pool {
 public:
  explicit Pool(int workers)
      : workers_(workers < 1 ? 1 : workers) {}

  static Pool hardware() {
    unsigned n = std::thread::hardware_concurrency();
    return Pool(n == 0 ? 1 : static_cast<int>(n));
  }

  int workers() const { return workers_; }

  void parallel_for(std::size_t n,
                    const std::function<void(std::size_t)>& fn) const {
    if (n == 0) return;
    if (workers_ == 1 || n == 1) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto work = [&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> threads;
    int count = static_cast<int>(std::min<std::size_t>(
        static_cast<std::size_t>(workers_), n));
    threads.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) threads.emplace_back(work);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
  }

 private:
  int workers_;
};

}  // namespace plscore
