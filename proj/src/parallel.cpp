#include "lapsim/parallel.hpp"

#include <algorithm>

namespace lapsim {

ThreadPool::ThreadPool(int threads) {
  const int n = std::max(1, threads);
  workers_.reserve(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n - 1; ++i) {
    workers_.emplace_back([this, i] { worker_loop(i + 1); });  // rank 0 = caller
  }
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stop_ = true;
  }
  cv_start_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop(int rank) {
  uint64_t seen = 0;
  for (;;) {
    const std::function<void(int)>* fn = nullptr;
    {
      std::unique_lock<std::mutex> lock(mutex_);
      cv_start_.wait(lock, [&] { return stop_ || job_.epoch > seen; });
      if (stop_) return;
      seen = job_.epoch;
      fn = job_.run;
    }
    (*fn)(rank);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (--running_ == 0) cv_done_.notify_one();
    }
  }
}

void ThreadPool::run_job(const std::function<void(int)>& fn) {
  if (workers_.empty()) {
    fn(0);
    return;
  }
  {
    std::lock_guard<std::mutex> lock(mutex_);
    job_.run = &fn;
    job_.epoch = ++submitted_;
    running_ = static_cast<int>(workers_.size());
  }
  cv_start_.notify_all();
  fn(0);
  std::unique_lock<std::mutex> lock(mutex_);
  cv_done_.wait(lock, [&] { return running_ == 0; });
}

void ThreadPool::parallel_for(std::size_t n, std::size_t grain,
                              const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  grain = std::max<std::size_t>(1, grain);
  if (workers_.empty() || n <= grain) {
    body(0, n);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  run_job([&](int) {
    for (;;) {
      const std::size_t begin = cursor.fetch_add(grain, std::memory_order_relaxed);
      if (begin >= n) break;
      body(begin, std::min(begin + grain, n));
    }
  });
}

void ThreadPool::barrier_wait() {
  const int team = thread_count();
  const int sense = barrier_sense_.load(std::memory_order_acquire);
  if (barrier_count_.fetch_add(1, std::memory_order_acq_rel) == team - 1) {
    barrier_count_.store(0, std::memory_order_relaxed);
    barrier_sense_.store(sense ^ 1, std::memory_order_release);
  } else {
    int spins = 0;
    while (barrier_sense_.load(std::memory_order_acquire) == sense) {
      if (++spins > 128) std::this_thread::yield();
    }
  }
}

void ThreadPool::parallel_colored(const std::vector<std::pair<std::size_t, std::size_t>>& groups,
                                  const std::function<void(std::size_t)>& body) {
  if (workers_.empty()) {
    for (const auto& [begin, end] : groups)
      for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  const int team = thread_count();
  run_job([&](int rank) {
    for (const auto& [begin, end] : groups) {
      const std::size_t count = end - begin;
      const std::size_t chunk = (count + team - 1) / team;
      const std::size_t lo = begin + std::min<std::size_t>(count, chunk * rank);
      const std::size_t hi = begin + std::min<std::size_t>(count, chunk * (rank + 1));
      for (std::size_t i = lo; i < hi; ++i) body(i);
      barrier_wait();
    }
  });
}

}  // namespace lapsim
