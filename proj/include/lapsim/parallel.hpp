#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace lapsim {

/// Fixed-size worker pool for frame-internal parallelism.
///
/// Two dispatch shapes:
///  - parallel_for: chunked work stealing over an index range. Output must not
///    depend on chunk assignment (disjoint writes), so results are identical
///    for any thread count.
///  - parallel_colored: one dispatch per constraint pass. All threads walk the
///    color groups in lockstep, separated by an internal barrier; within a
///    color the range is split statically. Constraints sharing a color touch
///    disjoint particles, so the result is deterministic for a fixed coloring.
///
/// thread_count() == 1 runs everything inline on the caller.
class ThreadPool {
 public:
  explicit ThreadPool(int threads = 1);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int thread_count() const { return static_cast<int>(workers_.size()) + 1; }

  void parallel_for(std::size_t n, std::size_t grain,
                    const std::function<void(std::size_t, std::size_t)>& body);

  /// groups[i] = [begin, end) into a flat constraint order; body(index) is
  /// invoked for every index of every group, groups strictly in sequence.
  void parallel_colored(const std::vector<std::pair<std::size_t, std::size_t>>& groups,
                        const std::function<void(std::size_t)>& body);

 private:
  struct Job {
    const std::function<void(int)>* run = nullptr;  // arg: participant rank
    uint64_t epoch = 0;
  };

  void worker_loop(int rank);
  void run_job(const std::function<void(int)>& fn);
  void barrier_wait();

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  Job job_;
  uint64_t submitted_ = 0;
  int running_ = 0;
  bool stop_ = false;

  // sense-reversing barrier for lockstep color sweeps
  std::atomic<int> barrier_count_{0};
  std::atomic<int> barrier_sense_{0};
};

}  // namespace lapsim
