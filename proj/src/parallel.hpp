#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dadet::detail {

// Persistent worker pool for batch-level data parallelism. Jobs are indexed;
// each index is claimed by exactly one worker, so as long as job i writes
// only to its own output slice, results are bitwise independent of worker
// count and scheduling order.
class ThreadPool {
 public:
  static ThreadPool& instance();

  void set_size(int n);
  int size() const { return size_; }

  // Runs fn(i) for i in [0, n). Blocks until all jobs finish.
  void run(int n, const std::function<void(int)>& fn);

 private:
  ThreadPool();
  ~ThreadPool();
  void worker_loop();

  std::vector<std::thread> threads_;
  int size_ = 1;

  std::mutex mu_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  const std::function<void(int)>* job_fn_ = nullptr;
  int job_count_ = 0;
  std::atomic<int> next_index_{0};
  std::atomic<int> remaining_{0};
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

inline void parallel_for(int n, const std::function<void(int)>& fn) {
  ThreadPool::instance().run(n, fn);
}

}  // namespace dadet::detail
