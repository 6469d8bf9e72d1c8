#include "parallel.hpp"

namespace dadet::detail {

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

ThreadPool::ThreadPool() {
  const unsigned hc = std::thread::hardware_concurrency();
  set_size(hc == 0 ? 1 : static_cast<int>(hc));
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_work_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::set_size(int n) {
  if (n <= 0) {
    const unsigned hc = std::thread::hardware_concurrency();
    n = hc == 0 ? 1 : static_cast<int>(hc);
  }
  std::unique_lock<std::mutex> lock(mu_);
  size_ = n;
  // The calling thread participates, so keep n-1 helpers.
  while (static_cast<int>(threads_.size()) < n - 1)
    threads_.emplace_back([this] { worker_loop(); });
}

void ThreadPool::run(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (n == 1 || size_ == 1 || threads_.empty()) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    job_fn_ = &fn;
    job_count_ = n;
    next_index_.store(0, std::memory_order_relaxed);
    remaining_.store(n, std::memory_order_relaxed);
    ++generation_;
  }
  cv_work_.notify_all();
  // Caller works too.
  int i;
  while ((i = next_index_.fetch_add(1, std::memory_order_relaxed)) < n) {
    fn(i);
    remaining_.fetch_sub(1, std::memory_order_acq_rel);
  }
  std::unique_lock<std::mutex> lock(mu_);
  cv_done_.wait(lock, [this] {
    return remaining_.load(std::memory_order_acquire) == 0;
  });
  job_fn_ = nullptr;
}

void ThreadPool::worker_loop() {
  std::uint64_t seen = 0;
  for (;;) {
    const std::function<void(int)>* fn = nullptr;
    int count = 0;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_work_.wait(lock, [this, seen] {
        return stop_ || (job_fn_ != nullptr && generation_ != seen);
      });
      if (stop_) return;
      seen = generation_;
      fn = job_fn_;
      count = job_count_;
    }
    int i;
    while ((i = next_index_.fetch_add(1, std::memory_order_relaxed)) < count) {
      (*fn)(i);
      if (remaining_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lock(mu_);
        cv_done_.notify_all();
      }
    }
  }
}

}  // namespace dadet::detail
