#include "dnrl/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace dnrl {

WorkerPool::WorkerPool(int threads) {
  const int extra = std::max(0, threads - 1);
  workers_.reserve(static_cast<std::size_t>(extra));
  for (int k = 0; k < extra; ++k) workers_.emplace_back([this, k] { worker_loop(k + 1); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stopping_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

void WorkerPool::run_slot(int slot) {
  const int stride = threads();
  for (int i = slot; i < job_size_; i += stride) {
    try {
      (*job_)(i);
    } catch (...) {
      errors_[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
}

void WorkerPool::worker_loop(int slot) {
  std::uint64_t seen = 0;
  for (;;) {
    {
      std::unique_lock<std::mutex> lock(mutex_);
      start_cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
      if (stopping_) return;
      seen = generation_;
    }
    run_slot(slot);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      --pending_;
    }
    done_cv_.notify_one();
  }
}

void WorkerPool::run(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  errors_.assign(static_cast<std::size_t>(n), nullptr);
  if (workers_.empty() || n == 1) {
    job_ = &fn;
    job_size_ = n;
    // single slot covers every index
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors_[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      job_ = &fn;
      job_size_ = n;
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    start_cv_.notify_all();
    run_slot(0);
    std::unique_lock<std::mutex> lock(mutex_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
  }
  job_ = nullptr;
  for (auto& e : errors_) {
    if (e) std::rethrow_exception(e);
  }
}

int thread_budget(int cap) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DNRL_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) n = v;
    } catch (const std::exception&) {
      // ignore malformed values
    }
  }
  return std::clamp(n, 1, std::max(1, cap));
}

}  // namespace dnrl
