#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dnrl {

/// Fixed set of worker threads running index-parallel loops. Work items are
/// assigned statically by index, so results written per index do not depend
/// on scheduling. With one thread everything runs on the caller.
class WorkerPool {
 public:
  explicit WorkerPool(int threads);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int threads() const { return static_cast<int>(workers_.size()) + 1; }

  /// Calls fn(i) for i in [0, n) and waits. If any call throws, the
  /// exception of the lowest failing index is rethrown after all finish.
  void run(int n, const std::function<void(int)>& fn);

 private:
  void worker_loop(int slot);
  void run_slot(int slot);

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  int job_size_ = 0;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  bool stopping_ = false;
  std::vector<std::exception_ptr> errors_;
};

/// DNRL_THREADS when set to a positive integer, else the hardware
/// concurrency; never more than `cap` and never less than 1.
int thread_budget(int cap);

}  // namespace dnrl
