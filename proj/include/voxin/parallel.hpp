#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "voxin/common.hpp"

namespace vx {

// Persistent pool used by parallel_for.  Work is split statically by worker
// index, so results never depend on scheduling order.
class ThreadPool {
 public:
  static ThreadPool& global();

  ~ThreadPool();

  // Runs fn(worker, nworkers) on `nworkers` workers and blocks until all
  // return.  Worker 0 is the calling thread.  Concurrent calls from
  // different threads are safe; they run one job at a time.
  void run(std::size_t nworkers, const std::function<void(std::size_t, std::size_t)>& fn);

 private:
  ThreadPool() = default;
  void ensure(std::size_t helpers);
  void helper_loop(std::size_t slot);

  std::mutex run_mu_;  // serializes whole jobs
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  std::vector<std::thread> threads_;
  const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
  std::size_t job_workers_ = 0;
  std::size_t job_generation_ = 0;
  std::size_t pending_ = 0;
  bool stop_ = false;
};

i64 default_workers();

// Splits [0, n) into `workers` contiguous chunks; chunk w runs on worker w.
void parallel_for(i64 n, i64 workers, const std::function<void(i64 begin, i64 end)>& fn);

// As parallel_for, but processes at most `wave` indices at a time (indices in
// [w0, w0+wave) complete before [w0+wave, ...) starts).
void parallel_for_waves(i64 n, i64 workers, i64 wave,
                        const std::function<void(i64 begin, i64 end)>& fn);

}  // namespace vx
