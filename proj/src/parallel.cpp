#include "voxin/parallel.hpp"

#include <algorithm>

namespace vx {

ThreadPool& ThreadPool::global() {
  static ThreadPool pool;
  return pool;
}

ThreadPool::~ThreadPool() {
  {
    std::unique_lock<std::mutex> lk(mu_);
    stop_ = true;
  }
  wake_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::ensure(std::size_t helpers) {
  while (threads_.size() < helpers) {
    std::size_t slot = threads_.size();
    threads_.emplace_back([this, slot] { helper_loop(slot); });
  }
}

void ThreadPool::helper_loop(std::size_t slot) {
  std::size_t seen_generation = 0;
  for (;;) {
    const std::function<void(std::size_t, std::size_t)>* job = nullptr;
    std::size_t workers = 0;
    {
      std::unique_lock<std::mutex> lk(mu_);
      wake_.wait(lk, [&] {
        return stop_ || (job_ != nullptr && job_generation_ != seen_generation && slot + 1 < job_workers_);
      });
      if (stop_) return;
      seen_generation = job_generation_;
      job = job_;
      workers = job_workers_;
    }
    (*job)(slot + 1, workers);
    {
      std::unique_lock<std::mutex> lk(mu_);
      if (--pending_ == 0) done_.notify_all();
    }
  }
}

void ThreadPool::run(std::size_t nworkers, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (nworkers <= 1) {
    fn(0, 1);
    return;
  }
  std::lock_guard<std::mutex> serialize(run_mu_);
  std::unique_lock<std::mutex> lk(mu_);
  ensure(nworkers - 1);
  job_ = &fn;
  job_workers_ = nworkers;
  job_generation_++;
  pending_ = nworkers - 1;
  lk.unlock();
  wake_.notify_all();

  fn(0, nworkers);

  lk.lock();
  done_.wait(lk, [&] { return pending_ == 0; });
  job_ = nullptr;
}

i64 default_workers() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 4 : static_cast<i64>(hc);
}

void parallel_for(i64 n, i64 workers, const std::function<void(i64, i64)>& fn) {
  require(workers > 0, "parallel_for: worker count must be positive");
  if (n <= 0) return;
  const i64 w = std::min<i64>(workers, n);
  if (w == 1) {
    fn(0, n);
    return;
  }
  ThreadPool::global().run(static_cast<std::size_t>(w), [&](std::size_t wi, std::size_t) {
    // static split: worker wi owns [begin, end)
    const i64 per = n / w, extra = n % w;
    const i64 begin = static_cast<i64>(wi) * per + std::min<i64>(static_cast<i64>(wi), extra);
    const i64 end = begin + per + (static_cast<i64>(wi) < extra ? 1 : 0);
    if (begin < end) fn(begin, end);
  });
}

void parallel_for_waves(i64 n, i64 workers, i64 wave, const std::function<void(i64, i64)>& fn) {
  require(wave > 0, "parallel_for_waves: wave size must be positive");
  for (i64 w0 = 0; w0 < n; w0 += wave) {
    const i64 count = std::min<i64>(wave, n - w0);
    parallel_for(count, workers, [&](i64 b, i64 e) { fn(w0 + b, w0 + e); });
  }
}

}  // namespace vx
