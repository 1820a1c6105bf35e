#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace bbps {

/// A minimal fork-join pool for the even-odd sampler's per-block fan-out.
/// parallel_for partitions [0, count) into contiguous chunks, one per
/// worker; the work items write to disjoint output slots, so no
/// synchronisation beyond the join is needed and the results are identical
/// for every worker count.
class ThreadPool {
 public:
  explicit ThreadPool(int threads) {
    for (int i = 1; i < threads; ++i)  // worker 0 is the calling thread
      workers_.emplace_back([this] { run(); });
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int width() const { return static_cast<int>(workers_.size()) + 1; }

  /// Run body(i) for every i in [0, count); returns when all are done.
  void parallel_for(long count, const std::function<void(long)>& body) {
    if (count <= 0) return;
    if (workers_.empty() || count == 1) {
      for (long i = 0; i < count; ++i) body(i);
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mutex_);
      body_ = &body;
      count_ = count;
      next_chunk_ = 0;
      active_ = static_cast<int>(workers_.size());
      generation_ += 1;
    }
    wake_.notify_all();
    drain();  // the calling thread participates
    std::unique_lock<std::mutex> lock(mutex_);
    done_.wait(lock, [this] { return active_ == 0; });
    body_ = nullptr;
  }

 private:
  static constexpr long kChunk = 8;

  void drain() {
    for (;;) {
      long begin;
      {
        std::lock_guard<std::mutex> lock(mutex_);
        if (next_chunk_ >= count_) return;
        begin = next_chunk_;
        next_chunk_ += kChunk;
      }
      const long end = std::min(begin + kChunk, count_);
      for (long i = begin; i < end; ++i) (*body_)(i);
    }
  }

  void run() {
    long seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mutex_);
        wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      drain();
      {
        std::lock_guard<std::mutex> lock(mutex_);
        if (--active_ == 0) done_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable wake_, done_;
  const std::function<void(long)>* body_ = nullptr;
  long count_ = 0;
  long next_chunk_ = 0;
  int active_ = 0;
  long generation_ = 0;
  bool stop_ = false;
};

}  // namespace bbps
