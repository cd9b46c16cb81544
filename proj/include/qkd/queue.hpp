#pragma once

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>

namespace qkd {

// Bounded MPMC queue with blocking push/pop; push applies backpressure,
// close() releases waiters.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

  // false if the queue was closed
  bool push(T item) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_space_.wait(lock, [&] { return closed_ || q_.size() < capacity_; });
    if (closed_) return false;
    q_.push_back(std::move(item));
    cv_data_.notify_one();
    return true;
  }

  // empty optional on closed-and-drained
  std::optional<T> pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_data_.wait(lock, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return v;
  }

  std::optional<T> try_pop() {
    std::unique_lock<std::mutex> lock(mu_);
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return v;
  }

  void close() {
    std::unique_lock<std::mutex> lock(mu_);
    closed_ = true;
    cv_data_.notify_all();
    cv_space_.notify_all();
  }

  size_t size() const {
    std::unique_lock<std::mutex> lock(mu_);
    return q_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_data_, cv_space_;
  std::deque<T> q_;
  size_t capacity_;
  bool closed_ = false;
};

}  // namespace qkd
