#pragma once

// Bounded blocking channel for handing finished work between threads, used to
// overlap sample generation with training. Order is preserved, so a single
// producer keeps the consumer's stream deterministic regardless of timing.

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>
#include <stdexcept>

namespace gaussflow {

template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw std::invalid_argument("queue: capacity must be positive");
    }

    // Blocks while full. Returns false (dropping the value) once closed.
    bool push(T value) {
        std::unique_lock<std::mutex> lock(m_);
        space_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(value));
        ready_.notify_one();
        return true;
    }

    // Blocks while empty. Empty optional means closed and fully drained.
    std::optional<T> pop() {
        std::unique_lock<std::mutex> lock(m_);
        ready_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T out = std::move(items_.front());
        items_.pop_front();
        space_.notify_one();
        return out;
    }

    // Wakes all waiters; further pushes are rejected, pops drain what is left.
    void close() {
        std::lock_guard<std::mutex> lock(m_);
        closed_ = true;
        ready_.notify_all();
        space_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(m_);
        return items_.size();
    }

private:
    mutable std::mutex m_;
    std::condition_variable ready_, space_;
    std::deque<T> items_;
    std::size_t capacity_;
    bool closed_ = false;
};

}  // namespace gaussflow
