#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrstream/estimator.hpp"
#include "attrstream/features.hpp"
#include "attrstream/segmenter.hpp"
#include "attrstream/trace.hpp"
#include "attrstream/unitization.hpp"

namespace attrstream {

/// Single-producer/single-consumer FIFO with a fixed capacity. push blocks
/// while full, pop blocks while empty. close() lets the consumer drain and
/// then see end-of-stream; abort() releases a producer stuck on a full
/// buffer and makes further pushes no-ops.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || aborted_; });
    if (aborted_) return false;
    items_.push_back(std::move(item));
    high_water_ = std::max(high_water_, items_.size());
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_ || aborted_; });
    if (items_.empty() || aborted_) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
  }

  void abort() {
    std::lock_guard lock(mutex_);
    aborted_ = true;
    items_.clear();
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t high_water() const {
    std::lock_guard lock(mutex_);
    return high_water_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> items_;
  std::size_t high_water_ = 0;
  bool closed_ = false;
  bool aborted_ = false;
};

struct AttributionFrame {
  std::uint32_t span_id = 0;
  Span span;
  std::vector<double> region_scores;
  std::vector<double> patch_scores;
  std::uint64_t tokens_behind = 0;
  std::int64_t enqueue_ns = 0;  // span close, relative to stream start
  std::int64_t emit_ns = 0;
  std::int64_t compute_ns = 0;  // finalize + score + refine on the consumer
};

struct StreamOptions {
  std::size_t capacity = 1024;  // token rows
  SegmenterOptions segmenter;
  /// Use the trace's own span table instead of segmenting its tokens.
  bool trace_spans = false;
  /// Producer waits for each frame before generating further tokens, which
  /// makes tokens_behind deterministic.
  bool lockstep = false;
  /// Called on the consumer thread, in span order. Throwing stops the
  /// stream with ErrorKind::pipeline.
  std::function<void(const AttributionFrame&)> on_frame;
  /// When false, frames only go to on_frame and memory stays bounded.
  bool keep_frames = true;
};

struct StreamResult {
  std::vector<AttributionFrame> frames;  // empty unless keep_frames
  std::vector<Span> spans;
  std::uint64_t tokens = 0;
  std::size_t queue_high_water = 0;
};

/// Patch refinement: s_i = score[R(i)] * sal_i / sum_{j in R(i)} sal_j.
/// Regions with zero total saliency split their score uniformly.
std::vector<double> refine_to_patches(std::span<const double> region_scores,
                                      const RegionPartition& partition,
                                      std::span<const float> saliency);

/// Replays a trace token by token. The calling thread produces (segmentation
/// plus per-token attention rows) and a worker thread consumes (running span sums,
/// scoring, refinement). Uses no model forward passes.
StreamResult stream_attribute(const AttentionTrace& trace, const RegionPartition& partition,
                              const EstimatorWeights& weights, const StreamOptions& options = {});

}  // namespace attrstream
