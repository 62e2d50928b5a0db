#include "attrstream/streaming.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <variant>

#include "attrstream/error.hpp"
#include "attrstream/log.hpp"

namespace attrstream {

namespace {

using Clock = std::chrono::steady_clock;

struct TokenRows {
  std::uint32_t step = 0;
  std::vector<float> rows;  // [L*H][M]
};
struct SpanEnd {
  Span span;
  std::int64_t enqueue_ns = 0;
};
using Item = std::variant<TokenRows, SpanEnd>;

std::int64_t since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
}

}  // namespace

std::vector<double> refine_to_patches(std::span<const double> region_scores,
                                      const RegionPartition& partition,
                                      std::span<const float> saliency) {
  const std::size_t k = partition.num_regions();
  if (region_scores.size() != k)
    throw Error(ErrorKind::dimension, "refine: " + std::to_string(region_scores.size()) +
                                          " scores for " + std::to_string(k) + " regions");
  if (saliency.size() != partition.num_tokens())
    throw Error(ErrorKind::dimension, "refine: saliency has " + std::to_string(saliency.size()) +
                                          " entries, expected " +
                                          std::to_string(partition.num_tokens()));
  std::vector<double> patches(partition.num_tokens(), 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    auto members = partition.members(r);
    double total = 0.0;
    for (auto i : members) {
      if (!(saliency[i] >= 0.0f))
        throw Error(ErrorKind::invalid_argument, "saliency must be non-negative at token " +
                                                     std::to_string(i));
      total += saliency[i];
    }
    if (total > 0.0) {
      for (auto i : members) patches[i] = region_scores[r] * (saliency[i] / total);
    } else {
      log::warn("region ", r, " has zero saliency; splitting its score uniformly");
      double share = region_scores[r] / static_cast<double>(members.size());
      for (auto i : members) patches[i] = share;
    }
  }
  return patches;
}

StreamResult stream_attribute(const AttentionTrace& trace, const RegionPartition& partition,
                              const EstimatorWeights& weights, const StreamOptions& options) {
  if (weights.dim() != trace.heads_total())
    throw Error(ErrorKind::dimension, "weights have " + std::to_string(weights.dim()) +
                                          " entries, trace has " +
                                          std::to_string(trace.heads_total()) + " heads");
  if (partition.num_tokens() != trace.num_vision_tokens)
    throw Error(ErrorKind::dimension, "partition covers " + std::to_string(partition.num_tokens()) +
                                          " tokens, trace has " +
                                          std::to_string(trace.num_vision_tokens));
  if (trace.saliency.size() != trace.num_vision_tokens)
    throw Error(ErrorKind::dimension, "trace saliency does not match its vision tokens");
  if (trace.tokens.size() != trace.num_steps)
    throw Error(ErrorKind::dimension, "trace has " + std::to_string(trace.tokens.size()) +
                                          " token strings for " +
                                          std::to_string(trace.num_steps) + " steps");

  const auto start = Clock::now();
  BoundedQueue<Item> queue(options.capacity);
  std::atomic<std::uint64_t> generated{0};
  std::atomic<std::uint64_t> frames_done{0};
  std::mutex step_mutex;
  std::condition_variable step_cv;
  bool consumer_failed = false;

  StreamResult result;
  std::exception_ptr consumer_error;

  std::thread consumer([&] {
    try {
      SpanAccumulator acc(partition, trace.num_layers, trace.num_heads);
      std::uint32_t span_id = 0;
      while (auto item = queue.pop()) {
        if (auto* rows = std::get_if<TokenRows>(&*item)) {
          acc.fold(rows->rows);
          continue;
        }
        const auto& end = std::get<SpanEnd>(*item);
        auto t0 = Clock::now();
        AttributionFrame frame;
        frame.span_id = span_id++;
        frame.span = end.span;
        frame.region_scores = score_regions(weights, acc.finalize(end.span));
        frame.patch_scores = refine_to_patches(frame.region_scores, partition, trace.saliency);
        acc.reset();
        frame.compute_ns =
            std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
        frame.enqueue_ns = end.enqueue_ns;
        frame.tokens_behind = generated.load() - end.span.end;
        frame.emit_ns = since(start);
        if (options.on_frame) options.on_frame(frame);
        if (options.keep_frames) result.frames.push_back(std::move(frame));
        {
          std::lock_guard lock(step_mutex);
          frames_done.fetch_add(1);
        }
        step_cv.notify_all();
      }
    } catch (...) {
      consumer_error = std::current_exception();
      queue.abort();
      std::lock_guard lock(step_mutex);
      consumer_failed = true;
      step_cv.notify_all();
    }
  });

  // Producer: runs on the calling thread.
  const std::size_t row_len = trace.heads_total() * trace.num_vision_tokens;
  std::uint64_t spans_sent = 0;
  auto send_span = [&](const Span& span) {
    result.spans.push_back(span);
    queue.push(SpanEnd{span, since(start)});
    ++spans_sent;
    if (options.lockstep) {
      std::unique_lock lock(step_mutex);
      step_cv.wait(lock, [&] { return frames_done.load() >= spans_sent || consumer_failed; });
    }
  };
  auto send_token = [&](std::uint32_t step) {
    TokenRows rows;
    rows.step = step;
    rows.rows.resize(row_len);
    trace.gather_step(step, rows.rows);
    queue.push(std::move(rows));
  };

  if (options.trace_spans) {
    std::size_t next_span = 0;
    for (std::uint32_t t = 0; t < trace.num_steps; ++t) {
      generated.fetch_add(1);
      // Tokens outside every span (gaps in the table) are never folded.
      if (next_span < trace.spans.size() && trace.spans[next_span].contains(t)) send_token(t);
      while (next_span < trace.spans.size() && trace.spans[next_span].end == t + 1)
        send_span(trace.spans[next_span++]);
    }
  } else {
    SpanSegmenter segmenter(options.segmenter);
    auto handle = [&](const std::vector<SegmentEvent>& events) {
      for (const auto& e : events) {
        if (e.kind == SegmentEvent::Kind::token)
          send_token(e.token);
        else
          send_span(e.span);
      }
    };
    for (std::uint32_t t = 0; t < trace.num_steps; ++t) {
      generated.fetch_add(1);
      handle(segmenter.push(trace.tokens[t]));
    }
    handle(segmenter.finish());
  }
  queue.close();
  consumer.join();

  result.tokens = generated.load();
  result.queue_high_water = queue.high_water();
  if (consumer_error) {
    std::string what = "consumer failed";
    try {
      std::rethrow_exception(consumer_error);
    } catch (const std::exception& e) {
      what = std::string("consumer failed: ") + e.what();
    } catch (...) {
    }
    throw Error(ErrorKind::pipeline, what);
  }
  return result;
}

}  // namespace attrstream
