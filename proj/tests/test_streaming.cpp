#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "attrstream/error.hpp"
#include "attrstream/oracle.hpp"
#include "attrstream/streaming.hpp"
#include "support.hpp"

using namespace attrstream;
using testing_support::random_partition;
using testing_support::random_trace;

namespace {

EstimatorWeights random_weights(std::mt19937_64& rng, std::uint32_t l, std::uint32_t h) {
  return {l, h, testing_support::random_vector(rng, l * h), "", 0};
}

}  // namespace

TEST(Queue, FifoAcrossThreads) {
  BoundedQueue<int> q(3);
  std::thread producer([&] {
    for (int i = 0; i < 1000; ++i) ASSERT_TRUE(q.push(i));
    q.close();
  });
  int expect = 0;
  while (auto v = q.pop()) EXPECT_EQ(*v, expect++);
  producer.join();
  EXPECT_EQ(expect, 1000);
  EXPECT_LE(q.high_water(), 3u);
}

TEST(Queue, AbortReleasesBlockedProducer) {
  BoundedQueue<int> q(1);
  ASSERT_TRUE(q.push(1));
  std::thread producer([&] { EXPECT_FALSE(q.push(2)); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  q.abort();
  producer.join();
  EXPECT_FALSE(q.pop().has_value());
}

TEST(Refine, PreservesRegionMass) {
  std::mt19937_64 rng(1);
  auto p = random_partition(rng, {4, 4}, 5);
  std::vector<double> scores{1, -2, 0.5, 3, 0};
  std::vector<float> sal(16);
  for (auto& s : sal) s = static_cast<float>(rng() % 7);
  for (auto i : p.members(1)) sal[i] = 0;  // forces the uniform split
  auto patches = refine_to_patches(scores, p, sal);
  for (std::size_t k = 0; k < 5; ++k) {
    double sum = 0;
    for (auto i : p.members(k)) sum += patches[i];
    EXPECT_NEAR(sum, scores[k], 1e-12);
  }
  for (auto i : p.members(1)) EXPECT_DOUBLE_EQ(patches[i], -2.0 / p.region_size(1));
  for (auto i : p.members(3))
    if (sal[i] == 0) EXPECT_EQ(patches[i], 0.0);
  sal[0] = -1;
  EXPECT_THROW(refine_to_patches(scores, p, sal), Error);
  EXPECT_THROW(refine_to_patches(std::vector<double>(4), p, sal), Error);
}

TEST(Stream, MatchesBatchBitwise) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    auto t = random_trace(rng, 2, 2, 10 + rng() % 40, {4, 4}, 2, 1 + rng() % 6);
    auto p = random_partition(rng, t.grid, 1 + rng() % 16);
    auto w = random_weights(rng, 2, 2);
    StreamOptions o;
    o.trace_spans = true;
    o.capacity = 1 + rng() % 8;
    auto res = stream_attribute(t, p, w, o);
    ASSERT_EQ(res.frames.size(), t.spans.size());
    for (std::size_t s = 0; s < t.spans.size(); ++s) {
      const auto& f = res.frames[s];
      EXPECT_EQ(f.span_id, s);
      EXPECT_EQ(f.span, t.spans[s]);
      auto batch = score_regions(w, pool_span_region(t, t.spans[s], p));
      EXPECT_EQ(f.region_scores, batch);
      EXPECT_EQ(f.patch_scores, refine_to_patches(batch, p, t.saliency));
    }
    EXPECT_LE(res.queue_high_water, o.capacity);
    EXPECT_EQ(res.tokens, t.num_steps);
  }
}

TEST(Stream, SegmenterRecoversToySpans) {
  ToyModelSpec spec;
  spec.steps = 24;
  spec.spans = 3;
  ToyModel model(spec);
  auto ex = model.make_example(0);
  auto base = model.forward(ex, {}, true);
  auto trace = model.trace_of(ex, base);
  auto p = make_partition(trace, {});
  std::mt19937_64 rng(3);
  auto w = random_weights(rng, 2, 4);
  StreamOptions o;
  o.lockstep = true;
  model.reset_passes();
  auto res = stream_attribute(trace, p, w, o);
  EXPECT_EQ(model.passes(), 0u);
  ASSERT_EQ(res.spans.size(), trace.spans.size());
  for (std::size_t s = 0; s < res.spans.size(); ++s) {
    EXPECT_EQ(res.spans[s].start, trace.spans[s].start);
    EXPECT_EQ(res.spans[s].end, trace.spans[s].end);
  }
  // The period is confirmed as a boundary by the next token only.
  for (std::size_t s = 0; s + 1 < res.frames.size(); ++s) EXPECT_EQ(res.frames[s].tokens_behind, 1u);
  EXPECT_EQ(res.frames.back().tokens_behind, 0u);
}

TEST(Stream, LockstepTraceSpansHaveNoLag) {
  std::mt19937_64 rng(4);
  auto t = random_trace(rng, 1, 2, 30, {3, 3}, 2, 5);
  auto p = random_partition(rng, t.grid, 4);
  StreamOptions o;
  o.trace_spans = true;
  o.lockstep = true;
  auto res = stream_attribute(t, p, random_weights(rng, 1, 2), o);
  for (const auto& f : res.frames) EXPECT_EQ(f.tokens_behind, 0u);
}

TEST(Stream, GapsInSpanTableAreSkipped) {
  std::mt19937_64 rng(5);
  auto t = random_trace(rng, 1, 2, 12, {3, 3}, 2, 1);
  t.spans = {{2, 5, "a"}, {7, 12, "b"}};
  auto p = random_partition(rng, t.grid, 4);
  auto w = random_weights(rng, 1, 2);
  StreamOptions o;
  o.trace_spans = true;
  auto res = stream_attribute(t, p, w, o);
  ASSERT_EQ(res.frames.size(), 2u);
  EXPECT_EQ(res.frames[1].region_scores, score_regions(w, pool_span_region(t, t.spans[1], p)));
}

TEST(Stream, ConsumerFailureSurfacesAsPipelineError) {
  std::mt19937_64 rng(6);
  auto t = random_trace(rng, 1, 2, 200, {3, 3}, 2, 50);
  auto p = random_partition(rng, t.grid, 4);
  for (bool lockstep : {false, true}) {
    StreamOptions o;
    o.trace_spans = true;
    o.capacity = 2;
    o.lockstep = lockstep;
    o.on_frame = [](const AttributionFrame& f) {
      if (f.span_id == 3) throw std::runtime_error("sink closed");
    };
    try {
      stream_attribute(t, p, random_weights(rng, 1, 2), o);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::pipeline);
      EXPECT_NE(std::string(e.what()).find("sink closed"), std::string::npos);
    }
  }
}

TEST(Stream, CallbackOnlyKeepsNoFrames) {
  std::mt19937_64 rng(8);
  auto t = random_trace(rng, 2, 2, 120, {4, 4}, 2, 30);
  auto p = random_partition(rng, t.grid, 5);
  auto w = random_weights(rng, 2, 2);
  StreamOptions o;
  o.trace_spans = true;
  auto kept = stream_attribute(t, p, w, o);
  std::vector<AttributionFrame> seen;
  o.keep_frames = false;
  o.on_frame = [&](const AttributionFrame& f) { seen.push_back(f); };
  auto res = stream_attribute(t, p, w, o);
  EXPECT_TRUE(res.frames.empty());
  EXPECT_EQ(res.spans.size(), kept.frames.size());
  ASSERT_EQ(seen.size(), kept.frames.size());
  for (std::size_t i = 0; i < seen.size(); ++i)
    EXPECT_EQ(seen[i].region_scores, kept.frames[i].region_scores);
}

TEST(Stream, DimensionChecks) {
  std::mt19937_64 rng(7);
  auto t = random_trace(rng, 1, 2, 5, {3, 3}, 2, 1);
  auto p = random_partition(rng, t.grid, 4);
  auto expect_dim = [&](auto&& f) {
    try {
      f();
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::dimension);
    }
  };
  expect_dim([&] { stream_attribute(t, p, random_weights(rng, 2, 2)); });
  expect_dim([&] { stream_attribute(t, random_partition(rng, {2, 2}, 2), random_weights(rng, 1, 2)); });
}
