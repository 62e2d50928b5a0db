#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <new>
#include <random>

#include "attrstream/error.hpp"
#include "attrstream/features.hpp"
#include "support.hpp"

// Allocation probe: counts every global operator new.
static std::atomic<std::size_t> g_allocations{0};

void* operator new(std::size_t n) {
  g_allocations.fetch_add(1, std::memory_order_relaxed);
  if (void* p = std::malloc(n ? n : 1)) return p;
  throw std::bad_alloc();
}
void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }

using namespace attrstream;
using testing_support::random_partition;
using testing_support::random_trace;

namespace {

// F[k][l*H+h] = sum over span steps and region tokens / (|span| * |region|).
std::vector<double> naive_pool(const AttentionTrace& t, const Span& s, const RegionPartition& p) {
  std::vector<double> out(p.num_regions() * t.heads_total(), 0.0);
  for (std::size_t k = 0; k < p.num_regions(); ++k)
    for (std::uint32_t l = 0; l < t.num_layers; ++l)
      for (std::uint32_t h = 0; h < t.num_heads; ++h) {
        long double sum = 0;
        for (std::uint32_t step = s.start; step < s.end; ++step)
          for (auto i : p.members(k)) sum += t.attention(l, h, step, i);
        out[k * t.heads_total() + l * t.num_heads + h] =
            static_cast<double>(sum / (static_cast<long double>(s.size()) * p.region_size(k)));
      }
  return out;
}

}  // namespace

TEST(Pooling, MatchesDefinition) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 25; ++rep) {
    auto t = random_trace(rng, 1 + rng() % 3, 1 + rng() % 4, 2 + rng() % 30, {4, 5}, 2, 1 + rng() % 5);
    auto p = random_partition(rng, t.grid, 1 + rng() % 20);
    for (const auto& s : t.spans) {
      auto f = pool_span_region(t, s, p);
      auto ref = naive_pool(t, s, p);
      ASSERT_EQ(f.values.size(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(f.values[i], ref[i], 1e-12);
      EXPECT_EQ(f.span, s);
    }
  }
}

TEST(Pooling, ColumnSumsBoundedByRowMass) {
  // Region means weighted by region size sum to the span-mean row mass <= 1.
  std::mt19937_64 rng(2);
  auto t = random_trace(rng, 2, 2, 10, {3, 3}, 2, 3);
  auto p = random_partition(rng, t.grid, 4);
  auto f = pool_span_region(t, t.spans[0], p);
  for (std::size_t lh = 0; lh < f.dim(); ++lh) {
    double mass = 0;
    for (std::size_t k = 0; k < f.num_regions; ++k) mass += f.at(k, lh) * p.region_size(k);
    EXPECT_LE(mass, 1.0 + 1e-6);
    EXPECT_GE(mass, 0.0);
  }
}

TEST(Pooling, Errors) {
  std::mt19937_64 rng(3);
  auto t = random_trace(rng, 1, 1, 4, {2, 2}, 1, 1);
  auto p = random_partition(rng, t.grid, 2);
  EXPECT_THROW(pool_span_region(t, {2, 2, ""}, p), Error);
  EXPECT_THROW(pool_span_region(t, {0, 5, ""}, p), Error);
  auto wrong = random_partition(rng, {3, 3}, 2);
  try {
    pool_span_region(t, {0, 2, ""}, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(Accumulator, FoldDoesNotAllocateAndStateIsBounded) {
  std::mt19937_64 rng(4);
  auto t = random_trace(rng, 2, 3, 200, {6, 6}, 2, 1);
  auto p = random_partition(rng, t.grid, 7);
  SpanAccumulator acc(p, 2, 3);
  const auto state = acc.state_size();
  EXPECT_EQ(state, 7u * 6 + 7);
  std::vector<float> rows(t.heads_total() * t.num_vision_tokens);
  const auto before = g_allocations.load();
  for (std::uint32_t s = 0; s < t.num_steps; ++s) {
    t.gather_step(s, rows);
    acc.fold(rows);
  }
  EXPECT_EQ(g_allocations.load(), before);
  EXPECT_EQ(acc.state_size(), state);
  EXPECT_EQ(acc.tokens_folded(), 200u);
  acc.reset();
  EXPECT_EQ(acc.tokens_folded(), 0u);
  EXPECT_THROW(acc.finalize({0, 1, ""}), Error);
  EXPECT_THROW(acc.fold(std::span<const float>(rows.data(), rows.size() - 1)), Error);
}

TEST(Combine, SignedAndBinaryAgreeWithLoops) {
  std::mt19937_64 rng(5);
  auto t = random_trace(rng, 2, 2, 6, {3, 3}, 1, 1);
  auto p = random_partition(rng, t.grid, 5);
  auto f = pool_span_region(t, t.spans[0], p);
  for (int m = 0; m < 32; ++m) {
    std::vector<int> signs(5);
    std::vector<std::uint8_t> bits(5);
    for (int k = 0; k < 5; ++k) {
      bits[k] = (m >> k) & 1;
      signs[k] = bits[k] ? 1 : -1;
    }
    auto s = combine_signed(f, signs);
    auto b = combine_binary(f, bits);
    auto total = f.column_sums();
    // s = 2 * b - total, up to rounding.
    for (std::size_t j = 0; j < f.dim(); ++j) EXPECT_NEAR(s[j], 2 * b[j] - total[j], 1e-12);
  }
  EXPECT_THROW(combine_signed(f, std::vector<int>(4, 1)), Error);
  EXPECT_THROW(combine_binary(f, std::vector<std::uint8_t>(6, 1)), Error);
}

TEST(Mask, Views) {
  MaskSample m{{1, 0, 1, 0, 0}};
  EXPECT_EQ(m.signed_view(), (std::vector<int>{1, -1, 1, -1, -1}));
  EXPECT_EQ(m.ablated(), (std::vector<std::uint8_t>{0, 1, 0, 1, 1}));
  EXPECT_EQ(m.ablated_count(), 3u);
  EXPECT_EQ(MaskSample::from_signed(m.signed_view()), m);
  EXPECT_THROW(MaskSample::from_signed(std::vector<int>{1, 0}), Error);
  EXPECT_EQ(MaskSample::retain_all(3).ablated_count(), 0u);
}
