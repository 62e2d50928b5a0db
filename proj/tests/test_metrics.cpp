#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "attrstream/error.hpp"
#include "attrstream/metrics.hpp"
#include "support.hpp"

using namespace attrstream;
using testing_support::naive_ranks;
using testing_support::naive_spearman;

TEST(Ranks, TiesShareMeanPosition) {
  std::vector<double> x{3, 1, 3, 2, 3};
  EXPECT_EQ(average_ranks(x), (std::vector<double>{4, 1, 4, 2, 4}));
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> v(1 + rng() % 12);
    for (auto& e : v) e = static_cast<double>(rng() % 5);
    EXPECT_EQ(average_ranks(v), naive_ranks(v));
  }
}

TEST(Spearman, AgainstDefinitionAndClosedForm) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 300; ++rep) {
    std::size_t n = 2 + rng() % 10;
    std::vector<double> x(n), y(n);
    for (auto& e : x) e = static_cast<double>(rng() % 4);
    for (auto& e : y) e = static_cast<double>(rng() % 6);
    bool cx = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
    bool cy = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    if (cx || cy) {
      EXPECT_THROW(spearman(x, y), Error);
      continue;
    }
    EXPECT_NEAR(spearman(x, y), naive_spearman(x, y), 1e-12);
  }
  // Without ties: 1 - 6 sum d^2 / (n (n^2 - 1)).
  std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
  EXPECT_NEAR(spearman(x, y), 1 - 6.0 * 4 / (5 * 24), 1e-15);
  EXPECT_THROW(lds(std::vector<double>{1}, std::vector<double>{1}), Error);
  EXPECT_THROW(spearman(x, std::vector<double>{1, 2}), Error);
}

TEST(Spearman, MonotoneInvariance) {
  std::mt19937_64 rng(3);
  auto x = testing_support::random_vector(rng, 20);
  auto y = testing_support::random_vector(rng, 20);
  auto z = x;
  for (auto& e : z) e = std::exp(3 * e) + 7;
  EXPECT_NEAR(spearman(x, y), spearman(z, y), 1e-14);
}

TEST(TopK, StableDescending) {
  std::vector<double> s{0.5, 0.9, 0.5, 0.1, 0.9};
  EXPECT_EQ(top_k_regions(s, 3), (std::vector<std::size_t>{1, 4, 0}));
  EXPECT_EQ(top_k_regions(s, 10).size(), 5u);
  EXPECT_TRUE(top_k_regions(s, 0).empty());
}

TEST(RSquared, Basics) {
  std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8};
  EXPECT_NEAR(r_squared(x, y), 1.0, 1e-15);
  std::vector<double> neg{-1, -2, -3, -4};
  EXPECT_NEAR(r_squared(neg, y), 1.0, 1e-15);  // fitted line absorbs the sign
  EXPECT_EQ(r_squared(std::vector<double>{1, 1, 1, 1}, y), 0.0);
  EXPECT_THROW(r_squared(x, std::vector<double>{1, 1, 1, 1}), Error);
  std::mt19937_64 rng(4);
  auto a = testing_support::random_vector(rng, 30);
  auto b = testing_support::random_vector(rng, 30);
  double rho = testing_support::naive_pearson(a, b);
  EXPECT_NEAR(r_squared(a, b), rho * rho, 1e-12);
}

TEST(Fidelity, BinsAndMissing) {
  std::vector<FidelityPoint> pts;
  for (int i = 0; i < 40; ++i) {
    double p = i / 39.0;
    pts.push_back({p, double(i), p < 0.5 ? 2.0 * i : std::sin(double(i))});
  }
  auto bins = fidelity_curve(pts, 4);
  ASSERT_EQ(bins.size(), 4u);
  std::size_t total = 0;
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_DOUBLE_EQ(bins[b].lower, b / 4.0);
    EXPECT_DOUBLE_EQ(bins[b].upper, (b + 1) / 4.0);
    total += bins[b].count;
  }
  EXPECT_EQ(total, 40u);
  ASSERT_TRUE(bins[0].r2.has_value());
  EXPECT_NEAR(*bins[0].r2, 1.0, 1e-12);
  EXPECT_EQ(bins[3].count, 10u);  // progress 1.0 lands in the last bin
  std::vector<FidelityPoint> sparse{{0.1, 1, 1}, {0.9, 2, 2}, {0.95, 3, 4}};
  auto sb = fidelity_curve(sparse, 2);
  EXPECT_FALSE(sb[0].r2.has_value());
  EXPECT_TRUE(sb[1].r2.has_value());
  EXPECT_THROW(fidelity_curve(sparse, 5), Error);
}

TEST(Aggregate, IgnoresNaN) {
  std::vector<double> v{1, std::nan(""), 3};
  auto a = aggregate(v);
  EXPECT_EQ(a.count, 2u);
  EXPECT_DOUBLE_EQ(a.mean, 2.0);
  EXPECT_DOUBLE_EQ(a.std, std::sqrt(2.0));
  EXPECT_EQ(aggregate(std::vector<double>{5}).std, 0.0);
}
