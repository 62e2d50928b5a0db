#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "attrstream/trace.hpp"
#include "attrstream/unitization.hpp"

namespace testing_support {

using attrstream::AttentionTrace;
using attrstream::GridDims;
using attrstream::Span;

// Random trace with sub-stochastic attention rows and a contiguous span
// table covering every step.
inline AttentionTrace random_trace(std::mt19937_64& rng, std::uint32_t L, std::uint32_t H,
                                   std::uint32_t T, GridDims grid, std::uint32_t D,
                                   std::uint32_t spans) {
  AttentionTrace t;
  t.num_layers = L;
  t.num_heads = H;
  t.num_steps = T;
  t.grid = grid;
  t.num_vision_tokens = grid.cells();
  t.feature_dim = D;
  const std::uint32_t M = grid.cells();
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  t.attn.resize(static_cast<std::size_t>(L) * H * T * M);
  for (std::size_t r = 0; r < static_cast<std::size_t>(L) * H * T; ++r) {
    double total = 0.0;
    std::vector<float> row(M);
    for (auto& x : row) {
      x = u(rng) * u(rng);
      total += x;
    }
    float mass = 0.2f + 0.7f * u(rng);
    for (std::uint32_t i = 0; i < M; ++i)
      t.attn[r * M + i] = static_cast<float>(row[i] / total * mass);
  }
  std::normal_distribution<float> n(0.0f, 1.0f);
  t.feature_grid.resize(static_cast<std::size_t>(M) * D);
  for (auto& x : t.feature_grid) x = n(rng);
  t.saliency.resize(M);
  for (auto& x : t.saliency) x = u(rng);
  static const char* words[] = {" the", " cat", " sat", " on", " a", " mat"};
  for (std::uint32_t s = 0; s < T; ++s) t.tokens.push_back(words[rng() % 6]);
  // Cut points.
  std::vector<std::uint32_t> cuts;
  for (std::uint32_t s = 1; s < T; ++s) cuts.push_back(s);
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(std::min<std::size_t>(cuts.size(), spans - 1));
  std::sort(cuts.begin(), cuts.end());
  std::uint32_t start = 0;
  for (auto c : cuts) {
    t.spans.push_back({start, c, "s" + std::to_string(t.spans.size())});
    start = c;
  }
  t.spans.push_back({start, T, "s" + std::to_string(t.spans.size())});
  return t;
}

inline attrstream::RegionPartition random_partition(std::mt19937_64& rng, GridDims grid,
                                                    std::size_t k) {
  std::vector<std::uint32_t> labels(grid.cells());
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<std::uint32_t>(i < k ? i : rng() % k);
  std::shuffle(labels.begin(), labels.end(), rng);
  return attrstream::RegionPartition::from_assignment(attrstream::PartitionMethod::tokenwise,
                                                      grid, labels);
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Textbook Pearson in long double.
inline double naive_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// Rank by counting: 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> naive_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double y : x) {
      if (y < x[i]) less += 1;
      if (y == x[i]) equal += 1;
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

inline double naive_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return naive_pearson(naive_ranks(x), naive_ranks(y));
}

// Pairwise AUC: failures count as positives.
inline double naive_auc(const std::vector<double>& v, const std::vector<std::uint8_t>& pos) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        wins += v[i] > v[j] ? 1.0 : v[i] == v[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

}  // namespace testing_support
