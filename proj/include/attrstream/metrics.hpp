#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "attrstream/oracle.hpp"

namespace attrstream {

/// 1-based ranks, tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

/// Pearson correlation of average ranks. Throws ErrorKind::degenerate for a
/// constant argument.
double spearman(std::span<const double> x, std::span<const double> y);

/// Rank agreement between predicted and actual per-region effects of one
/// (example, span). Needs at least two regions.
double lds(std::span<const double> predicted, std::span<const double> actual);

/// Indices of the k highest scores; ties go to the lower index. k is
/// clamped to the number of regions.
std::vector<std::size_t> top_k_regions(std::span<const double> scores, std::size_t k);

/// Delta of one forward with the union of the top-k regions ablated.
double top_k_drop(const ToyModel& model, const ToyExample& example, const ForwardResult& baseline,
                  const RegionPartition& partition, const Span& span,
                  std::span<const double> scores, std::size_t k = 5);

/// Coefficient of determination of the least-squares line through the
/// predictions. Zero-variance predictions explain nothing (0); zero-variance
/// targets throw ErrorKind::degenerate.
double r_squared(std::span<const double> predicted, std::span<const double> actual);

struct FidelityPoint {
  double progress = 0.0;  // normalized step index in [0, 1]
  double predicted = 0.0;
  double actual = 0.0;
};

struct FidelityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::optional<double> r2;  // missing when the bin is empty or degenerate
};

std::vector<FidelityBin> fidelity_curve(std::span<const FidelityPoint> points, std::size_t bins);

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};
/// Ignores NaN entries.
Aggregate aggregate(std::span<const double> values);

}  // namespace attrstream
