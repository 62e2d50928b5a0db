#include "attrstream/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attrstream/error.hpp"
#include "attrstream/estimator.hpp"

namespace attrstream {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) ranks[order[q]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw Error(ErrorKind::dimension, "spearman: lengths " + std::to_string(x.size()) + " and " +
                                          std::to_string(y.size()));
  if (x.size() < 2) throw Error(ErrorKind::invalid_argument, "spearman needs at least two points");
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double lds(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() < 2)
    throw Error(ErrorKind::invalid_argument, "lds needs at least two regions");
  return spearman(predicted, actual);
}

std::vector<std::size_t> top_k_regions(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

double top_k_drop(const ToyModel& model, const ToyExample& example, const ForwardResult& baseline,
                  const RegionPartition& partition, const Span& span,
                  std::span<const double> scores, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::invalid_argument, "top-k needs k >= 1");
  if (scores.size() != partition.num_regions())
    throw Error(ErrorKind::dimension, "top-k: " + std::to_string(scores.size()) +
                                          " scores for " +
                                          std::to_string(partition.num_regions()) + " regions");
  auto chosen = top_k_regions(scores, k);
  auto mask = token_mask_for_regions(partition, chosen);
  return ablation_effect(model, example, baseline, span, mask).span_delta;
}

double r_squared(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size())
    throw Error(ErrorKind::dimension, "r_squared: lengths differ");
  if (predicted.size() < 2) throw Error(ErrorKind::invalid_argument, "r_squared needs two points");
  const double n = static_cast<double>(predicted.size());
  double mx = std::accumulate(predicted.begin(), predicted.end(), 0.0) / n;
  double my = std::accumulate(actual.begin(), actual.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double dx = predicted[i] - mx, dy = actual[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (syy == 0.0) throw Error(ErrorKind::degenerate, "r_squared: target has zero variance");
  if (sxx == 0.0) return 0.0;
  double slope = sxy / sxx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double r = actual[i] - (my + slope * (predicted[i] - mx));
    ss_res += r * r;
  }
  return std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
}

std::vector<FidelityBin> fidelity_curve(std::span<const FidelityPoint> points, std::size_t bins) {
  if (bins == 0) throw Error(ErrorKind::invalid_argument, "fidelity curve needs bins >= 1");
  if (points.size() < bins)
    throw Error(ErrorKind::invalid_argument, "fidelity curve needs at least as many steps as bins");
  std::vector<std::vector<double>> pred(bins), act(bins);
  for (const auto& p : points) {
    if (!(p.progress >= 0.0 && p.progress <= 1.0))
      throw Error(ErrorKind::invalid_argument, "progress must lie in [0, 1]");
    auto b = std::min(bins - 1, static_cast<std::size_t>(p.progress * static_cast<double>(bins)));
    pred[b].push_back(p.predicted);
    act[b].push_back(p.actual);
  }
  std::vector<FidelityBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = static_cast<double>(b) / static_cast<double>(bins);
    out[b].upper = static_cast<double>(b + 1) / static_cast<double>(bins);
    out[b].count = pred[b].size();
    if (pred[b].size() < 2) continue;
    try {
      out[b].r2 = r_squared(pred[b], act[b]);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
    }
  }
  return out;
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  double sum = 0.0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++a.count;
    }
  if (a.count == 0) return a;
  a.mean = sum / static_cast<double>(a.count);
  if (a.count > 1) {
    double ss = 0.0;
    for (double v : values)
      if (!std::isnan(v)) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(a.count - 1));
  }
  return a;
}

}  // namespace attrstream
