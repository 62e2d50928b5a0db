#include "attrstream/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attrstream/error.hpp"
#include "attrstream/metrics.hpp"

namespace attrstream {

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::success: return "success";
    case Outcome::reasoning_failure: return "reasoning_failure";
    case Outcome::hallucination: return "hallucination";
    case Outcome::unknown: break;
  }
  return "unknown";
}

Outcome parse_outcome(std::string_view name) {
  if (name == "success") return Outcome::success;
  if (name == "reasoning_failure") return Outcome::reasoning_failure;
  if (name == "hallucination") return Outcome::hallucination;
  if (name == "unknown") return Outcome::unknown;
  throw Error(ErrorKind::format, "unknown outcome label: " + std::string(name));
}

CanonicalTrajectory canonicalize(const Steps& effects, std::size_t r) {
  if (effects.empty()) throw Error(ErrorKind::invalid_argument, "empty trajectory");
  const std::size_t k = effects.front().size();
  for (const auto& e : effects)
    if (e.size() != k) throw Error(ErrorKind::dimension, "steps disagree on region count");
  std::vector<double> mean_abs(k, 0.0);
  for (const auto& e : effects)
    for (std::size_t j = 0; j < k; ++j) mean_abs[j] += std::abs(e[j]);
  for (auto& m : mean_abs) m /= static_cast<double>(effects.size());

  CanonicalTrajectory out;
  out.regions.resize(k);
  std::iota(out.regions.begin(), out.regions.end(), 0);
  std::stable_sort(out.regions.begin(), out.regions.end(),
                   [&](std::size_t a, std::size_t b) { return mean_abs[a] > mean_abs[b]; });
  out.regions.resize(std::min(k, r));
  for (const auto& e : effects) {
    std::vector<double> row(r, 0.0);
    for (std::size_t c = 0; c < out.regions.size(); ++c) row[c] = e[out.regions[c]];
    out.steps.push_back(std::move(row));
  }
  return out;
}

SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n, double tol,
                            std::size_t max_sweeps) {
  if (a.size() != n * n) throw Error(ErrorKind::dimension, "jacobi: matrix is not n x n");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(s);
  };
  double total = 0.0;
  for (double x : a) total += x * x;
  const double limit = tol * std::sqrt(total);

  SymmetricEigen out;
  while (out.sweeps < max_sweeps && off_norm() > limit) {
    ++out.sweeps;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (apq == 0.0) continue;
        double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
  for (auto c : order) {
    out.values.push_back(a[c * n + c]);
    for (std::size_t k = 0; k < n; ++k) out.vectors.push_back(v[k * n + c]);
  }
  return out;
}

PcaFit pca_fit(const Steps& steps, std::size_t dims) {
  if (steps.size() < 2) throw Error(ErrorKind::invalid_argument, "PCA needs at least two steps");
  const std::size_t d = steps.front().size();
  for (const auto& s : steps)
    if (s.size() != d) throw Error(ErrorKind::dimension, "steps disagree on dimension");
  PcaFit fit;
  fit.dim = d;
  fit.mean.assign(d, 0.0);
  for (const auto& s : steps)
    for (std::size_t j = 0; j < d; ++j) fit.mean[j] += s[j];
  for (auto& m : fit.mean) m /= static_cast<double>(steps.size());
  std::vector<double> cov(d * d, 0.0);
  for (const auto& s : steps)
    for (std::size_t i = 0; i < d; ++i) {
      double di = s[i] - fit.mean[i];
      for (std::size_t j = i; j < d; ++j) cov[i * d + j] += di * (s[j] - fit.mean[j]);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      cov[i * d + j] /= static_cast<double>(steps.size() - 1);
      cov[j * d + i] = cov[i * d + j];
    }
  auto eig = jacobi_eigen(cov, d);
  double trace = 0.0;
  for (double ev : eig.values) trace += std::max(ev, 0.0);
  const double floor = 1e-12 * std::max(trace, 0.0);

  for (std::size_t c = 0; c < dims; ++c) {
    std::vector<double> axis(d, 0.0);
    double var = 0.0;
    if (c < d && eig.values[c] > floor && eig.values[c] > 0.0) {
      var = eig.values[c];
      axis.assign(eig.vectors.begin() + static_cast<std::ptrdiff_t>(c * d),
                  eig.vectors.begin() + static_cast<std::ptrdiff_t>((c + 1) * d));
      std::size_t big = 0;
      for (std::size_t j = 1; j < d; ++j)
        if (std::abs(axis[j]) > std::abs(axis[big])) big = j;
      if (axis[big] < 0)
        for (auto& x : axis) x = -x;
    }
    fit.axes.push_back(std::move(axis));
    fit.variances.push_back(var);
    fit.explained.push_back(trace > 0.0 ? var / trace : 0.0);
  }
  return fit;
}

PcaFit pca_fit_pooled(std::span<const CanonicalTrajectory> trajectories, std::size_t dims) {
  Steps all;
  for (const auto& t : trajectories) all.insert(all.end(), t.steps.begin(), t.steps.end());
  return pca_fit(all, dims);
}

Steps pca_apply(const PcaFit& fit, const Steps& steps) {
  Steps out;
  out.reserve(steps.size());
  for (const auto& s : steps) {
    if (s.size() != fit.dim) throw Error(ErrorKind::dimension, "step dimension differs from fit");
    std::vector<double> p(fit.axes.size(), 0.0);
    for (std::size_t c = 0; c < fit.axes.size(); ++c)
      for (std::size_t j = 0; j < fit.dim; ++j) p[c] += (s[j] - fit.mean[j]) * fit.axes[c][j];
    out.push_back(std::move(p));
  }
  return out;
}

Projection pca_project(const Steps& steps, std::size_t dims) {
  auto fit = pca_fit(steps, dims);
  return {pca_apply(fit, steps), fit.explained};
}

namespace {
double distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::dimension, "points disagree on dimension");
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}
}  // namespace

double path_length(const Steps& points) {
  if (points.size() < 2) throw Error(ErrorKind::invalid_argument, "path needs at least two points");
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) total += distance(points[i - 1], points[i]);
  return total;
}

Tortuosity tortuosity(const Steps& points) {
  Tortuosity t;
  t.path_length = path_length(points);
  t.displacement = distance(points.front(), points.back());
  if (t.displacement == 0.0) {
    t.closed_path = true;
    return t;
  }
  t.value = t.path_length / t.displacement;
  return t;
}

double concentration(std::span<const double> effects) {
  if (effects.empty()) throw Error(ErrorKind::invalid_argument, "empty effect vector");
  double pos = 0.0, abs_total = 0.0;
  for (double e : effects) {
    if (!std::isfinite(e)) throw Error(ErrorKind::invalid_argument, "non-finite effect");
    pos += std::max(e, 0.0);
    abs_total += std::abs(e);
  }
  if (abs_total == 0.0) throw Error(ErrorKind::degenerate, "concentration of an all-zero vector");
  const bool use_pos = pos > 0.0;
  const double total = use_pos ? pos : abs_total;
  double h = 0.0;
  for (double e : effects) {
    double share = (use_pos ? std::max(e, 0.0) : std::abs(e)) / total;
    h += share * share;
  }
  return h;
}

double failure_auc(std::span<const double> values, std::span<const std::uint8_t> failed) {
  if (values.size() != failed.size()) throw Error(ErrorKind::dimension, "auc: lengths differ");
  auto ranks = average_ranks(values);
  double n_pos = 0, n_neg = 0, rank_pos = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (failed[i]) {
      n_pos += 1;
      rank_pos += ranks[i];
    } else {
      n_neg += 1;
    }
  }
  if (n_pos == 0 || n_neg == 0)
    throw Error(ErrorKind::degenerate, "auc needs both failures and successes");
  return (rank_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

std::vector<AucPoint> failure_auc_curve(std::span<const Steps> projected,
                                        std::span<const std::uint8_t> failed,
                                        std::span<const double> fractions) {
  if (projected.size() != failed.size()) throw Error(ErrorKind::dimension, "auc curve: lengths differ");
  std::vector<AucPoint> out;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorKind::invalid_argument, "fraction must be in (0, 1]");
    std::vector<double> values;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < projected.size(); ++i) {
      const auto& pts = projected[i];
      if (pts.size() < 2) continue;
      auto keep = static_cast<std::size_t>(std::ceil(f * static_cast<double>(pts.size())));
      keep = std::clamp<std::size_t>(keep, 2, pts.size());
      Steps cut(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(keep));
      auto t = tortuosity(cut);
      if (t.closed_path) continue;
      values.push_back(t.value);
      labels.push_back(failed[i]);
    }
    AucPoint p;
    p.fraction = f;
    p.used = values.size();
    try {
      p.auc = failure_auc(values, labels);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
      p.auc = std::nan("");
    }
    out.push_back(p);
  }
  return out;
}

Distribution describe(std::span<const double> values) {
  Distribution d;
  d.count = values.size();
  if (values.empty()) return d;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    double pos = p * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  auto agg = aggregate(values);
  d.mean = agg.mean;
  d.std = agg.std;
  d.min = v.front();
  d.max = v.back();
  d.q1 = q(0.25);
  d.median = q(0.5);
  d.q3 = q(0.75);
  return d;
}

}  // namespace attrstream
