#include "attrstream/unitization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "attrstream/error.hpp"

namespace attrstream {

std::string_view to_string(PartitionMethod method) {
  switch (method) {
    case PartitionMethod::agglomerative: return "agglomerative";
    case PartitionMethod::tokenwise: return "tokenwise";
    case PartitionMethod::random_blocks: return "random_blocks";
    case PartitionMethod::voronoi: return "voronoi";
    case PartitionMethod::kmeans: return "kmeans";
  }
  return "unknown";
}

PartitionMethod parse_partition_method(std::string_view name) {
  for (auto m : {PartitionMethod::agglomerative, PartitionMethod::tokenwise,
                 PartitionMethod::random_blocks, PartitionMethod::voronoi,
                 PartitionMethod::kmeans}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorKind::invalid_argument, "unknown partition method: " + std::string(name));
}

RegionPartition RegionPartition::from_assignment(PartitionMethod method, GridDims grid,
                                                 std::span<const std::uint32_t> labels) {
  if (labels.empty()) throw Error(ErrorKind::invalid_argument, "partition needs at least one token");
  if (grid.cells() != labels.size()) {
    throw Error(ErrorKind::dimension, "partition grid does not match token count");
  }
  RegionPartition p;
  p.method_ = method;
  p.grid_ = grid;
  p.region_of_.resize(labels.size());

  // First appearance order equals smallest-member order.
  std::vector<std::uint32_t> remap;
  std::vector<std::uint8_t> seen;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint32_t label = labels[i];
    if (label >= remap.size()) {
      remap.resize(label + 1);
      seen.resize(label + 1, 0);
    }
    if (!seen[label]) {
      seen[label] = 1;
      remap[label] = static_cast<std::uint32_t>(p.members_.size());
      p.members_.emplace_back();
    }
    const std::uint32_t region = remap[label];
    p.region_of_[i] = region;
    p.members_[region].push_back(static_cast<std::uint32_t>(i));
  }
  return p;
}

std::vector<std::string> check_membership(std::size_t num_regions, std::size_t num_tokens,
                                          std::span<const std::uint8_t> membership) {
  std::vector<std::string> problems;
  if (membership.size() != num_regions * num_tokens) {
    problems.push_back("membership matrix must hold K*M entries");
    return problems;
  }
  for (std::size_t i = 0; i < num_tokens; ++i) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < num_regions; ++k) col += membership[k * num_tokens + i];
    if (col != 1) problems.push_back("token " + std::to_string(i) + " column sums to " +
                                     std::to_string(col));
  }
  for (std::size_t k = 0; k < num_regions; ++k) {
    std::size_t row = 0;
    for (std::size_t i = 0; i < num_tokens; ++i) row += membership[k * num_tokens + i];
    if (row == 0) problems.push_back("region " + std::to_string(k) + " is empty");
  }
  for (auto v : membership) {
    if (v > 1) {
      problems.push_back("membership entries must be 0 or 1");
      break;
    }
  }
  return problems;
}

RegionPartition RegionPartition::from_membership(PartitionMethod method, GridDims grid,
                                                 std::size_t num_regions,
                                                 std::span<const std::uint8_t> membership) {
  const std::size_t m = grid.cells();
  const auto problems = check_membership(num_regions, m, membership);
  if (!problems.empty()) throw Error(ErrorKind::validation, "invalid partition: " + problems.front());
  std::vector<std::uint32_t> labels(m);
  for (std::size_t k = 0; k < num_regions; ++k)
    for (std::size_t i = 0; i < m; ++i)
      if (membership[k * m + i]) labels[i] = static_cast<std::uint32_t>(k);
  return from_assignment(method, grid, labels);
}

std::vector<std::uint8_t> RegionPartition::membership() const {
  const std::size_t m = num_tokens();
  std::vector<std::uint8_t> out(num_regions() * m, 0);
  for (std::size_t i = 0; i < m; ++i) out[region_of_[i] * m + i] = 1;
  return out;
}

FeatureView feature_view(const AttentionTrace& trace) {
  return {trace.feature_grid, trace.num_vision_tokens, trace.feature_dim};
}

std::vector<double> normalize_rows(const FeatureView& features) {
  if (features.rows == 0 || features.dim == 0) {
    throw Error(ErrorKind::invalid_argument, "feature grid must have M >= 1 and D >= 1");
  }
  if (features.values.size() != features.rows * features.dim) {
    throw Error(ErrorKind::dimension, "feature grid size does not match M*D");
  }
  std::vector<double> out(features.values.size());
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto row = features.row(i);
    double norm2 = 0.0;
    for (float v : row) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::invalid_argument,
                    "non-finite feature in row " + std::to_string(i));
      }
      norm2 += static_cast<double>(v) * v;
    }
    if (norm2 == 0.0) {
      throw Error(ErrorKind::invalid_argument,
                  "feature row " + std::to_string(i) + " has zero norm; cosine distance undefined");
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t d = 0; d < features.dim; ++d) out[i * features.dim + d] = row[d] * inv;
  }
  return out;
}

namespace {

struct WardState {
  std::size_t dim;
  std::vector<double> sums;  // per slot, [slot][dim]
  std::vector<std::size_t> sizes;
  std::vector<std::uint8_t> active;
  std::vector<double> cost;  // [slot][slot], upper triangle used
  std::vector<std::uint32_t> label;  // per token -> slot

  double merge_cost(std::size_t a, std::size_t b) const {
    const double na = static_cast<double>(sizes[a]);
    const double nb = static_cast<double>(sizes[b]);
    double d2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = sums[a * dim + d] / na - sums[b * dim + d] / nb;
      d2 += diff * diff;
    }
    return na * nb / (na + nb) * d2;
  }
};

// Runs Ward merging; `keep_going(active_count, cheapest_cost)` decides
// whether to apply the cheapest merge. Returns applied merge costs.
template <typename KeepGoing>
std::vector<double> run_ward(const FeatureView& features, WardState& st, KeepGoing keep_going) {
  const std::size_t m = features.rows;
  const auto x = normalize_rows(features);
  st.dim = features.dim;
  st.sums = x;
  st.sizes.assign(m, 1);
  st.active.assign(m, 1);
  st.label.resize(m);
  std::iota(st.label.begin(), st.label.end(), 0u);
  st.cost.assign(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) st.cost[i * m + j] = st.merge_cost(i, j);

  std::vector<double> applied;
  std::size_t active_count = m;
  while (active_count > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!st.active[i]) continue;
      for (std::size_t j = i + 1; j < m; ++j) {
        if (!st.active[j]) continue;
        const double c = st.cost[i * m + j];
        if (c < best) {
          best = c;
          bi = i;
          bj = j;
        }
      }
    }
    if (!keep_going(active_count, best)) break;

    for (std::size_t d = 0; d < st.dim; ++d) st.sums[bi * st.dim + d] += st.sums[bj * st.dim + d];
    st.sizes[bi] += st.sizes[bj];
    st.active[bj] = 0;
    for (auto& l : st.label)
      if (l == bj) l = static_cast<std::uint32_t>(bi);
    --active_count;
    applied.push_back(best);

    for (std::size_t o = 0; o < m; ++o) {
      if (!st.active[o] || o == bi) continue;
      const double c = st.merge_cost(std::min(bi, o), std::max(bi, o));
      st.cost[std::min(bi, o) * m + std::max(bi, o)] = c;
    }
  }
  return applied;
}

}  // namespace

RegionPartition cluster_agglomerative(const FeatureView& features, GridDims grid,
                                      const AgglomerativeOptions& options) {
  if (!(options.tau > 0.0)) throw Error(ErrorKind::invalid_argument, "tau must be positive");
  if (grid.cells() != features.rows) {
    throw Error(ErrorKind::dimension, "grid dims do not match feature rows");
  }
  if (options.k_min && options.k_max && *options.k_min > *options.k_max) {
    throw Error(ErrorKind::invalid_argument, "k_min exceeds k_max");
  }
  WardState st;
  run_ward(features, st, [&](std::size_t active, double cheapest) {
    if (options.k_min && active <= *options.k_min) return false;
    if (options.k_max && active > *options.k_max) return true;
    return cheapest <= options.tau;
  });
  return RegionPartition::from_assignment(PartitionMethod::agglomerative, grid, st.label);
}

std::vector<double> agglomerative_merge_costs(const FeatureView& features) {
  WardState st;
  return run_ward(features, st, [](std::size_t, double) { return true; });
}

RegionPartition partition_tokenwise(GridDims grid) {
  std::vector<std::uint32_t> labels(grid.cells());
  std::iota(labels.begin(), labels.end(), 0u);
  return RegionPartition::from_assignment(PartitionMethod::tokenwise, grid, labels);
}

RegionPartition partition_random_blocks(GridDims grid, std::size_t k, std::uint64_t seed) {
  const std::size_t m = grid.cells();
  if (k < 1 || k > m) {
    throw Error(ErrorKind::invalid_argument, "random blocks need 1 <= K <= M");
  }
  struct Rect {
    std::uint32_t r0, c0, r1, c1;  // half-open
    std::uint32_t area() const { return (r1 - r0) * (c1 - c0); }
  };
  std::mt19937_64 rng(seed);
  std::vector<Rect> rects{{0, 0, grid.rows, grid.cols}};
  while (rects.size() < k) {
    std::vector<std::size_t> splittable;
    for (std::size_t i = 0; i < rects.size(); ++i)
      if (rects[i].area() >= 2) splittable.push_back(i);
    const std::size_t pick =
        splittable[std::uniform_int_distribution<std::size_t>(0, splittable.size() - 1)(rng)];
    Rect r = rects[pick];
    const std::uint32_t h = r.r1 - r.r0, w = r.c1 - r.c0;
    bool horizontal;  // cut across rows
    if (h >= 2 && w >= 2) {
      horizontal = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    } else {
      horizontal = h >= 2;
    }
    Rect a = r, b = r;
    if (horizontal) {
      const auto cut = std::uniform_int_distribution<std::uint32_t>(1, h - 1)(rng);
      a.r1 = r.r0 + cut;
      b.r0 = r.r0 + cut;
    } else {
      const auto cut = std::uniform_int_distribution<std::uint32_t>(1, w - 1)(rng);
      a.c1 = r.c0 + cut;
      b.c0 = r.c0 + cut;
    }
    rects[pick] = a;
    rects.push_back(b);
  }
  std::vector<std::uint32_t> labels(m);
  for (std::size_t q = 0; q < rects.size(); ++q)
    for (std::uint32_t row = rects[q].r0; row < rects[q].r1; ++row)
      for (std::uint32_t col = rects[q].c0; col < rects[q].c1; ++col)
        labels[row * grid.cols + col] = static_cast<std::uint32_t>(q);
  return RegionPartition::from_assignment(PartitionMethod::random_blocks, grid, labels);
}

RegionPartition partition_voronoi(GridDims grid, std::size_t k) {
  const std::size_t m = grid.cells();
  if (k < 1 || k > m) throw Error(ErrorKind::invalid_argument, "voronoi needs 1 <= K <= M");
  std::size_t short_side = 1;
  for (std::size_t d = 1; d * d <= k; ++d)
    if (k % d == 0) short_side = d;
  const std::size_t long_side = k / short_side;
  const bool rows_longer = grid.rows > grid.cols;
  const std::size_t lat_rows = rows_longer ? long_side : short_side;
  const std::size_t lat_cols = rows_longer ? short_side : long_side;
  if (lat_rows > grid.rows || lat_cols > grid.cols) {
    throw Error(ErrorKind::invalid_argument,
                "K=" + std::to_string(k) + " has no near-square site lattice on this grid");
  }
  std::vector<double> site_r, site_c;
  for (std::size_t a = 0; a < lat_rows; ++a)
    for (std::size_t b = 0; b < lat_cols; ++b) {
      site_r.push_back((a + 0.5) * grid.rows / static_cast<double>(lat_rows) - 0.5);
      site_c.push_back((b + 0.5) * grid.cols / static_cast<double>(lat_cols) - 0.5);
    }
  std::vector<std::uint32_t> labels(m);
  std::vector<std::size_t> counts(k, 0);
  for (std::uint32_t row = 0; row < grid.rows; ++row)
    for (std::uint32_t col = 0; col < grid.cols; ++col) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t s = 0; s < k; ++s) {
        const double dr = row - site_r[s], dc = col - site_c[s];
        const double d2 = dr * dr + dc * dc;
        if (d2 < best) {
          best = d2;
          arg = static_cast<std::uint32_t>(s);
        }
      }
      labels[row * grid.cols + col] = arg;
      ++counts[arg];
    }
  if (std::find(counts.begin(), counts.end(), 0u) != counts.end()) {
    throw Error(ErrorKind::invalid_argument, "voronoi lattice left a site without tokens");
  }
  return RegionPartition::from_assignment(PartitionMethod::voronoi, grid, labels);
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

}  // namespace

KMeansResult cluster_kmeans(const FeatureView& features, GridDims grid, std::size_t k,
                            std::uint64_t seed, std::size_t max_iter) {
  const std::size_t m = features.rows, dim = features.dim;
  if (k < 1 || k > m) throw Error(ErrorKind::invalid_argument, "k-means needs 1 <= K <= M");
  if (max_iter == 0) throw Error(ErrorKind::invalid_argument, "k-means needs max_iter >= 1");
  if (grid.cells() != m) throw Error(ErrorKind::dimension, "grid dims do not match feature rows");
  const auto x = normalize_rows(features);
  auto point = [&](std::size_t i) { return x.data() + i * dim; };

  std::vector<double> centers(k * dim);
  {
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> chosen(m, 0);
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    chosen[first] = 1;
    std::copy(point(first), point(first) + dim, centers.begin());
    std::vector<double> nearest(m);
    for (std::size_t i = 0; i < m; ++i) nearest[i] = sq_dist(point(i), point(first), dim);
    for (std::size_t c = 1; c < k; ++c) {
      std::size_t arg = m;
      double best = -1.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (!chosen[i] && nearest[i] > best) {
          best = nearest[i];
          arg = i;
        }
      }
      chosen[arg] = 1;
      std::copy(point(arg), point(arg) + dim, centers.begin() + c * dim);
      for (std::size_t i = 0; i < m; ++i)
        nearest[i] = std::min(nearest[i], sq_dist(point(i), point(arg), dim));
    }
  }

  KMeansResult result;
  std::vector<std::uint32_t> assign;
  for (std::size_t it = 0; it < max_iter; ++it) {
    std::vector<std::uint32_t> next(m);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d2 = sq_dist(point(i), centers.data() + c * dim, dim);
        if (d2 < best) {
          best = d2;
          arg = static_cast<std::uint32_t>(c);
        }
      }
      next[i] = arg;
      ++counts[arg];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t arg = m;
      double far = -1.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (counts[next[i]] < 2) continue;
        const double d2 = sq_dist(point(i), centers.data() + next[i] * dim, dim);
        if (d2 > far) {
          far = d2;
          arg = i;
        }
      }
      --counts[next[arg]];
      next[arg] = static_cast<std::uint32_t>(c);
      counts[c] = 1;
      std::copy(point(arg), point(arg) + dim, centers.begin() + c * dim);
    }
    const bool changed = next != assign;
    assign = std::move(next);
    std::fill(centers.begin(), centers.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t d = 0; d < dim; ++d) centers[assign[i] * dim + d] += point(i)[d];
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t d = 0; d < dim; ++d) centers[c * dim + d] /= static_cast<double>(counts[c]);
    result.iterations = it + 1;
    if (!changed) {
      result.converged = true;
      break;
    }
  }

  result.inertia = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    result.inertia += sq_dist(point(i), centers.data() + assign[i] * dim, dim);
  result.partition = RegionPartition::from_assignment(PartitionMethod::kmeans, grid, assign);
  // Centroids follow the canonical region numbering.
  result.centroids.resize(k * dim);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t region = result.partition.region_of(i);
    std::copy(centers.begin() + assign[i] * dim, centers.begin() + (assign[i] + 1) * dim,
              result.centroids.begin() + region * dim);
  }
  return result;
}

}  // namespace attrstream
