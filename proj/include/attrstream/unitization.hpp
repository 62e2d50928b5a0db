#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attrstream/trace.hpp"

namespace attrstream {

enum class PartitionMethod { agglomerative, tokenwise, random_blocks, voronoi, kmeans };

std::string_view to_string(PartitionMethod method);
PartitionMethod parse_partition_method(std::string_view name);

/// Disjoint cover of the M vision tokens by K non-empty regions.
///
/// Regions are numbered in order of their smallest member token, so two
/// partitions with the same grouping compare equal regardless of how the
/// producing algorithm labelled them.
class RegionPartition {
 public:
  RegionPartition() = default;

  /// Builds a partition from an arbitrary per-token labelling. Labels are
  /// renumbered canonically; unused labels disappear.
  static RegionPartition from_assignment(PartitionMethod method, GridDims grid,
                                         std::span<const std::uint32_t> labels);

  /// Builds a partition from a K×M row-major 0/1 matrix, rejecting anything
  /// that is not a disjoint cover with non-empty rows.
  static RegionPartition from_membership(PartitionMethod method, GridDims grid,
                                         std::size_t num_regions,
                                         std::span<const std::uint8_t> membership);

  PartitionMethod method() const { return method_; }
  GridDims grid() const { return grid_; }
  std::size_t num_regions() const { return members_.size(); }
  std::size_t num_tokens() const { return region_of_.size(); }

  std::uint32_t region_of(std::size_t token) const { return region_of_[token]; }
  std::span<const std::uint32_t> assignment() const { return region_of_; }
  std::span<const std::uint32_t> members(std::size_t region) const {
    return members_[region];
  }
  std::size_t region_size(std::size_t region) const { return members_[region].size(); }

  /// K×M row-major membership matrix.
  std::vector<std::uint8_t> membership() const;

  bool operator==(const RegionPartition& other) const {
    return region_of_ == other.region_of_;
  }

 private:
  PartitionMethod method_ = PartitionMethod::tokenwise;
  GridDims grid_;
  std::vector<std::uint32_t> region_of_;
  std::vector<std::vector<std::uint32_t>> members_;
};

/// Column/row checks on a raw membership matrix. Empty result means valid.
std::vector<std::string> check_membership(std::size_t num_regions, std::size_t num_tokens,
                                          std::span<const std::uint8_t> membership);

struct AgglomerativeOptions {
  double tau = 0.5;
  std::optional<std::size_t> k_min;
  std::optional<std::size_t> k_max;
};

/// Feature rows are read from a row-major [M][D] array.
struct FeatureView {
  std::span<const float> values;
  std::size_t rows = 0;
  std::size_t dim = 0;

  std::span<const float> row(std::size_t i) const { return values.subspan(i * dim, dim); }
};

FeatureView feature_view(const AttentionTrace& trace);

/// Bottom-up Ward clustering on L2-normalized features.
///
/// The merge cost of clusters A and B is the increase in within-cluster sum
/// of squares, |A||B|/(|A|+|B|) * ||mean(A) - mean(B)||^2. On unit vectors a
/// singleton pair costs exactly 1 - cos(a, b), so `tau` reads as a cosine
/// distance threshold. Merging stops once the cheapest merge exceeds `tau`
/// (subject to the optional K clamps). Ties go to the lowest (i, j) pair.
RegionPartition cluster_agglomerative(const FeatureView& features, GridDims grid,
                                      const AgglomerativeOptions& options = {});

/// Merge costs in the order merges were applied; exposed for tests.
std::vector<double> agglomerative_merge_costs(const FeatureView& features);

RegionPartition partition_tokenwise(GridDims grid);

/// K axis-aligned rectangles produced by K-1 random guillotine cuts.
RegionPartition partition_random_blocks(GridDims grid, std::size_t k, std::uint64_t seed);

/// Nearest-site assignment to a near-square lattice of K sites. The lattice
/// is r×c with r the largest divisor of K not above sqrt(K), oriented so
/// the longer side runs along the longer grid axis.
RegionPartition partition_voronoi(GridDims grid, std::size_t k);

struct KMeansResult {
  RegionPartition partition;
  std::vector<double> centroids;  // [K][D]
  double inertia = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Lloyd iterations on L2-normalized features with seeded farthest-point
/// initialization. Empty clusters take the point farthest from its centroid.
KMeansResult cluster_kmeans(const FeatureView& features, GridDims grid, std::size_t k,
                            std::uint64_t seed, std::size_t max_iter = 100);

/// Unit-normalizes every row; throws if a row has zero norm or is non-finite.
std::vector<double> normalize_rows(const FeatureView& features);

}  // namespace attrstream
