#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attrstream {

enum class Outcome { success, reasoning_failure, hallucination, unknown };

std::string_view to_string(Outcome outcome);
Outcome parse_outcome(std::string_view name);
inline bool is_failure(Outcome o) {
  return o == Outcome::reasoning_failure || o == Outcome::hallucination;
}

using Steps = std::vector<std::vector<double>>;

struct Trajectory {
  std::string id;
  Steps effects;  // one region-effect vector per step
  Outcome outcome = Outcome::unknown;
};

struct CanonicalTrajectory {
  std::vector<std::size_t> regions;  // kept region indices, in coordinate order
  Steps steps;                       // each of length R
};

/// Keeps the R regions with the largest mean |effect| (ties to the lower
/// index), in that order, zero-padding when fewer than R exist.
CanonicalTrajectory canonicalize(const Steps& effects, std::size_t r = 32);

struct SymmetricEigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // row c is the eigenvector of values[c]
  std::size_t sweeps = 0;
};

/// Cyclic Jacobi on a symmetric n×n row-major matrix. Sweeps until the
/// off-diagonal Frobenius norm falls below tol times the matrix norm.
SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n, double tol = 1e-10,
                            std::size_t max_sweeps = 100);

struct PcaFit {
  std::size_t dim = 0;
  std::vector<double> mean;
  Steps axes;                     // unit vectors, zero for missing components
  std::vector<double> variances;  // per component
  std::vector<double> explained;  // variance ratios
};

/// Covariance PCA over the given steps. The largest-magnitude loading of
/// every axis is positive. Components beyond the data's rank are zero.
PcaFit pca_fit(const Steps& steps, std::size_t dims = 3);
/// One fit over the steps of every trajectory.
PcaFit pca_fit_pooled(std::span<const CanonicalTrajectory> trajectories, std::size_t dims = 3);
Steps pca_apply(const PcaFit& fit, const Steps& steps);

struct Projection {
  Steps points;
  std::vector<double> explained;
};
Projection pca_project(const Steps& steps, std::size_t dims = 3);

double path_length(const Steps& points);

struct Tortuosity {
  double value = 1.0;  // meaningful only when !closed_path
  bool closed_path = false;
  double path_length = 0.0;
  double displacement = 0.0;
};
Tortuosity tortuosity(const Steps& points);

/// Herfindahl index of positive-effect shares (|effect| shares when nothing
/// is positive).
double concentration(std::span<const double> effects);

/// Mann-Whitney AUC with failures as the positive class; ties count 1/2.
double failure_auc(std::span<const double> values, std::span<const std::uint8_t> failed);

struct AucPoint {
  double fraction = 0.0;
  double auc = 0.0;
  std::size_t used = 0;  // trajectories with an open path at this fraction
};

/// Tortuosity-based failure AUC when every trajectory is cut to the first
/// ceil(fraction * steps) steps (at least two).
std::vector<AucPoint> failure_auc_curve(std::span<const Steps> projected,
                                        std::span<const std::uint8_t> failed,
                                        std::span<const double> fractions);

struct Distribution {
  std::size_t count = 0;
  double mean = 0.0, std = 0.0, min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};
/// Quartiles by linear interpolation between order statistics.
Distribution describe(std::span<const double> values);

}  // namespace attrstream
