#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrstream/estimator.hpp"
#include "attrstream/metrics.hpp"
#include "attrstream/oracle.hpp"

namespace attrstream {

struct EvalOptions {
  std::size_t top_k = 5;
  std::uint32_t masks = 32;  // held-out random masks for R^2
  std::uint64_t seed = 42;
  std::string dataset = "toy";
};

/// Metrics of one scoring method on one example.
struct ExampleMetrics {
  std::uint32_t example = 0;
  std::vector<double> lds;         // per span, NaN when undefined
  std::vector<double> top_k_drop;  // per span
  std::vector<double> r2;          // per span, NaN when undefined
};

struct MethodReport {
  std::string method;
  std::vector<ExampleMetrics> examples;
  Aggregate lds_pooled;      // over every (example, span) pair
  Aggregate lds_by_example;  // span means first, then over examples
  Aggregate top_k_drop;
  Aggregate r2;
};

struct EvalReport {
  std::string dataset;
  std::size_t top_k = 5;
  std::uint32_t examples = 0;
  std::uint32_t spans = 0;
  std::uint64_t passes = 0;
  std::vector<MethodReport> methods;  // estimator, attention, random

  const MethodReport& method(const std::string& name) const;
};

/// Everything evaluation needs about one example.
struct EvalCase {
  ToyExample example;
  ForwardResult baseline;
  AttentionTrace trace;
  RegionPartition partition;
};

/// Regenerates an example and its unablated pass. Planted models get the
/// plant attached against `partition` (or a freshly built one).
EvalCase prepare_case(const ToyModel& model, std::uint32_t index, const PartitionOptions& options);
EvalCase prepare_case(const ToyModel& model, std::uint32_t index, RegionPartition partition);

EvalReport evaluate(const ToyModel& model, std::span<const EvalCase> cases,
                    const EstimatorWeights& weights, const EvalOptions& options);

/// Convenience: evaluates `count` examples starting at `first`.
EvalReport evaluate(const ToyModel& model, std::uint32_t first, std::uint32_t count,
                    const PartitionOptions& partition, const EstimatorWeights& weights,
                    const EvalOptions& options);

}  // namespace attrstream
