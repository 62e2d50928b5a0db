#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "attrstream/trace.hpp"
#include "attrstream/unitization.hpp"

namespace attrstream {

/// Pooled span×region attention, F[k][layer*H + head].
struct SpanFeatureMatrix {
  std::uint32_t num_layers = 0;
  std::uint32_t num_heads = 0;
  std::size_t num_regions = 0;
  Span span;
  std::vector<double> values;  // [K][L*H]

  std::size_t dim() const { return static_cast<std::size_t>(num_layers) * num_heads; }
  std::span<const double> row(std::size_t k) const {
    return std::span<const double>(values).subspan(k * dim(), dim());
  }
  double at(std::size_t k, std::size_t feature) const { return values[k * dim() + feature]; }
  std::vector<double> column_sums() const;
};

/// A region mask. `retained[k] == 1` keeps region k; the oracle ablates the
/// complement.
struct MaskSample {
  std::vector<std::uint8_t> retained;

  std::size_t size() const { return retained.size(); }
  /// +1 for retained, -1 for ablated.
  std::vector<int> signed_view() const;
  /// 1 for ablated regions.
  std::vector<std::uint8_t> ablated() const;
  std::size_t ablated_count() const;

  static MaskSample retain_all(std::size_t k) { return {std::vector<std::uint8_t>(k, 1)}; }
  static MaskSample from_signed(std::span<const int> signs);
  bool operator==(const MaskSample&) const = default;
};

/// Running per-span sums of token attention into regions. Folding a token
/// touches only preallocated storage, so state stays O(K*L*H) however long
/// the span grows.
class SpanAccumulator {
 public:
  SpanAccumulator(const RegionPartition& partition, std::uint32_t num_layers,
                  std::uint32_t num_heads);

  /// `rows` holds one step's attention laid out [layer*H + head][token].
  void fold(std::span<const float> rows);
  SpanFeatureMatrix finalize(const Span& span) const;
  void reset();

  std::size_t tokens_folded() const { return tokens_; }
  std::size_t state_size() const { return sums_.size() + scratch_.size(); }

 private:
  std::vector<std::uint32_t> region_of_;
  std::vector<std::size_t> region_sizes_;
  std::uint32_t num_layers_;
  std::uint32_t num_heads_;
  std::vector<double> sums_;     // [K][L*H]
  std::vector<double> scratch_;  // [K]
  std::size_t tokens_ = 0;
};

/// Mean attention over the span's steps and each region's tokens.
SpanFeatureMatrix pool_span_region(const AttentionTrace& trace, const Span& span,
                                   const RegionPartition& partition);

/// Sum_k v_k * F[k] with v in {-1,+1}^K.
std::vector<double> combine_signed(const SpanFeatureMatrix& features, std::span<const int> signs);

/// Sum of the rows whose bit is set.
std::vector<double> combine_binary(const SpanFeatureMatrix& features,
                                   std::span<const std::uint8_t> bits);

}  // namespace attrstream
