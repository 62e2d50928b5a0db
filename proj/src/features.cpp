#include "attrstream/features.hpp"

#include <algorithm>

#include "attrstream/error.hpp"

namespace attrstream {

std::vector<double> SpanFeatureMatrix::column_sums() const {
  std::vector<double> out(dim(), 0.0);
  for (std::size_t k = 0; k < num_regions; ++k)
    for (std::size_t f = 0; f < dim(); ++f) out[f] += at(k, f);
  return out;
}

std::vector<int> MaskSample::signed_view() const {
  std::vector<int> out(retained.size());
  for (std::size_t k = 0; k < retained.size(); ++k) out[k] = retained[k] ? 1 : -1;
  return out;
}

std::vector<std::uint8_t> MaskSample::ablated() const {
  std::vector<std::uint8_t> out(retained.size());
  for (std::size_t k = 0; k < retained.size(); ++k) out[k] = retained[k] ? 0 : 1;
  return out;
}

std::size_t MaskSample::ablated_count() const {
  return static_cast<std::size_t>(std::count(retained.begin(), retained.end(), 0));
}

MaskSample MaskSample::from_signed(std::span<const int> signs) {
  MaskSample m;
  m.retained.reserve(signs.size());
  for (int v : signs) {
    if (v != 1 && v != -1) throw Error(ErrorKind::invalid_argument, "signed mask entries must be +1 or -1");
    m.retained.push_back(v == 1 ? 1 : 0);
  }
  return m;
}

SpanAccumulator::SpanAccumulator(const RegionPartition& partition, std::uint32_t num_layers,
                                 std::uint32_t num_heads)
    : region_of_(partition.assignment().begin(), partition.assignment().end()),
      region_sizes_(partition.num_regions()),
      num_layers_(num_layers),
      num_heads_(num_heads),
      sums_(partition.num_regions() * num_layers * num_heads, 0.0),
      scratch_(partition.num_regions(), 0.0) {
  for (std::size_t k = 0; k < region_sizes_.size(); ++k) region_sizes_[k] = partition.region_size(k);
}

void SpanAccumulator::fold(std::span<const float> rows) {
  const std::size_t m = region_of_.size();
  const std::size_t lh_count = static_cast<std::size_t>(num_layers_) * num_heads_;
  const std::size_t k_count = region_sizes_.size();
  if (rows.size() != lh_count * m) {
    throw Error(ErrorKind::dimension, "attention rows do not match L*H*M");
  }
  const std::uint32_t* assign = region_of_.data();
  for (std::size_t lh = 0; lh < lh_count; ++lh) {
    std::fill(scratch_.begin(), scratch_.end(), 0.0);
    const float* row = rows.data() + lh * m;
    for (std::size_t i = 0; i < m; ++i) scratch_[assign[i]] += row[i];
    for (std::size_t k = 0; k < k_count; ++k) sums_[k * lh_count + lh] += scratch_[k];
  }
  ++tokens_;
}

SpanFeatureMatrix SpanAccumulator::finalize(const Span& span) const {
  if (tokens_ == 0) throw Error(ErrorKind::invalid_argument, "cannot finalize an empty span");
  SpanFeatureMatrix f;
  f.num_layers = num_layers_;
  f.num_heads = num_heads_;
  f.num_regions = region_sizes_.size();
  f.span = span;
  f.values.resize(sums_.size());
  const std::size_t lh_count = f.dim();
  for (std::size_t k = 0; k < f.num_regions; ++k) {
    const double denom =
        static_cast<double>(tokens_) * static_cast<double>(region_sizes_[k]);
    for (std::size_t lh = 0; lh < lh_count; ++lh)
      f.values[k * lh_count + lh] = sums_[k * lh_count + lh] / denom;
  }
  return f;
}

void SpanAccumulator::reset() {
  std::fill(sums_.begin(), sums_.end(), 0.0);
  tokens_ = 0;
}

SpanFeatureMatrix pool_span_region(const AttentionTrace& trace, const Span& span,
                                   const RegionPartition& partition) {
  if (span.start >= span.end) throw Error(ErrorKind::invalid_argument, "empty span");
  if (span.end > trace.num_steps) throw Error(ErrorKind::invalid_argument, "span exceeds trace length");
  if (partition.num_tokens() != trace.num_vision_tokens) {
    throw Error(ErrorKind::dimension, "partition token count does not match trace");
  }
  SpanAccumulator acc(partition, trace.num_layers, trace.num_heads);
  std::vector<float> rows(trace.heads_total() * trace.num_vision_tokens);
  for (std::uint32_t t = span.start; t < span.end; ++t) {
    trace.gather_step(t, rows);
    acc.fold(rows);
  }
  return acc.finalize(span);
}

std::vector<double> combine_signed(const SpanFeatureMatrix& features, std::span<const int> signs) {
  if (signs.size() != features.num_regions) {
    throw Error(ErrorKind::dimension, "signed mask length does not match region count");
  }
  std::vector<double> out(features.dim(), 0.0);
  for (std::size_t k = 0; k < features.num_regions; ++k) {
    const double v = signs[k];
    const auto row = features.row(k);
    for (std::size_t f = 0; f < out.size(); ++f) out[f] += v * row[f];
  }
  return out;
}

std::vector<double> combine_binary(const SpanFeatureMatrix& features,
                                   std::span<const std::uint8_t> bits) {
  if (bits.size() != features.num_regions) {
    throw Error(ErrorKind::dimension, "binary mask length does not match region count");
  }
  std::vector<double> out(features.dim(), 0.0);
  for (std::size_t k = 0; k < features.num_regions; ++k) {
    if (!bits[k]) continue;
    const auto row = features.row(k);
    for (std::size_t f = 0; f < out.size(); ++f) out[f] += row[f];
  }
  return out;
}

}  // namespace attrstream
