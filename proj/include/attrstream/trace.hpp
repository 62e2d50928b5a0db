#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace attrstream {

/// Half-open token range [start, end) of generated tokens.
struct Span {
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  std::string label;

  std::uint32_t size() const { return end - start; }
  bool contains(std::uint32_t t) const { return t >= start && t < end; }
  bool operator==(const Span&) const = default;
};

struct GridDims {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;

  std::uint32_t cells() const { return rows * cols; }
  bool operator==(const GridDims&) const = default;
};

/// Cached text-to-vision attention for one generation, plus the patch
/// features and saliency prior of the image it attended to.
///
/// `attn` is laid out [layer][head][step][vision_token]. Rows are
/// sub-distributions: mass on non-vision positions is not stored.
struct AttentionTrace {
  std::uint32_t num_layers = 0;
  std::uint32_t num_heads = 0;
  std::uint32_t num_steps = 0;
  std::uint32_t num_vision_tokens = 0;
  std::uint32_t feature_dim = 0;
  GridDims grid;
  std::vector<std::string> tokens;
  std::vector<float> attn;
  std::vector<float> feature_grid;  // [M][D]
  std::vector<float> saliency;      // [M]
  std::vector<Span> spans;

  std::size_t heads_total() const {
    return static_cast<std::size_t>(num_layers) * num_heads;
  }
  std::size_t row_offset(std::uint32_t layer, std::uint32_t head,
                         std::uint32_t step) const {
    return ((static_cast<std::size_t>(layer) * num_heads + head) * num_steps +
            step) *
           num_vision_tokens;
  }
  std::span<const float> row(std::uint32_t layer, std::uint32_t head,
                             std::uint32_t step) const {
    return {attn.data() + row_offset(layer, head, step), num_vision_tokens};
  }
  float attention(std::uint32_t layer, std::uint32_t head, std::uint32_t step,
                  std::uint32_t token) const {
    return attn[row_offset(layer, head, step) + token];
  }
  /// Gathers every (layer, head) row of one step into `out`, laid out
  /// [layer*H + head][vision_token].
  void gather_step(std::uint32_t step, std::span<float> out) const;

  bool operator==(const AttentionTrace&) const = default;
};

struct TraceViolation {
  std::string field;
  std::vector<std::size_t> index;
  std::string message;
};

std::vector<TraceViolation> validate_trace(const AttentionTrace& trace);

inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr float kRowSumTolerance = 1e-4f;

/// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xorout).
std::uint64_t crc64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_trace(const AttentionTrace& trace);
AttentionTrace decode_trace(std::span<const std::uint8_t> bytes);

std::size_t save_trace(const AttentionTrace& trace, std::ostream& sink);
AttentionTrace load_trace(std::istream& source);

void save_trace_file(const AttentionTrace& trace, const std::string& path);
AttentionTrace load_trace_file(const std::string& path);

}  // namespace attrstream
