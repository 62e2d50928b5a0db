#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrstream/estimator.hpp"
#include "attrstream/features.hpp"
#include "attrstream/trace.hpp"
#include "attrstream/unitization.hpp"

namespace attrstream {

enum class OracleMode { planted_linear, softmax_nonlinear };

std::string_view to_string(OracleMode mode);
OracleMode parse_oracle_mode(std::string_view name);

struct ToyModelSpec {
  OracleMode mode = OracleMode::softmax_nonlinear;
  std::uint32_t num_layers = 2;
  std::uint32_t num_heads = 4;
  GridDims grid{12, 12};
  std::uint32_t model_dim = 16;
  std::uint32_t feature_dim = 8;
  std::uint32_t num_classes = 12;
  std::uint32_t steps = 48;
  std::uint32_t spans = 4;
  std::uint32_t relevant_heads = 2;
  double temperature = 0.1;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Log-probabilities are reported on a dyadic grid of this spacing (nats) so
/// that teacher-forced sums over tokens and spans are exact in binary64.
inline constexpr int kLogProbGridBits = 32;
double quantize_log_prob(double value);

/// Global toy-model parameters, public so tests can re-derive the forward
/// pass independently.
struct ToyParams {
  std::uint32_t num_layers = 0, num_heads = 0, dim = 0, vocab = 0, num_classes = 0;
  std::vector<std::string> vocab_text;
  std::uint32_t period_token = 0;
  std::vector<double> class_embed;   // [C][d]
  std::vector<double> token_embed;   // [V][d]
  std::vector<double> unembed;       // [V][d]
  std::vector<double> prior;         // [V]
  std::vector<double> query_proj;    // [LH][d][d]
  std::vector<double> key_proj;      // [LH][d][d]
  std::vector<double> value_proj;    // [LH][d][d], includes the head's output map
  std::vector<double> closing;       // [d], query direction of span-final steps
  std::vector<double> value_bias;    // [LH][d]
  std::vector<double> evidence;      // [d], shared direction favouring content words
  std::vector<double> sharpness;     // [LH]
  std::vector<double> sink_logit;    // [LH]
  std::vector<std::uint8_t> relevant;  // [LH]
  std::vector<double> plant;         // [LH], planted per-head weights
};

/// One synthetic image plus its frozen (teacher-forced) generation.
struct ToyExample {
  std::uint32_t index = 0;
  GridDims grid;
  std::uint32_t feature_dim = 0;
  std::vector<std::uint32_t> segment_of;  // ground-truth segment per vision token
  std::vector<double> vision;             // [M][d]
  std::vector<float> feature_grid;        // [M][D]
  std::vector<float> saliency;            // [M]
  std::vector<double> queries;            // [T][d] per-step attention queries
  std::vector<double> cues;               // [T][d] residual input besides the previous token
  std::vector<std::uint32_t> tokens;      // frozen generation
  std::vector<Span> spans;
  std::vector<double> keys;    // [LH][M][d] cached Wk x
  std::vector<double> values;  // [LH][M][d] cached Wv x
  /// Attention-to-log-prob contributions of each vision token (planted mode
  /// only), quantized, [T][M].
  std::vector<double> plant_contrib;
  std::vector<double> plant_base;  // [T]
  /// Optional additive key bias per vision token; -inf hides a token from
  /// every head.
  std::vector<double> key_bias;

  std::size_t num_tokens() const { return segment_of.size(); }
  std::size_t num_steps() const { return tokens.size(); }
  bool planted() const { return !plant_contrib.empty(); }
};

struct ForwardResult {
  std::vector<double> log_probs;  // per step, quantized
  std::vector<float> attn;        // [l][h][t][i], empty when not requested
};

/// Ablation outcome for one span.
struct AblationRecord {
  std::vector<double> token_deltas;
  double span_delta = 0.0;
  std::uint64_t passes_used = 0;
};

class ToyModel {
 public:
  explicit ToyModel(const ToyModelSpec& spec);
  ToyModel(const ToyModel&) = delete;
  ToyModel& operator=(const ToyModel&) = delete;

  const ToyModelSpec& spec() const { return spec_; }
  const ToyParams& params() const { return params_; }

  /// Deterministic in (spec.seed, index).
  ToyExample make_example(std::uint32_t index) const;

  /// Planted mode: fixes the region structure the planted effects refer to
  /// and caches per-token contributions from the unablated pass.
  void attach_plant(ToyExample& example, const RegionPartition& partition,
                    const ForwardResult& baseline) const;

  /// Teacher-forced pass over the example's frozen tokens with the masked
  /// vision tokens' attention logits set to -inf. Always counts one pass.
  /// In planted mode an unplanted example only supports the unmasked pass.
  ForwardResult forward(const ToyExample& example, std::span<const std::uint8_t> token_mask,
                        bool with_attention = true) const;

  /// Log-probs with every vision contribution removed (not counted).
  std::vector<double> prior_log_probs(const ToyExample& example) const;

  std::uint64_t passes() const { return passes_.load(std::memory_order_relaxed); }
  void reset_passes() { passes_.store(0, std::memory_order_relaxed); }

  AttentionTrace trace_of(const ToyExample& example, const ForwardResult& baseline) const;

 private:
  double step_log_prob(const ToyExample& ex, std::size_t t, std::span<const std::uint8_t> mask,
                       float* attn, std::vector<double>& logits) const;
  void step_logits(const ToyExample& ex, std::size_t t, std::uint32_t prev_token,
                   std::span<const std::uint8_t> mask, float* attn,
                   std::vector<double>& logits) const;

  ToyModelSpec spec_;
  ToyParams params_;
  mutable std::atomic<std::uint64_t> passes_{0};
};

/// Token-level mask (1 = ablated) covering the regions a mask ablates.
std::vector<std::uint8_t> token_mask(const RegionPartition& partition, const MaskSample& mask);
std::vector<std::uint8_t> token_mask_for_regions(const RegionPartition& partition,
                                                 std::span<const std::size_t> regions);

/// Delta of `span` under `token_mask`, given a cached unablated pass.
/// Uses exactly one additional forward pass.
AblationRecord ablation_effect(const ToyModel& model, const ToyExample& example,
                               const ForwardResult& baseline, const Span& span,
                               std::span<const std::uint8_t> token_mask);

/// Sum of per-token deltas over a span; exact on the quantized grid.
double span_delta(const ForwardResult& baseline, const ForwardResult& ablated, const Span& span);

/// Exact per-region effects of every span, one forward per region.
/// Result is [span][region].
std::vector<std::vector<double>> per_region_effects(const ToyModel& model,
                                                    const ToyExample& example,
                                                    const ForwardResult& baseline,
                                                    const RegionPartition& partition);

/// Planted per-region span effect delta_k, as the plant defines it.
double planted_region_effect(const ToyExample& example, const RegionPartition& partition,
                             const Span& span, std::size_t region);

struct PartitionOptions {
  PartitionMethod method = PartitionMethod::agglomerative;
  double tau = 0.5;
  std::size_t regions = 16;  // fixed-K methods
  std::uint64_t seed = 42;
};

RegionPartition make_partition(const AttentionTrace& trace, const PartitionOptions& options);

struct CollectOptions {
  std::uint32_t examples = 1;
  std::uint32_t first_example = 0;
  PartitionOptions partition;
  std::uint32_t masks_per_sample = 32;
  std::uint64_t seed = 42;
  double noise_fraction = 0.0;
  bool include_singletons = false;
  /// Replaces random masks for every example (test hook).
  std::optional<std::vector<MaskSample>> explicit_masks;
};

struct Manifest {
  std::uint32_t examples = 0;
  std::uint32_t first_example = 0;
  std::uint32_t spans = 0;
  std::uint64_t passes = 0;
  std::uint64_t seed = 0;
  OracleMode mode = OracleMode::softmax_nonlinear;
  std::uint32_t masks_per_sample = 0;
  double noise_fraction = 0.0;
  ToyModelSpec spec;
  PartitionOptions partition;
};

struct CollectedExample {
  AttentionTrace trace;
  RegionPartition partition;
};

struct CollectedData {
  TrainingSet training;
  std::vector<CollectedExample> examples;
  Manifest manifest;
};

/// Builds examples, traces, partitions, masks and exact targets. Uses
/// examples * (masks + 1) forward passes (plus K per example when singleton
/// masks are included).
CollectedData generate_dataset(const ToyModel& model, const CollectOptions& options);

/// Per-example seed derivation shared by every stochastic step.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

}  // namespace attrstream
