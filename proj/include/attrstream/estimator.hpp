#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attrstream/features.hpp"
#include "attrstream/trace.hpp"
#include "attrstream/unitization.hpp"

namespace attrstream {

/// The whole learned model: one weight per (layer, head), no bias.
struct EstimatorWeights {
  std::uint32_t num_layers = 0;
  std::uint32_t num_heads = 0;
  std::vector<double> w;
  std::string config_hash;
  std::uint64_t seed = 0;

  std::size_t dim() const { return static_cast<std::size_t>(num_layers) * num_heads; }
};

struct TrainingSample {
  SpanFeatureMatrix features;
  std::vector<MaskSample> masks;
  std::vector<double> targets;  // nats; positive when the ablation hurts
  bool correct = true;
  std::uint32_t example = 0;
  std::uint32_t span_index = 0;
};

struct TrainingSet {
  std::vector<TrainingSample> samples;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double min_learning_rate = 1e-5;
  std::uint32_t warmup_iterations = 0;
  std::uint32_t iterations = 2000;
  std::uint32_t batch_size = 512;  // samples (spans) per step
  std::uint32_t masks_per_sample = 32;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool correct_only = true;

  void validate() const;
  /// Canonical key=value rendering, also used for the config hash.
  std::string canonical() const;
  std::string hash() const;
};

struct TrainResult {
  EstimatorWeights weights;
  std::vector<double> loss_history;
  std::size_t skipped_batches = 0;
};

/// i.i.d. Bernoulli(1/2) masks; the sampled bit is the retained flag.
std::vector<MaskSample> sample_masks(std::size_t num_regions, std::size_t count, std::uint64_t seed);

/// Sample Pearson correlation. Throws ErrorKind::degenerate when either
/// argument has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Best affine rescaling of `z` onto the standardized target. `mse` is the
/// mean squared residual at the optimum (population moments).
struct AffineFit {
  double alpha = 0.0;
  double beta = 0.0;
  double mse = 0.0;
};
AffineFit standardized_affine_fit(std::span<const double> z, std::span<const double> target);
double standardized_affine_mse(std::span<const double> z, std::span<const double> target,
                               double alpha, double beta);

/// Predicted effect of a mask: the estimator applied to the summed features
/// of the ablated regions (equivalently the sum of their region scores).
double predict_mask_effect(const EstimatorWeights& weights, const SpanFeatureMatrix& features,
                           const MaskSample& mask);

/// Per-region scores w . F[k].
std::vector<double> score_regions(const EstimatorWeights& weights,
                                  const SpanFeatureMatrix& features);
std::vector<double> score_regions(std::span<const double> w, const SpanFeatureMatrix& features);

/// One training sample with its per-mask design rows precomputed.
struct PreparedSample {
  std::size_t masks = 0;
  std::size_t dim = 0;
  std::vector<double> design;  // [N][D], ablated-feature sums
  std::vector<double> targets;
};
PreparedSample prepare_sample(const TrainingSample& sample);

/// Mean of -pearson(design*w, targets) over the given samples, plus its
/// analytic gradient. Samples whose predictions or targets are constant are
/// skipped; `used` reports how many contributed.
struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
  std::size_t used = 0;
};
LossAndGradient pearson_loss_and_gradient(std::span<const double> w,
                                          std::span<const PreparedSample* const> batch);

TrainResult train(const TrainingSet& dataset, const TrainConfig& config);

/// Uniform (layer, head) average of the pooled attention: mean attention
/// per region token.
std::vector<double> attention_baseline(const AttentionTrace& trace, const Span& span,
                                       const RegionPartition& partition);

/// i.i.d. Uniform[0,1) scores.
std::vector<double> random_baseline(std::size_t num_regions, std::uint64_t seed);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace attrstream
