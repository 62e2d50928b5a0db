#include "attrstream/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "attrstream/error.hpp"
#include "attrstream/log.hpp"

namespace attrstream {

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !(weight_decay >= 0) || !(min_learning_rate > 0) ||
      iterations == 0 || batch_size == 0 || !(beta1 > 0 && beta1 < 1) ||
      !(beta2 > 0 && beta2 < 1) || !(epsilon > 0)) {
    throw Error(ErrorKind::invalid_argument, "training hyperparameters must be positive");
  }
  if (masks_per_sample < 2) throw Error(ErrorKind::invalid_argument, "masks per sample must be >= 2");
  if (min_learning_rate > learning_rate) {
    throw Error(ErrorKind::invalid_argument, "min learning rate exceeds learning rate");
  }
}

std::string TrainConfig::canonical() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "lr=" << learning_rate << '\n'
     << "weight_decay=" << weight_decay << '\n'
     << "min_lr=" << min_learning_rate << '\n'
     << "warmup=" << warmup_iterations << '\n'
     << "iters=" << iterations << '\n'
     << "batch=" << batch_size << '\n'
     << "masks_per_sample=" << masks_per_sample << '\n'
     << "seed=" << seed << '\n'
     << "beta1=" << beta1 << '\n'
     << "beta2=" << beta2 << '\n'
     << "epsilon=" << epsilon << '\n'
     << "correct_only=" << (correct_only ? 1 : 0) << '\n';
  return os.str();
}

std::string TrainConfig::hash() const {
  const std::string text = canonical();
  const std::uint64_t h = crc64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<MaskSample> sample_masks(std::size_t num_regions, std::size_t count,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<MaskSample> out(count);
  for (auto& m : out) {
    m.retained.resize(num_regions);
    for (auto& b : m.retained) b = coin(rng) ? 1 : 0;
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::dimension, "pearson needs equal lengths");
  if (x.size() < 2) throw Error(ErrorKind::invalid_argument, "pearson needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorKind::degenerate, "pearson undefined for zero-variance input");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population
};

Moments moments(std::span<const double> v) {
  Moments m;
  const double n = static_cast<double>(v.size());
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= n;
  return m;
}

std::vector<double> standardize(std::span<const double> target) {
  const Moments mt = moments(target);
  if (mt.var == 0.0) throw Error(ErrorKind::degenerate, "target has zero variance");
  const double sd = std::sqrt(mt.var);
  std::vector<double> out(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) out[i] = (target[i] - mt.mean) / sd;
  return out;
}

}  // namespace

double standardized_affine_mse(std::span<const double> z, std::span<const double> target,
                               double alpha, double beta) {
  const auto t = standardize(target);
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double r = t[i] - (alpha * z[i] + beta);
    s += r * r;
  }
  return s / static_cast<double>(z.size());
}

AffineFit standardized_affine_fit(std::span<const double> z, std::span<const double> target) {
  if (z.size() != target.size() || z.size() < 2) {
    throw Error(ErrorKind::dimension, "affine fit needs equal lengths >= 2");
  }
  const auto t = standardize(target);
  const Moments mz = moments(z);
  if (mz.var == 0.0) throw Error(ErrorKind::degenerate, "prediction has zero variance");
  double cov = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) cov += (t[i]) * (z[i] - mz.mean);
  cov /= static_cast<double>(z.size());
  AffineFit fit;
  fit.alpha = cov / mz.var;
  fit.beta = -fit.alpha * mz.mean;  // the standardized target has mean zero
  fit.mse = standardized_affine_mse(z, target, fit.alpha, fit.beta);
  return fit;
}

std::vector<double> score_regions(std::span<const double> w, const SpanFeatureMatrix& features) {
  if (w.size() != features.dim()) {
    throw Error(ErrorKind::dimension, "weight dimension does not match L*H of features");
  }
  std::vector<double> out(features.num_regions, 0.0);
  for (std::size_t k = 0; k < features.num_regions; ++k) {
    const auto row = features.row(k);
    double s = 0.0;
    for (std::size_t f = 0; f < w.size(); ++f) s += w[f] * row[f];
    out[k] = s;
  }
  return out;
}

std::vector<double> score_regions(const EstimatorWeights& weights,
                                  const SpanFeatureMatrix& features) {
  return score_regions(weights.w, features);
}

double predict_mask_effect(const EstimatorWeights& weights, const SpanFeatureMatrix& features,
                           const MaskSample& mask) {
  if (weights.w.size() != features.dim()) {
    throw Error(ErrorKind::dimension, "weight dimension does not match L*H of features");
  }
  const auto combined = combine_binary(features, mask.ablated());
  double s = 0.0;
  for (std::size_t f = 0; f < combined.size(); ++f) s += weights.w[f] * combined[f];
  return s;
}

PreparedSample prepare_sample(const TrainingSample& sample) {
  if (sample.masks.size() != sample.targets.size()) {
    throw Error(ErrorKind::dimension, "training sample needs one target per mask");
  }
  PreparedSample p;
  p.masks = sample.masks.size();
  p.dim = sample.features.dim();
  p.design.reserve(p.masks * p.dim);
  for (const auto& m : sample.masks) {
    if (m.size() != sample.features.num_regions) {
      throw Error(ErrorKind::dimension, "mask length does not match region count");
    }
    const auto row = combine_binary(sample.features, m.ablated());
    p.design.insert(p.design.end(), row.begin(), row.end());
  }
  p.targets = sample.targets;
  return p;
}

LossAndGradient pearson_loss_and_gradient(std::span<const double> w,
                                          std::span<const PreparedSample* const> batch) {
  LossAndGradient out;
  out.gradient.assign(w.size(), 0.0);
  std::vector<double> pred, dp;
  for (const PreparedSample* s : batch) {
    const std::size_t n = s->masks, d = s->dim;
    if (d != w.size()) throw Error(ErrorKind::dimension, "sample dimension does not match weights");
    if (n < 2) continue;
    pred.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double* row = s->design.data() + j * d;
      double v = 0.0;
      for (std::size_t f = 0; f < d; ++f) v += row[f] * w[f];
      pred[j] = v;
    }
    const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / static_cast<double>(n);
    const double my =
        std::accumulate(s->targets.begin(), s->targets.end(), 0.0) / static_cast<double>(n);
    double spp = 0.0, syy = 0.0, spy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double a = pred[j] - mp, b = s->targets[j] - my;
      spp += a * a;
      syy += b * b;
      spy += a * b;
    }
    if (spp == 0.0 || syy == 0.0) continue;
    const double np = std::sqrt(spp), ny = std::sqrt(syy);
    const double rho = spy / (np * ny);
    // d rho / d pred_j for centered vectors.
    dp.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      dp[j] = (s->targets[j] - my) / (np * ny) - rho * (pred[j] - mp) / spp;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double* row = s->design.data() + j * d;
      for (std::size_t f = 0; f < d; ++f) out.gradient[f] -= dp[j] * row[f];
    }
    out.loss -= rho;
    ++out.used;
  }
  if (out.used > 0) {
    const double inv = 1.0 / static_cast<double>(out.used);
    out.loss *= inv;
    for (auto& g : out.gradient) g *= inv;
  }
  return out;
}

TrainResult train(const TrainingSet& dataset, const TrainConfig& config) {
  config.validate();
  std::vector<PreparedSample> prepared;
  std::uint32_t layers = 0, heads = 0;
  std::size_t dropped_incorrect = 0, constant_targets = 0;
  for (const auto& s : dataset.samples) {
    if (config.correct_only && !s.correct) {
      ++dropped_incorrect;
      continue;
    }
    if (prepared.empty()) {
      layers = s.features.num_layers;
      heads = s.features.num_heads;
    } else if (s.features.num_layers != layers || s.features.num_heads != heads) {
      throw Error(ErrorKind::dimension, "training samples disagree on L and H");
    }
    if (s.masks.size() < 2) {
      throw Error(ErrorKind::invalid_argument, "each training sample needs at least two masks");
    }
    const auto [lo, hi] = std::minmax_element(s.targets.begin(), s.targets.end());
    if (*lo == *hi) ++constant_targets;
    prepared.push_back(prepare_sample(s));
  }
  if (prepared.empty()) throw Error(ErrorKind::degenerate, "no usable training samples");
  if (dropped_incorrect > 0) log::info("skipped ", dropped_incorrect, " samples marked incorrect");
  if (constant_targets > 0) {
    log::warn(constant_targets, " samples have constant targets and never contribute");
  }

  const std::size_t dim = static_cast<std::size_t>(layers) * heads;
  std::mt19937_64 rng(config.seed);
  TrainResult result;
  result.weights.num_layers = layers;
  result.weights.num_heads = heads;
  result.weights.seed = config.seed;
  result.weights.config_hash = config.hash();
  auto& w = result.weights.w;
  w.resize(dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> init(-bound, bound);
  for (auto& x : w) x = init(rng);

  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min<std::size_t>(config.batch_size, prepared.size());
  const bool full_batch = batch == prepared.size();
  std::size_t cursor = prepared.size();

  std::vector<double> m1(dim, 0.0), m2(dim, 0.0);
  std::vector<const PreparedSample*> members(batch);
  std::size_t steps = 0;
  result.loss_history.reserve(config.iterations);

  for (std::uint32_t it = 0; it < config.iterations; ++it) {
    if (full_batch) {
      for (std::size_t b = 0; b < batch; ++b) members[b] = &prepared[b];
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        members[b] = &prepared[order[cursor++]];
      }
    }
    const auto lg = pearson_loss_and_gradient(w, members);
    if (lg.used == 0) {
      ++result.skipped_batches;
      log::warn("iteration ", it, ": batch has no sample with positive variance; skipped");
      result.loss_history.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    result.loss_history.push_back(lg.loss);

    double lr;
    if (it < config.warmup_iterations) {
      lr = config.learning_rate * (it + 1) / static_cast<double>(config.warmup_iterations);
    } else {
      const double span = std::max<double>(1.0, config.iterations - config.warmup_iterations);
      const double progress = (it - config.warmup_iterations) / span;
      lr = config.min_learning_rate + (config.learning_rate - config.min_learning_rate) * 0.5 *
                                          (1.0 + std::cos(M_PI * progress));
    }

    ++steps;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(steps));
    for (std::size_t f = 0; f < dim; ++f) {
      w[f] -= lr * config.weight_decay * w[f];
      const double g = lg.gradient[f];
      m1[f] = config.beta1 * m1[f] + (1.0 - config.beta1) * g;
      m2[f] = config.beta2 * m2[f] + (1.0 - config.beta2) * g * g;
      w[f] -= lr * (m1[f] / c1) / (std::sqrt(m2[f] / c2) + config.epsilon);
    }
  }
  if (steps == 0) throw Error(ErrorKind::degenerate, "every training batch was degenerate");
  return result;
}

std::vector<double> attention_baseline(const AttentionTrace& trace, const Span& span,
                                       const RegionPartition& partition) {
  const auto features = pool_span_region(trace, span, partition);
  const std::vector<double> w(features.dim(), 1.0 / static_cast<double>(features.dim()));
  return score_regions(w, features);
}

std::vector<double> random_baseline(std::size_t num_regions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(num_regions);
  for (auto& x : out) x = u(rng);
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::dimension, "cosine needs equal lengths");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error(ErrorKind::degenerate, "cosine of a zero vector");
  return ab / std::sqrt(aa * bb);
}

}  // namespace attrstream
