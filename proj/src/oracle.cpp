#include "attrstream/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "attrstream/error.hpp"

namespace attrstream {

namespace {

const char* const kClassWords[] = {" red",  " blue", " green", " cat",  " dog",  " tree",
                                   " car",  " sky",  " ball",  " cup",  " box",  " lamp"};
const char* const kFillerWords[] = {" the", " a", " is", " of", " and", " near"};
constexpr std::size_t kMaxClasses = sizeof(kClassWords) / sizeof(kClassWords[0]);
constexpr std::size_t kFillers = sizeof(kFillerWords) / sizeof(kFillerWords[0]);
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Relevant heads sit behind a strong sink, so ablated mass mostly leaves
// the vision pathway instead of renormalizing onto other patches.
constexpr double kUnembedGain = 1.0;
constexpr double kValueGain = 5.0;
constexpr double kFillerPrior = 0.0;
constexpr double kSink = 8.0;
constexpr double kQueryScale = 3.5;
constexpr double kSharp = 4.0;
constexpr double kEvidenceUnembed = 1.0;
constexpr double kEvidenceValue = 3.0;
constexpr std::uint32_t kBackground = std::numeric_limits<std::uint32_t>::max();

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void fill_normal(std::vector<double>& v, std::size_t n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, scale);
  v.resize(n);
  for (auto& x : v) x = nd(rng);
}

// y = A x for a d×d row-major block.
void matvec(const double* a, const double* x, double* y, std::size_t d) {
  for (std::size_t r = 0; r < d; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += a[r * d + c] * x[c];
    y[r] = s;
  }
}

double log_softmax_at(const std::vector<double>& logits, std::size_t index) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return logits[index] - mx - std::log(z);
}

}  // namespace

std::string_view to_string(OracleMode mode) {
  return mode == OracleMode::planted_linear ? "planted_linear" : "softmax_nonlinear";
}

OracleMode parse_oracle_mode(std::string_view name) {
  if (name == "planted_linear" || name == "planted") return OracleMode::planted_linear;
  if (name == "softmax_nonlinear" || name == "nonlinear") return OracleMode::softmax_nonlinear;
  throw Error(ErrorKind::invalid_argument, "unknown oracle mode: " + std::string(name));
}

void ToyModelSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_argument, m); };
  if (num_layers == 0 || num_heads == 0) fail("toy model needs at least one layer and head");
  if (grid.rows < 4 || grid.cols < 4) fail("toy grid must be at least 4x4");
  if (model_dim == 0 || feature_dim == 0) fail("toy dims must be positive");
  if (num_classes == 0 || num_classes > kMaxClasses)
    fail("num_classes must be in [1, " + std::to_string(kMaxClasses) + "]");
  if (spans == 0 || steps < 2 * spans) fail("need at least two steps per span");
  if (relevant_heads > num_layers * num_heads) fail("more relevant heads than heads");
  if (!(temperature > 0.0)) fail("temperature must be positive");
}

double quantize_log_prob(double value) {
  return std::ldexp(std::nearbyint(std::ldexp(value, kLogProbGridBits)), -kLogProbGridBits);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix(splitmix(splitmix(seed) ^ index) ^ (stream * 0xD1B54A32D192ED03ull));
}

ToyModel::ToyModel(const ToyModelSpec& spec) : spec_(spec) {
  spec_.validate();
  auto& p = params_;
  const std::size_t d = spec_.model_dim;
  const std::size_t lh = static_cast<std::size_t>(spec_.num_layers) * spec_.num_heads;
  p.num_layers = spec_.num_layers;
  p.num_heads = spec_.num_heads;
  p.dim = spec_.model_dim;
  p.num_classes = spec_.num_classes;
  for (std::size_t c = 0; c < spec_.num_classes; ++c) p.vocab_text.emplace_back(kClassWords[c]);
  for (auto* w : kFillerWords) p.vocab_text.emplace_back(w);
  p.period_token = static_cast<std::uint32_t>(p.vocab_text.size());
  p.vocab_text.emplace_back(".");
  p.vocab = static_cast<std::uint32_t>(p.vocab_text.size());

  std::mt19937_64 rng(derive_seed(spec_.seed, 0, 100));
  const double unit = 1.0 / std::sqrt(static_cast<double>(d));
  fill_normal(p.class_embed, spec_.num_classes * d, unit, rng);
  fill_normal(p.token_embed, p.vocab * d, 0.5 * unit, rng);
  fill_normal(p.unembed, p.vocab * d, 0.5 * unit, rng);
  fill_normal(p.closing, d, 1.0, rng);
  {
    double norm = std::sqrt(std::inner_product(p.closing.begin(), p.closing.end(),
                                               p.closing.begin(), 0.0));
    for (auto& e : p.closing) e /= norm;
  }
  for (std::size_t j = 0; j < d; ++j) p.unembed[p.period_token * d + j] += 4.0 * p.closing[j];
  fill_normal(p.evidence, d, 1.0, rng);
  {
    double norm = std::sqrt(std::inner_product(p.evidence.begin(), p.evidence.end(),
                                               p.evidence.begin(), 0.0));
    for (auto& e : p.evidence) e /= norm;
  }
  for (std::size_t c = 0; c < spec_.num_classes; ++c)
    for (std::size_t j = 0; j < d; ++j)
      p.unembed[c * d + j] = kUnembedGain * p.class_embed[c * d + j] + kEvidenceUnembed * p.evidence[j];
  p.prior.assign(p.vocab, 0.0);
  for (std::size_t f = 0; f < kFillers; ++f) p.prior[spec_.num_classes + f] = kFillerPrior;

  std::vector<std::size_t> order(lh);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  p.relevant.assign(lh, 0);
  for (std::size_t r = 0; r < spec_.relevant_heads; ++r) p.relevant[order[r]] = 1;

  std::normal_distribution<double> nd(0.0, unit);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  p.query_proj.assign(lh * d * d, 0.0);
  p.key_proj.assign(lh * d * d, 0.0);
  p.value_proj.assign(lh * d * d, 0.0);
  p.sharpness.assign(lh, 0.0);
  p.sink_logit.assign(lh, 0.0);
  p.value_bias.assign(lh * d, 0.0);
  for (std::size_t h = 0; h < lh; ++h) {
    double* wq = &p.query_proj[h * d * d];
    double* wk = &p.key_proj[h * d * d];
    double* wv = &p.value_proj[h * d * d];
    if (p.relevant[h]) {
      double gain = kValueGain * (0.5 + ud(rng));
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          double eye = r == c ? 1.0 : 0.0;
          wq[r * d + c] = eye + 0.2 * nd(rng);
          wk[r * d + c] = eye + 0.2 * nd(rng);
          wv[r * d + c] = gain * (eye + 0.2 * nd(rng));
        }
      }
      for (std::size_t j = 0; j < d; ++j) p.value_bias[h * d + j] = gain * kEvidenceValue * p.evidence[j];
      p.sharpness[h] = kSharp;
      p.sink_logit[h] = kSink;
    } else {
      for (std::size_t r = 0; r < d * d; ++r) {
        wq[r] = 2.0 * nd(rng);
        wk[r] = 2.0 * nd(rng);
        wv[r] = 0.05 * nd(rng);
      }
      p.sharpness[h] = 2.0 + 2.0 * ud(rng);
      p.sink_logit[h] = 0.5;
    }
  }
  p.plant.resize(lh);
  for (auto& w : p.plant) w = std::normal_distribution<double>(0.0, 1.0)(rng);
}

ToyExample ToyModel::make_example(std::uint32_t index) const {
  const auto& p = params_;
  const std::size_t d = p.dim;
  const std::size_t lh = static_cast<std::size_t>(p.num_layers) * p.num_heads;
  const std::uint32_t rows = spec_.grid.rows, cols = spec_.grid.cols;
  const std::size_t m = spec_.grid.cells();
  std::mt19937_64 rng(derive_seed(spec_.seed, index, 1));
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  };

  ToyExample ex;
  ex.index = index;
  ex.grid = spec_.grid;
  ex.feature_dim = spec_.feature_dim;

  // Quadrant backgrounds, then rectangular objects painted on top.
  std::vector<std::uint32_t> seg_class;
  ex.segment_of.assign(m, 0);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      ex.segment_of[r * cols + c] = (r < rows / 2 ? 0 : 2) + (c < cols / 2 ? 0 : 1);
  for (int q = 0; q < 4; ++q) seg_class.push_back(kBackground);
  // Objects draw distinct classes while they last.
  std::vector<std::uint32_t> deck(p.num_classes);
  std::iota(deck.begin(), deck.end(), 0u);
  std::shuffle(deck.begin(), deck.end(), rng);
  std::size_t objects = 6 + pick(5);
  for (std::size_t o = 0; o < objects; ++o) {
    std::uint32_t h = static_cast<std::uint32_t>(std::min<std::size_t>(2 + pick(3), rows));
    std::uint32_t w = static_cast<std::uint32_t>(std::min<std::size_t>(2 + pick(3), cols));
    std::uint32_t r0 = static_cast<std::uint32_t>(pick(rows - h + 1));
    std::uint32_t c0 = static_cast<std::uint32_t>(pick(cols - w + 1));
    auto seg = static_cast<std::uint32_t>(seg_class.size());
    seg_class.push_back(o < deck.size() ? deck[o] : static_cast<std::uint32_t>(pick(p.num_classes)));
    for (std::uint32_t r = r0; r < r0 + h; ++r)
      for (std::uint32_t c = c0; c < c0 + w; ++c) ex.segment_of[r * cols + c] = seg;
  }
  const std::size_t segs = seg_class.size();
  std::vector<double> seg_embed, seg_proto, identity;
  fill_normal(seg_embed, segs * d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  fill_normal(seg_proto, segs * spec_.feature_dim, 1.0, rng);
  // Backgrounds get their own directions, outside the vocabulary.
  fill_normal(identity, segs * d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  for (std::size_t g = 0; g < segs; ++g)
    for (std::size_t j = 0; j < d; ++j) {
      if (seg_class[g] != kBackground) identity[g * d + j] = p.class_embed[seg_class[g] * d + j];
      identity[g * d + j] += 0.5 * seg_embed[g * d + j];
    }

  ex.vision.resize(m * d);
  ex.feature_grid.resize(m * spec_.feature_dim);
  ex.saliency.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::uint32_t s = ex.segment_of[i];
    for (std::size_t j = 0; j < d; ++j)
      ex.vision[i * d + j] = identity[s * d + j] +
                             0.1 * nd(rng) / std::sqrt(static_cast<double>(d));
    for (std::size_t j = 0; j < spec_.feature_dim; ++j)
      ex.feature_grid[i * spec_.feature_dim + j] =
          static_cast<float>(seg_proto[s * spec_.feature_dim + j] + 0.05 * nd(rng));
    ex.saliency[i] = static_cast<float>(s >= 4 ? 1.0 + 0.1 * ud(rng) : 0.05 + 0.2 * ud(rng));
  }

  ex.keys.resize(lh * m * d);
  ex.values.resize(lh * m * d);
  for (std::size_t h = 0; h < lh; ++h) {
    for (std::size_t i = 0; i < m; ++i) {
      matvec(&p.key_proj[h * d * d], &ex.vision[i * d], &ex.keys[(h * m + i) * d], d);
      double* v = &ex.values[(h * m + i) * d];
      matvec(&p.value_proj[h * d * d], &ex.vision[i * d], v, d);
      for (std::size_t j = 0; j < d; ++j) v[j] += p.value_bias[h * d + j];
    }
  }

  // Spans are equal chunks; each chunk describes one visible segment.
  const std::size_t steps = spec_.steps;
  std::vector<std::uint32_t> visible;
  for (std::uint32_t s = 0; s < segs; ++s)
    if (std::find(ex.segment_of.begin(), ex.segment_of.end(), s) != ex.segment_of.end())
      visible.push_back(s);
  std::vector<std::uint32_t> objects_visible;
  for (auto s : visible)
    if (s >= 4) objects_visible.push_back(s);
  const auto& pool = objects_visible.empty() ? visible : objects_visible;

  const std::size_t chunk = steps / spec_.spans;
  ex.queries.resize(steps * d);
  ex.cues.assign(steps * d, 0.0);
  for (std::uint32_t k = 0; k < spec_.spans; ++k) {
    Span span;
    span.start = static_cast<std::uint32_t>(k * chunk);
    span.end = k + 1 == spec_.spans ? static_cast<std::uint32_t>(steps)
                                    : static_cast<std::uint32_t>((k + 1) * chunk);
    ex.spans.push_back(span);
    // Uneven interest over the visible objects, jittered per step.
    std::vector<double> interest(pool.size());
    for (auto& w : interest) w = std::pow(ud(rng), 3.0);
    for (std::size_t t = span.start; t < span.end; ++t) {
      std::vector<double> w(pool.size());
      double total = 0.0;
      for (std::size_t o = 0; o < pool.size(); ++o) total += w[o] = interest[o] * std::exp(0.3 * nd(rng));
      for (std::size_t j = 0; j < d; ++j) {
        double q = 0.0;
        for (std::size_t o = 0; o < pool.size(); ++o) q += w[o] / total * identity[pool[o] * d + j];
        ex.queries[t * d + j] = kQueryScale * q + 0.3 * nd(rng) / std::sqrt(static_cast<double>(d));
      }
      // The closing step asks for punctuation, not for the image.
      if (t + 1 == span.end)
        for (std::size_t j = 0; j < d; ++j) ex.cues[t * d + j] = 8.0 * p.closing[j];
    }
  }

  // Sample the generation once under the unablated model, then freeze it.
  ex.tokens.assign(steps, p.period_token);
  std::vector<std::uint8_t> none(m, 0);
  std::vector<double> logits;
  std::uint32_t prev = p.period_token;
  for (std::size_t t = 0; t < steps; ++t) {
    bool span_end = false;
    for (const auto& s : ex.spans) span_end = span_end || t + 1 == s.end;
    if (span_end) {
      ex.tokens[t] = p.period_token;
    } else {
      step_logits(ex, t, prev, none, nullptr, logits);
      std::vector<double> weights(p.period_token);
      double mx = *std::max_element(logits.begin(), logits.begin() + p.period_token);
      for (std::size_t v = 0; v < weights.size(); ++v)
        weights[v] = std::exp((logits[v] - mx) / spec_.temperature);
      std::discrete_distribution<std::uint32_t> dd(weights.begin(), weights.end());
      ex.tokens[t] = dd(rng);
    }
    prev = ex.tokens[t];
  }
  return ex;
}

void ToyModel::step_logits(const ToyExample& ex, std::size_t t, std::uint32_t prev_token,
                           std::span<const std::uint8_t> mask, float* attn,
                           std::vector<double>& logits) const {
  const auto& p = params_;
  const std::size_t d = p.dim;
  const std::size_t m = ex.num_tokens();
  const std::size_t steps = ex.queries.size() / d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  // One attention stage: every head reads the same query state and writes
  // into the residual, which never carries the query itself.
  std::vector<double> h(d), a(d), q(d), score(m);
  for (std::size_t j = 0; j < d; ++j) {
    h[j] = p.token_embed[prev_token * d + j] + ex.cues[t * d + j];
    a[j] = h[j] + ex.queries[t * d + j];
  }

  for (std::size_t layer = 0; layer < p.num_layers; ++layer) {
    for (std::size_t head = 0; head < p.num_heads; ++head) {
      const std::size_t lh = layer * p.num_heads + head;
      matvec(&p.query_proj[lh * d * d], a.data(), q.data(), d);
      const double sink = p.sink_logit[lh];
      double mx = sink;
      for (std::size_t i = 0; i < m; ++i) {
        bool hidden = (!mask.empty() && mask[i]) ||
                      (!ex.key_bias.empty() && ex.key_bias[i] == kNegInf);
        if (hidden) {
          score[i] = kNegInf;
          continue;
        }
        const double* k = &ex.keys[(lh * m + i) * d];
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += q[j] * k[j];
        s = s * scale * p.sharpness[lh];
        if (!ex.key_bias.empty()) s += ex.key_bias[i];
        score[i] = s;
        mx = std::max(mx, s);
      }
      double z = std::exp(sink - mx);
      for (std::size_t i = 0; i < m; ++i) {
        score[i] = score[i] == kNegInf ? 0.0 : std::exp(score[i] - mx);
        z += score[i];
      }
      float* row = attn ? attn + (lh * steps + t) * m : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        double w = score[i] / z;
        if (row) row[i] = static_cast<float>(w);
        if (w == 0.0) continue;
        const double* v = &ex.values[(lh * m + i) * d];
        for (std::size_t j = 0; j < d; ++j) h[j] += w * v[j];
      }
    }
  }
  logits.assign(p.vocab, 0.0);
  for (std::size_t v = 0; v < p.vocab; ++v) {
    double s = p.prior[v];
    for (std::size_t j = 0; j < d; ++j) s += p.unembed[v * d + j] * h[j];
    logits[v] = s;
  }
}

double ToyModel::step_log_prob(const ToyExample& ex, std::size_t t,
                               std::span<const std::uint8_t> mask, float* attn,
                               std::vector<double>& logits) const {
  std::uint32_t prev = t == 0 ? params_.period_token : ex.tokens[t - 1];
  step_logits(ex, t, prev, mask, attn, logits);
  return quantize_log_prob(log_softmax_at(logits, ex.tokens[t]));
}

ForwardResult ToyModel::forward(const ToyExample& example, std::span<const std::uint8_t> token_mask,
                                bool with_attention) const {
  const std::size_t m = example.num_tokens();
  const std::size_t steps = example.num_steps();
  if (!token_mask.empty() && token_mask.size() != m)
    throw Error(ErrorKind::dimension, "token mask has " + std::to_string(token_mask.size()) +
                                          " entries, expected " + std::to_string(m));
  passes_.fetch_add(1, std::memory_order_relaxed);
  bool any_masked = std::any_of(token_mask.begin(), token_mask.end(),
                                [](std::uint8_t b) { return b != 0; });

  ForwardResult result;
  result.log_probs.resize(steps);
  if (with_attention)
    result.attn.assign(static_cast<std::size_t>(params_.num_layers) * params_.num_heads * steps * m,
                       0.0f);
  float* attn = with_attention ? result.attn.data() : nullptr;

  if (spec_.mode == OracleMode::planted_linear && example.planted()) {
    for (std::size_t t = 0; t < steps; ++t) {
      double lp = example.plant_base[t];
      if (any_masked) {
        const double* c = &example.plant_contrib[t * m];
        for (std::size_t i = 0; i < m; ++i)
          if (token_mask[i]) lp -= c[i];
      }
      result.log_probs[t] = lp;
    }
    if (with_attention) {
      std::vector<double> logits;
      for (std::size_t t = 0; t < steps; ++t) step_log_prob(example, t, token_mask, attn, logits);
    }
    return result;
  }
  if (spec_.mode == OracleMode::planted_linear && any_masked)
    throw Error(ErrorKind::invalid_argument,
                "planted oracle needs attach_plant before masked passes");

  std::vector<double> logits;
  for (std::size_t t = 0; t < steps; ++t)
    result.log_probs[t] = step_log_prob(example, t, token_mask, attn, logits);
  return result;
}

std::vector<double> ToyModel::prior_log_probs(const ToyExample& example) const {
  const auto& p = params_;
  const std::size_t d = p.dim;
  std::vector<double> out(example.num_steps());
  std::vector<double> logits(p.vocab);
  for (std::size_t t = 0; t < out.size(); ++t) {
    std::uint32_t prev = t == 0 ? p.period_token : example.tokens[t - 1];
    for (std::size_t v = 0; v < p.vocab; ++v) {
      double s = p.prior[v];
      for (std::size_t j = 0; j < d; ++j)
        s += p.unembed[v * d + j] * (p.token_embed[prev * d + j] + example.cues[t * d + j]);
      logits[v] = s;
    }
    out[t] = quantize_log_prob(log_softmax_at(logits, example.tokens[t]));
  }
  return out;
}

void ToyModel::attach_plant(ToyExample& example, const RegionPartition& partition,
                            const ForwardResult& baseline) const {
  const std::size_t m = example.num_tokens();
  const std::size_t steps = example.num_steps();
  const std::size_t lh = static_cast<std::size_t>(params_.num_layers) * params_.num_heads;
  if (partition.num_tokens() != m)
    throw Error(ErrorKind::dimension, "plant partition covers " +
                                          std::to_string(partition.num_tokens()) + " tokens, expected " +
                                          std::to_string(m));
  if (baseline.attn.size() != lh * steps * m || baseline.log_probs.size() != steps)
    throw Error(ErrorKind::dimension, "plant needs an unmasked pass with attention");
  example.plant_base = baseline.log_probs;
  example.plant_contrib.assign(steps * m, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < m; ++i) {
      double c = 0.0;
      for (std::size_t h = 0; h < lh; ++h)
        c += params_.plant[h] * static_cast<double>(baseline.attn[(h * steps + t) * m + i]);
      c /= static_cast<double>(partition.region_size(partition.region_of(i)));
      example.plant_contrib[t * m + i] = quantize_log_prob(c);
    }
  }
}

AttentionTrace ToyModel::trace_of(const ToyExample& example, const ForwardResult& baseline) const {
  AttentionTrace trace;
  trace.num_layers = params_.num_layers;
  trace.num_heads = params_.num_heads;
  trace.num_steps = static_cast<std::uint32_t>(example.num_steps());
  trace.num_vision_tokens = static_cast<std::uint32_t>(example.num_tokens());
  trace.feature_dim = example.feature_dim;
  trace.grid = example.grid;
  for (auto tok : example.tokens) trace.tokens.push_back(params_.vocab_text[tok]);
  trace.attn = baseline.attn;
  trace.feature_grid = example.feature_grid;
  trace.saliency = example.saliency;
  trace.spans = example.spans;
  for (std::size_t k = 0; k < trace.spans.size(); ++k) trace.spans[k].label = "step" + std::to_string(k);
  return trace;
}

std::vector<std::uint8_t> token_mask(const RegionPartition& partition, const MaskSample& mask) {
  if (mask.size() != partition.num_regions())
    throw Error(ErrorKind::dimension, "mask has " + std::to_string(mask.size()) +
                                          " regions, partition has " +
                                          std::to_string(partition.num_regions()));
  std::vector<std::uint8_t> out(partition.num_tokens(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.retained[partition.region_of(i)] ? 0 : 1;
  return out;
}

std::vector<std::uint8_t> token_mask_for_regions(const RegionPartition& partition,
                                                 std::span<const std::size_t> regions) {
  std::vector<std::uint8_t> out(partition.num_tokens(), 0);
  for (auto k : regions) {
    if (k >= partition.num_regions())
      throw Error(ErrorKind::dimension, "region " + std::to_string(k) + " out of range");
    for (auto i : partition.members(k)) out[i] = 1;
  }
  return out;
}

double span_delta(const ForwardResult& baseline, const ForwardResult& ablated, const Span& span) {
  if (span.end > baseline.log_probs.size() || span.end > ablated.log_probs.size() ||
      span.start >= span.end)
    throw Error(ErrorKind::dimension, "span out of range for forward result");
  double total = 0.0;
  for (std::size_t t = span.start; t < span.end; ++t)
    total += baseline.log_probs[t] - ablated.log_probs[t];
  return total;
}

AblationRecord ablation_effect(const ToyModel& model, const ToyExample& example,
                               const ForwardResult& baseline, const Span& span,
                               std::span<const std::uint8_t> token_mask) {
  auto before = model.passes();
  ForwardResult ablated = model.forward(example, token_mask, false);
  AblationRecord rec;
  for (std::size_t t = span.start; t < span.end; ++t)
    rec.token_deltas.push_back(baseline.log_probs[t] - ablated.log_probs[t]);
  rec.span_delta = span_delta(baseline, ablated, span);
  rec.passes_used = model.passes() - before;
  return rec;
}

std::vector<std::vector<double>> per_region_effects(const ToyModel& model,
                                                    const ToyExample& example,
                                                    const ForwardResult& baseline,
                                                    const RegionPartition& partition) {
  std::vector<std::vector<double>> out(example.spans.size(),
                                       std::vector<double>(partition.num_regions()));
  for (std::size_t k = 0; k < partition.num_regions(); ++k) {
    std::size_t region[] = {k};
    auto mask = token_mask_for_regions(partition, region);
    ForwardResult ablated = model.forward(example, mask, false);
    for (std::size_t s = 0; s < example.spans.size(); ++s)
      out[s][k] = span_delta(baseline, ablated, example.spans[s]);
  }
  return out;
}

double planted_region_effect(const ToyExample& example, const RegionPartition& partition,
                             const Span& span, std::size_t region) {
  if (!example.planted()) throw Error(ErrorKind::invalid_argument, "example has no plant");
  const std::size_t m = example.num_tokens();
  double total = 0.0;
  for (std::size_t t = span.start; t < span.end; ++t)
    for (auto i : partition.members(region)) total += example.plant_contrib[t * m + i];
  return total;
}

RegionPartition make_partition(const AttentionTrace& trace, const PartitionOptions& options) {
  switch (options.method) {
    case PartitionMethod::agglomerative:
      return cluster_agglomerative(feature_view(trace), trace.grid,
                                   AgglomerativeOptions{options.tau, {}, {}});
    case PartitionMethod::tokenwise:
      return partition_tokenwise(trace.grid);
    case PartitionMethod::random_blocks:
      return partition_random_blocks(trace.grid, options.regions, options.seed);
    case PartitionMethod::voronoi:
      return partition_voronoi(trace.grid, options.regions);
    case PartitionMethod::kmeans:
      return cluster_kmeans(feature_view(trace), trace.grid, options.regions, options.seed).partition;
  }
  throw Error(ErrorKind::invalid_argument, "unknown partition method");
}

CollectedData generate_dataset(const ToyModel& model, const CollectOptions& options) {
  if (options.examples == 0) throw Error(ErrorKind::invalid_argument, "examples must be positive");
  if (!options.explicit_masks && options.masks_per_sample < 2)
    throw Error(ErrorKind::invalid_argument, "need at least two masks per sample");
  if (options.noise_fraction < 0.0)
    throw Error(ErrorKind::invalid_argument, "noise fraction must be non-negative");

  CollectedData data;
  const auto start_passes = model.passes();
  for (std::uint32_t e = 0; e < options.examples; ++e) {
    const std::uint32_t index = options.first_example + e;
    ToyExample ex = model.make_example(index);
    ForwardResult base = model.forward(ex, {}, true);
    AttentionTrace trace = model.trace_of(ex, base);
    RegionPartition partition = make_partition(trace, options.partition);
    if (model.spec().mode == OracleMode::planted_linear) model.attach_plant(ex, partition, base);
    const std::size_t k = partition.num_regions();

    std::vector<MaskSample> masks;
    if (options.explicit_masks) {
      masks = *options.explicit_masks;
    } else {
      masks = sample_masks(k, options.masks_per_sample, derive_seed(options.seed, index, 2));
    }
    if (options.include_singletons) {
      for (std::size_t r = 0; r < k; ++r) {
        MaskSample one = MaskSample::retain_all(k);
        one.retained[r] = 0;
        masks.push_back(one);
      }
    }

    std::vector<TrainingSample> samples(ex.spans.size());
    for (std::size_t s = 0; s < ex.spans.size(); ++s) {
      samples[s].features = pool_span_region(trace, trace.spans[s], partition);
      samples[s].masks = masks;
      samples[s].example = index;
      samples[s].span_index = static_cast<std::uint32_t>(s);
    }
    for (const auto& mask : masks) {
      ForwardResult ablated = model.forward(ex, token_mask(partition, mask), false);
      for (std::size_t s = 0; s < ex.spans.size(); ++s)
        samples[s].targets.push_back(span_delta(base, ablated, ex.spans[s]));
    }
    if (options.noise_fraction > 0.0) {
      std::mt19937_64 rng(derive_seed(options.seed, index, 3));
      for (auto& sample : samples) {
        const auto& y = sample.targets;
        double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
        double var = 0.0;
        for (double v : y) var += (v - mean) * (v - mean);
        double sigma = options.noise_fraction * std::sqrt(var / static_cast<double>(y.size()));
        if (sigma <= 0.0) continue;
        std::normal_distribution<double> nd(0.0, sigma);
        for (auto& v : sample.targets) v += nd(rng);
      }
    }
    for (auto& sample : samples) data.training.samples.push_back(std::move(sample));
    data.examples.push_back({std::move(trace), std::move(partition)});
  }

  auto& mf = data.manifest;
  mf.examples = options.examples;
  mf.first_example = options.first_example;
  mf.spans = static_cast<std::uint32_t>(data.training.samples.size());
  mf.passes = model.passes() - start_passes;
  mf.seed = options.seed;
  mf.mode = model.spec().mode;
  mf.masks_per_sample = options.explicit_masks
                            ? static_cast<std::uint32_t>(options.explicit_masks->size())
                            : options.masks_per_sample;
  mf.noise_fraction = options.noise_fraction;
  mf.spec = model.spec();
  mf.partition = options.partition;
  return data;
}

}  // namespace attrstream
