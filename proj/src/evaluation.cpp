#include "attrstream/evaluation.hpp"

#include <cmath>
#include <limits>

#include "attrstream/error.hpp"

namespace attrstream {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double safe(auto&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::degenerate && e.kind() != ErrorKind::invalid_argument) throw;
    return kNaN;
  }
}

void summarize(MethodReport& report) {
  std::vector<double> pooled, by_example, drops, r2;
  for (const auto& ex : report.examples) {
    pooled.insert(pooled.end(), ex.lds.begin(), ex.lds.end());
    by_example.push_back(aggregate(ex.lds).count ? aggregate(ex.lds).mean : kNaN);
    drops.insert(drops.end(), ex.top_k_drop.begin(), ex.top_k_drop.end());
    r2.insert(r2.end(), ex.r2.begin(), ex.r2.end());
  }
  report.lds_pooled = aggregate(pooled);
  report.lds_by_example = aggregate(by_example);
  report.top_k_drop = aggregate(drops);
  report.r2 = aggregate(r2);
}

}  // namespace

const MethodReport& EvalReport::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.method == name) return m;
  throw Error(ErrorKind::invalid_argument, "no method named " + name + " in report");
}

EvalCase prepare_case(const ToyModel& model, std::uint32_t index, RegionPartition partition) {
  EvalCase c;
  c.example = model.make_example(index);
  c.baseline = model.forward(c.example, {}, true);
  c.trace = model.trace_of(c.example, c.baseline);
  if (partition.num_tokens() != c.example.num_tokens())
    throw Error(ErrorKind::dimension, "partition does not match example " + std::to_string(index));
  c.partition = std::move(partition);
  if (model.spec().mode == OracleMode::planted_linear)
    model.attach_plant(c.example, c.partition, c.baseline);
  return c;
}

EvalCase prepare_case(const ToyModel& model, std::uint32_t index, const PartitionOptions& options) {
  EvalCase c;
  c.example = model.make_example(index);
  c.baseline = model.forward(c.example, {}, true);
  c.trace = model.trace_of(c.example, c.baseline);
  c.partition = make_partition(c.trace, options);
  if (model.spec().mode == OracleMode::planted_linear)
    model.attach_plant(c.example, c.partition, c.baseline);
  return c;
}

EvalReport evaluate(const ToyModel& model, std::span<const EvalCase> cases,
                    const EstimatorWeights& weights, const EvalOptions& options) {
  if (weights.dim() != static_cast<std::size_t>(model.spec().num_layers) * model.spec().num_heads)
    throw Error(ErrorKind::dimension, "weights have " + std::to_string(weights.dim()) +
                                          " entries, model has " +
                                          std::to_string(model.spec().num_layers *
                                                         model.spec().num_heads) +
                                          " heads");
  const auto start = model.passes();
  EvalReport report;
  report.dataset = options.dataset;
  report.top_k = options.top_k;
  report.methods = {{"estimator", {}, {}, {}, {}, {}}, {"attention", {}, {}, {}, {}, {}},
                    {"random", {}, {}, {}, {}, {}}};

  for (const auto& c : cases) {
    const auto& part = c.partition;
    const std::size_t k = part.num_regions();
    auto effects = per_region_effects(model, c.example, c.baseline, part);
    auto masks = sample_masks(k, options.masks, derive_seed(options.seed, c.example.index, 20));
    std::vector<ForwardResult> masked;
    masked.reserve(masks.size());
    for (const auto& m : masks) masked.push_back(model.forward(c.example, token_mask(part, m), false));

    std::vector<ExampleMetrics> per_method(report.methods.size());
    for (auto& pm : per_method) pm.example = c.example.index;
    for (std::size_t s = 0; s < c.trace.spans.size(); ++s) {
      const Span& span = c.trace.spans[s];
      auto features = pool_span_region(c.trace, span, part);
      std::vector<std::vector<double>> scores = {
          score_regions(weights, features), attention_baseline(c.trace, span, part),
          random_baseline(k, derive_seed(options.seed, c.example.index, 1000 + s))};
      std::vector<double> actual;
      for (std::size_t j = 0; j < masks.size(); ++j)
        actual.push_back(span_delta(c.baseline, masked[j], span));

      for (std::size_t m = 0; m < scores.size(); ++m) {
        const auto& sc = scores[m];
        per_method[m].lds.push_back(safe([&] { return lds(sc, effects[s]); }));
        per_method[m].top_k_drop.push_back(
            top_k_drop(model, c.example, c.baseline, part, span, sc, options.top_k));
        std::vector<double> predicted;
        for (const auto& mask : masks) {
          double p = 0.0;
          for (std::size_t r = 0; r < k; ++r)
            if (!mask.retained[r]) p += sc[r];
          predicted.push_back(p);
        }
        per_method[m].r2.push_back(safe([&] { return r_squared(predicted, actual); }));
      }
      ++report.spans;
    }
    for (std::size_t m = 0; m < per_method.size(); ++m)
      report.methods[m].examples.push_back(std::move(per_method[m]));
    ++report.examples;
  }
  for (auto& m : report.methods) summarize(m);
  report.passes = model.passes() - start;
  return report;
}

EvalReport evaluate(const ToyModel& model, std::uint32_t first, std::uint32_t count,
                    const PartitionOptions& partition, const EstimatorWeights& weights,
                    const EvalOptions& options) {
  std::vector<EvalCase> cases;
  cases.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) cases.push_back(prepare_case(model, first + e, partition));
  return evaluate(model, cases, weights, options);
}

}  // namespace attrstream
