#include "attrstream/io_json.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "attrstream/error.hpp"

namespace attrstream {

namespace {

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::format, std::string(what) + ": " + e.what());
  }
}

const Json& need(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorKind::format, std::string("missing field '") + key + "'");
  return j.at(key);
}

// NaN has no JSON spelling; null stands in for it.
Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Json aggregate_json(const Aggregate& a) {
  return Json{{"mean", number(a.mean)}, {"std", number(a.std)}, {"count", a.count}};
}

Json vector_json(std::span<const double> v) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(number(x));
  return arr;
}

std::string csv_number(double x) {
  if (!std::isfinite(x)) return "";
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

}  // namespace

Json to_json(const RegionPartition& partition) {
  std::string bits;
  for (auto b : partition.membership()) bits.push_back(b ? '1' : '0');
  return Json{{"method", to_string(partition.method())},
              {"K", partition.num_regions()},
              {"grid_dims", {partition.grid().rows, partition.grid().cols}},
              {"membership", bits}};
}

RegionPartition partition_from_json(const Json& j) {
  return guarded("partition", [&] {
    auto method = parse_partition_method(need(j, "method").get<std::string>());
    auto k = need(j, "K").get<std::size_t>();
    auto dims = need(j, "grid_dims").get<std::vector<std::uint32_t>>();
    if (dims.size() != 2) throw Error(ErrorKind::format, "grid_dims must have two entries");
    GridDims grid{dims[0], dims[1]};
    auto bits = need(j, "membership").get<std::string>();
    if (bits.size() != k * grid.cells())
      throw Error(ErrorKind::dimension, "membership has " + std::to_string(bits.size()) +
                                            " bits, expected K*M = " +
                                            std::to_string(k * grid.cells()));
    std::vector<std::uint8_t> m(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] != '0' && bits[i] != '1')
        throw Error(ErrorKind::format, "membership must be a 0/1 string");
      m[i] = bits[i] == '1';
    }
    return RegionPartition::from_membership(method, grid, k, m);
  });
}

std::string mask_bits(const MaskSample& mask) {
  std::string s;
  for (auto b : mask.retained) s.push_back(b ? '1' : '0');
  return s;
}

MaskSample mask_from_bits(const std::string& bits) {
  MaskSample m;
  for (char c : bits) {
    if (c != '0' && c != '1') throw Error(ErrorKind::format, "mask must be a 0/1 string");
    m.retained.push_back(c == '1');
  }
  return m;
}

Json to_json(const TrainingSample& s) {
  Json masks = Json::array();
  for (const auto& m : s.masks) masks.push_back(mask_bits(m));
  return Json{{"K", s.features.num_regions},
              {"L", s.features.num_layers},
              {"H", s.features.num_heads},
              {"F", s.features.values},
              {"masks", masks},
              {"targets", s.targets},
              {"correct", s.correct},
              {"example", s.example},
              {"span", s.span_index},
              {"token_range", {s.features.span.start, s.features.span.end}}};
}

TrainingSample sample_from_json(const Json& j) {
  return guarded("training sample", [&] {
    TrainingSample s;
    s.features.num_regions = need(j, "K").get<std::size_t>();
    s.features.num_layers = need(j, "L").get<std::uint32_t>();
    s.features.num_heads = need(j, "H").get<std::uint32_t>();
    s.features.values = need(j, "F").get<std::vector<double>>();
    if (s.features.values.size() != s.features.num_regions * s.features.dim())
      throw Error(ErrorKind::dimension, "F has " + std::to_string(s.features.values.size()) +
                                            " entries, expected K*L*H");
    for (const auto& b : need(j, "masks")) {
      auto m = mask_from_bits(b.get<std::string>());
      if (m.size() != s.features.num_regions)
        throw Error(ErrorKind::dimension, "mask length differs from K");
      s.masks.push_back(std::move(m));
    }
    s.targets = need(j, "targets").get<std::vector<double>>();
    if (s.targets.size() != s.masks.size())
      throw Error(ErrorKind::dimension, "targets and masks differ in count");
    s.correct = j.value("correct", true);
    s.example = j.value("example", 0u);
    s.span_index = j.value("span", 0u);
    if (j.contains("token_range")) {
      auto r = j.at("token_range").get<std::vector<std::uint32_t>>();
      if (r.size() == 2) s.features.span = Span{r[0], r[1], {}};
    }
    return s;
  });
}

void write_training_set(const TrainingSet& set, std::ostream& out) {
  for (const auto& s : set.samples) out << to_json(s).dump() << '\n';
}

TrainingSet read_training_set(std::istream& in) {
  TrainingSet set;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::format, "line " + std::to_string(n) + ": " + e.what());
    }
    set.samples.push_back(sample_from_json(j));
  }
  return set;
}

Json to_json(const EstimatorWeights& w) {
  return Json{{"L", w.num_layers}, {"H", w.num_heads}, {"w", w.w},
              {"config_hash", w.config_hash}, {"seed", w.seed}};
}

EstimatorWeights weights_from_json(const Json& j) {
  return guarded("weights", [&] {
    EstimatorWeights w;
    w.num_layers = need(j, "L").get<std::uint32_t>();
    w.num_heads = need(j, "H").get<std::uint32_t>();
    w.w = need(j, "w").get<std::vector<double>>();
    if (w.w.size() != w.dim())
      throw Error(ErrorKind::dimension, "weights hold " + std::to_string(w.w.size()) +
                                            " values for L*H = " + std::to_string(w.dim()));
    w.config_hash = j.value("config_hash", std::string{});
    w.seed = j.value("seed", std::uint64_t{0});
    return w;
  });
}

Json to_json(const Manifest& m) {
  const auto& s = m.spec;
  return Json{{"examples", m.examples},
              {"first_example", m.first_example},
              {"spans", m.spans},
              {"passes", m.passes},
              {"seed", m.seed},
              {"mode", to_string(m.mode)},
              {"masks_per_sample", m.masks_per_sample},
              {"noise_fraction", m.noise_fraction},
              {"model",
               {{"L", s.num_layers},
                {"H", s.num_heads},
                {"grid_dims", {s.grid.rows, s.grid.cols}},
                {"model_dim", s.model_dim},
                {"feature_dim", s.feature_dim},
                {"classes", s.num_classes},
                {"steps", s.steps},
                {"spans", s.spans},
                {"relevant_heads", s.relevant_heads},
                {"temperature", s.temperature},
                {"seed", s.seed}}},
              {"partition",
               {{"method", to_string(m.partition.method)},
                {"tau", m.partition.tau},
                {"regions", m.partition.regions},
                {"seed", m.partition.seed}}}};
}

Manifest manifest_from_json(const Json& j) {
  return guarded("manifest", [&] {
    Manifest m;
    m.examples = need(j, "examples").get<std::uint32_t>();
    m.first_example = j.value("first_example", 0u);
    m.spans = need(j, "spans").get<std::uint32_t>();
    m.passes = need(j, "passes").get<std::uint64_t>();
    m.seed = need(j, "seed").get<std::uint64_t>();
    m.mode = parse_oracle_mode(need(j, "mode").get<std::string>());
    m.masks_per_sample = j.value("masks_per_sample", 32u);
    m.noise_fraction = j.value("noise_fraction", 0.0);
    if (j.contains("model")) {
      const auto& s = j.at("model");
      m.spec.mode = m.mode;
      m.spec.num_layers = need(s, "L").get<std::uint32_t>();
      m.spec.num_heads = need(s, "H").get<std::uint32_t>();
      auto dims = need(s, "grid_dims").get<std::vector<std::uint32_t>>();
      if (dims.size() != 2) throw Error(ErrorKind::format, "grid_dims must have two entries");
      m.spec.grid = {dims[0], dims[1]};
      m.spec.model_dim = need(s, "model_dim").get<std::uint32_t>();
      m.spec.feature_dim = need(s, "feature_dim").get<std::uint32_t>();
      m.spec.num_classes = need(s, "classes").get<std::uint32_t>();
      m.spec.steps = need(s, "steps").get<std::uint32_t>();
      m.spec.spans = need(s, "spans").get<std::uint32_t>();
      m.spec.relevant_heads = need(s, "relevant_heads").get<std::uint32_t>();
      m.spec.temperature = need(s, "temperature").get<double>();
      m.spec.seed = need(s, "seed").get<std::uint64_t>();
    }
    if (j.contains("partition")) {
      const auto& p = j.at("partition");
      m.partition.method = parse_partition_method(need(p, "method").get<std::string>());
      m.partition.tau = need(p, "tau").get<double>();
      m.partition.regions = need(p, "regions").get<std::size_t>();
      m.partition.seed = need(p, "seed").get<std::uint64_t>();
    }
    return m;
  });
}

Json to_json(const AttributionFrame& f, bool timing) {
  Json j{{"span_id", f.span_id},
         {"token_range", {f.span.start, f.span.end}},
         {"label", f.span.label},
         {"region_scores", vector_json(f.region_scores)},
         {"patch_scores", vector_json(f.patch_scores)},
         {"tokens_behind", f.tokens_behind}};
  if (timing) {
    j["enqueue_ns"] = f.enqueue_ns;
    j["emit_ns"] = f.emit_ns;
    j["compute_ns"] = f.compute_ns;
  }
  return j;
}

AttributionFrame frame_from_json(const Json& j) {
  return guarded("frame", [&] {
    AttributionFrame f;
    f.span_id = need(j, "span_id").get<std::uint32_t>();
    auto r = need(j, "token_range").get<std::vector<std::uint32_t>>();
    if (r.size() != 2 || r[0] > r[1]) throw Error(ErrorKind::format, "bad token_range");
    f.span = Span{r[0], r[1], j.value("label", std::string{})};
    auto nums = [&](const char* key) {
      std::vector<double> v;
      for (const auto& x : need(j, key)) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
      return v;
    };
    f.region_scores = nums("region_scores");
    f.patch_scores = nums("patch_scores");
    f.tokens_behind = j.value("tokens_behind", std::uint64_t{0});
    f.enqueue_ns = j.value("enqueue_ns", std::int64_t{0});
    f.emit_ns = j.value("emit_ns", std::int64_t{0});
    f.compute_ns = j.value("compute_ns", std::int64_t{0});
    return f;
  });
}

std::vector<AttributionFrame> read_frames(std::istream& in) {
  std::vector<AttributionFrame> frames;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      frames.push_back(frame_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::format, "line " + std::to_string(n) + ": " + e.what());
    }
  }
  return frames;
}

Json to_json(const EvalReport& r) {
  Json methods = Json::array();
  for (const auto& m : r.methods) {
    Json per = Json::array();
    for (const auto& e : m.examples)
      per.push_back({{"example", e.example},
                     {"lds", vector_json(e.lds)},
                     {"top_k_drop", vector_json(e.top_k_drop)},
                     {"r2", vector_json(e.r2)}});
    methods.push_back({{"method", m.method},
                       {"lds_pooled", aggregate_json(m.lds_pooled)},
                       {"lds_by_example", aggregate_json(m.lds_by_example)},
                       {"top_k_drop", aggregate_json(m.top_k_drop)},
                       {"r2", aggregate_json(m.r2)},
                       {"per_example", per}});
  }
  return Json{{"dataset", r.dataset}, {"top_k", r.top_k},   {"examples", r.examples},
              {"spans", r.spans},     {"passes", r.passes}, {"methods", methods}};
}

void write_eval_csv(const EvalReport& r, std::ostream& out) {
  out << "dataset,method,top_k,examples,spans,lds_mean,lds_std,lds_by_example_mean,"
         "lds_by_example_std,top_k_drop_mean,top_k_drop_std,r2_mean,r2_std\n";
  for (const auto& m : r.methods) {
    out << r.dataset << ',' << m.method << ',' << r.top_k << ',' << r.examples << ','
        << r.spans << ',' << csv_number(m.lds_pooled.mean) << ',' << csv_number(m.lds_pooled.std)
        << ',' << csv_number(m.lds_by_example.mean) << ',' << csv_number(m.lds_by_example.std)
        << ',' << csv_number(m.top_k_drop.mean) << ',' << csv_number(m.top_k_drop.std) << ','
        << csv_number(m.r2.mean) << ',' << csv_number(m.r2.std) << '\n';
  }
}

void write_loss_history(std::span<const double> losses, std::ostream& out) {
  out << "iteration,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << csv_number(losses[i]) << '\n';
}

void write_trajectory_csv(const CanonicalTrajectory& canonical, const Steps& projected,
                          std::ostream& out) {
  if (projected.size() != canonical.steps.size())
    throw Error(ErrorKind::dimension, "projection and trajectory differ in length");
  static const char* kAxes[] = {"x", "y", "z"};
  const std::size_t r = canonical.steps.empty() ? 0 : canonical.steps.front().size();
  const std::size_t p = projected.empty() ? 0 : projected.front().size();
  out << "step";
  for (std::size_t c = 0; c < r; ++c) out << ",e_" << c + 1;
  for (std::size_t c = 0; c < p; ++c) out << ',' << (c < 3 ? kAxes[c] : "p" + std::to_string(c + 1));
  out << '\n';
  for (std::size_t s = 0; s < projected.size(); ++s) {
    out << s;
    for (double v : canonical.steps[s]) out << ',' << csv_number(v);
    for (double v : projected[s]) out << ',' << csv_number(v);
    out << '\n';
  }
}

Json to_json(const Distribution& d) {
  return Json{{"count", d.count},   {"mean", number(d.mean)},     {"std", number(d.std)},
              {"min", number(d.min)}, {"q1", number(d.q1)},       {"median", number(d.median)},
              {"q3", number(d.q3)},   {"max", number(d.max)}};
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Json read_json_file(const std::string& path) {
  auto text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::format, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

}  // namespace attrstream
