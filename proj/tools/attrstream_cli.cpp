#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "attrstream/error.hpp"
#include "attrstream/estimator.hpp"
#include "attrstream/evaluation.hpp"
#include "attrstream/io_json.hpp"
#include "attrstream/log.hpp"
#include "attrstream/oracle.hpp"
#include "attrstream/streaming.hpp"
#include "attrstream/trace.hpp"
#include "attrstream/trajectory.hpp"
#include "attrstream/unitization.hpp"

namespace fs = std::filesystem;
using namespace attrstream;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return 3;
    case ErrorKind::format:
    case ErrorKind::bad_magic:
    case ErrorKind::truncated:
    case ErrorKind::version:
    case ErrorKind::checksum:
    case ErrorKind::validation: return 4;
    case ErrorKind::dimension: return 5;
    default: return 1;
  }
}

void report(std::string_view kind, std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::cerr << "error: kind=" << kind << " msg=" << msg << '\n';
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::io, "no such file: " + path);
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir + ": " + ec.message());
  return fs::path(dir);
}

std::string example_name(std::uint32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "example_%06u", index);
  return buf;
}

// Flat key=value lines become --key=value arguments placed ahead of the
// command line ones, so explicit flags win.
std::vector<std::string> config_args(const std::string& path) {
  require_file(path);
  std::istringstream in(read_text_file(path));
  std::vector<std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string{};
      auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::format, path + ":" + std::to_string(n) + ": expected key=value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty() || key == "config")
      throw Error(ErrorKind::format, path + ":" + std::to_string(n) + ": bad key");
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

struct Common {
  std::uint64_t seed = 42;
  std::string config;
  std::string out;
  std::string log_level = "info";
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--config", c.config, "key=value file; explicit flags take precedence");
  auto* o = sub->add_option("--out", c.out, "output path");
  if (out_required) o->required();
  sub->add_option("--log-level", c.log_level, "debug|info|warn|error|off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));
}

void apply_log_level(const std::string& level) {
  static const std::map<std::string, log::Level> levels{{"debug", log::Level::debug},
                                                        {"info", log::Level::info},
                                                        {"warn", log::Level::warn},
                                                        {"error", log::Level::error},
                                                        {"off", log::Level::off}};
  log::set_threshold(levels.at(level));
}

struct ModelFlags {
  std::string mode = "nonlinear";
  std::uint64_t model_seed = 42;
  std::uint32_t layers = 2, heads = 4, steps = 48, spans = 4;
  double temperature = 0.1;
};

void add_model(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--mode", m.mode, "oracle: nonlinear|planted");
  sub->add_option("--model-seed", m.model_seed, "seed of the toy model weights");
  sub->add_option("--layers", m.layers);
  sub->add_option("--heads", m.heads);
  sub->add_option("--steps", m.steps, "generated tokens per example");
  sub->add_option("--spans", m.spans, "spans per example");
  sub->add_option("--temperature", m.temperature);
}

ToyModelSpec make_spec(const ModelFlags& m) {
  ToyModelSpec s;
  s.mode = parse_oracle_mode(m.mode);
  s.seed = m.model_seed;
  s.num_layers = m.layers;
  s.num_heads = m.heads;
  s.steps = m.steps;
  s.spans = m.spans;
  s.temperature = m.temperature;
  s.validate();
  return s;
}

struct PartitionFlags {
  std::string method = "agglomerative";
  double tau = 0.5;
  std::size_t regions = 16;
};

void add_partition(CLI::App* sub, PartitionFlags& p) {
  sub->add_option("--method", p.method,
                  "agglomerative|tokenwise|random_blocks|voronoi|kmeans");
  sub->add_option("--tau", p.tau, "merge threshold for agglomerative clustering");
  sub->add_option("--regions", p.regions, "K for fixed-K methods");
}

PartitionOptions make_partition_options(const PartitionFlags& p, std::uint64_t seed) {
  PartitionOptions o;
  o.method = parse_partition_method(p.method);
  o.tau = p.tau;
  o.regions = p.regions;
  o.seed = seed;
  return o;
}

// -- unitize -----------------------------------------------------------------

struct UnitizeArgs {
  Common c;
  PartitionFlags p;
  std::string trace;
};

void run_unitize(const UnitizeArgs& a) {
  require_file(a.trace);
  auto trace = load_trace_file(a.trace);
  auto partition = make_partition(trace, make_partition_options(a.p, a.c.seed));
  log::info("partition: ", partition.num_regions(), " regions over ", partition.num_tokens(),
            " tokens");
  write_text_file(a.c.out, to_json(partition).dump(2) + "\n");
}

// -- collect -----------------------------------------------------------------

struct CollectArgs {
  Common c;
  ModelFlags m;
  PartitionFlags p;
  std::uint32_t examples = 100;
  std::uint32_t first = 0;
  std::uint32_t masks = 32;
  double noise = 0.0;
  bool singletons = false;
  bool write_traces = true;
};

void run_collect(const CollectArgs& a) {
  ToyModel model(make_spec(a.m));
  CollectOptions o;
  o.examples = a.examples;
  o.first_example = a.first;
  o.partition = make_partition_options(a.p, a.c.seed);
  o.masks_per_sample = a.masks;
  o.seed = a.c.seed;
  o.noise_fraction = a.noise;
  o.include_singletons = a.singletons;
  auto data = generate_dataset(model, o);

  auto dir = ensure_dir(a.c.out);
  {
    std::ostringstream s;
    write_training_set(data.training, s);
    write_text_file((dir / "training.jsonl").string(), s.str());
  }
  write_text_file((dir / "manifest.json").string(), to_json(data.manifest).dump(2) + "\n");
  if (a.write_traces) {
    auto traces = ensure_dir((dir / "traces").string());
    auto parts = ensure_dir((dir / "partitions").string());
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
      auto name = example_name(a.first + static_cast<std::uint32_t>(i));
      save_trace_file(data.examples[i].trace, (traces / (name + ".vstrace")).string());
      write_text_file((parts / (name + ".json")).string(),
                      to_json(data.examples[i].partition).dump() + "\n");
    }
  }
  log::info("collected ", data.manifest.examples, " examples, ", data.manifest.spans,
            " spans, ", data.manifest.passes, " forward passes");
}

// -- train -------------------------------------------------------------------

struct TrainArgs {
  Common c;
  TrainConfig t;
  std::string data;
  bool all_samples = false;
};

void run_train(TrainArgs a) {
  require_file(a.data);
  a.t.seed = a.c.seed;
  a.t.correct_only = !a.all_samples;
  std::ifstream in(a.data);
  auto set = read_training_set(in);
  auto result = train(set, a.t);
  auto dir = ensure_dir(a.c.out);
  write_text_file((dir / "weights.json").string(), to_json(result.weights).dump(2) + "\n");
  std::ostringstream s;
  write_loss_history(result.loss_history, s);
  write_text_file((dir / "loss_history.csv").string(), s.str());
  write_text_file((dir / "train_config.txt").string(), a.t.canonical());
  if (!result.loss_history.empty())
    log::info("final loss ", result.loss_history.back(), " over ", set.samples.size(),
              " samples");
}

// -- stream ------------------------------------------------------------------

struct StreamArgs {
  Common c;
  std::string trace, partition, weights;
  bool trace_spans = false;
  bool free_run = false;
  bool timing = false;
  std::size_t capacity = 1024;
};

void run_stream(const StreamArgs& a) {
  for (const auto& f : {a.trace, a.partition, a.weights}) require_file(f);
  auto trace = load_trace_file(a.trace);
  auto partition = partition_from_json(read_json_file(a.partition));
  auto weights = weights_from_json(read_json_file(a.weights));

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.c.out.empty()) {
    file.open(a.c.out, std::ios::binary);
    if (!file) throw Error(ErrorKind::io, "cannot write " + a.c.out);
    out = &file;
  }
  StreamOptions o;
  o.capacity = a.capacity;
  o.trace_spans = a.trace_spans;
  o.lockstep = !a.free_run;
  o.keep_frames = false;
  o.on_frame = [&](const AttributionFrame& f) { *out << to_json(f, a.timing).dump() << '\n' << std::flush; };
  auto result = stream_attribute(trace, partition, weights, o);
  log::info("streamed ", result.spans.size(), " frames over ", result.tokens,
            " tokens, queue high water ", result.queue_high_water);
}

// -- eval --------------------------------------------------------------------

struct EvalArgs {
  Common c;
  ModelFlags m;
  PartitionFlags p;
  std::string weights;
  std::string manifest;
  std::uint32_t examples = 100;
  std::uint32_t first = 100000;
  std::size_t top_k = 5;
  std::uint32_t masks = 32;
  std::string dataset = "toy";
};

void run_eval(const EvalArgs& a) {
  require_file(a.weights);
  auto weights = weights_from_json(read_json_file(a.weights));
  ToyModelSpec spec = make_spec(a.m);
  PartitionOptions popts = make_partition_options(a.p, a.c.seed);
  if (!a.manifest.empty()) {
    require_file(a.manifest);
    auto m = manifest_from_json(read_json_file(a.manifest));
    spec = m.spec;
    popts = m.partition;
  }
  ToyModel model(spec);
  EvalOptions o;
  o.top_k = a.top_k;
  o.masks = a.masks;
  o.seed = a.c.seed;
  o.dataset = a.dataset;
  auto report = evaluate(model, a.first, a.examples, popts, weights, o);
  auto dir = ensure_dir(a.c.out);
  write_text_file((dir / "eval.json").string(), to_json(report).dump(2) + "\n");
  std::ostringstream s;
  write_eval_csv(report, s);
  write_text_file((dir / "eval.csv").string(), s.str());
  for (const auto& m : report.methods)
    log::info(m.method, ": lds ", m.lds_pooled.mean, " top-", report.top_k, " drop ",
              m.top_k_drop.mean, " r2 ", m.r2.mean);
}

// -- trajectory --------------------------------------------------------------

struct TrajectoryArgs {
  Common c;
  std::vector<std::string> frames;
  std::string labels;
  std::size_t r = 32;
  bool pooled = false;
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

std::map<std::string, Outcome> read_labels(const std::string& path) {
  require_file(path);
  std::istringstream in(read_text_file(path));
  std::map<std::string, Outcome> labels;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (n == 1 && line.rfind("id,", 0) == 0)) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw Error(ErrorKind::format, path + ":" + std::to_string(n) + ": expected id,label");
    labels[line.substr(0, comma)] = parse_outcome(line.substr(comma + 1));
  }
  return labels;
}

void run_trajectory(const TrajectoryArgs& a) {
  auto labels = read_labels(a.labels);
  std::vector<Trajectory> trajs;
  for (const auto& path : a.frames) {
    require_file(path);
    std::ifstream in(path);
    Trajectory t;
    t.id = fs::path(path).stem().string();
    for (auto& f : read_frames(in)) t.effects.push_back(std::move(f.region_scores));
    auto it = labels.find(t.id);
    t.outcome = it == labels.end() ? Outcome::unknown : it->second;
    if (t.effects.size() < 2) {
      log::warn(t.id, ": fewer than two steps, skipped");
      continue;
    }
    trajs.push_back(std::move(t));
  }
  if (trajs.empty()) throw Error(ErrorKind::invalid_argument, "no usable trajectories");

  std::vector<CanonicalTrajectory> canon;
  for (const auto& t : trajs) canon.push_back(canonicalize(t.effects, a.r));
  std::optional<PcaFit> shared;
  if (a.pooled) shared = pca_fit_pooled(canon, 3);

  auto dir = ensure_dir(a.c.out);
  auto csv_dir = ensure_dir((dir / "trajectories").string());
  std::map<std::string, std::map<std::string, std::vector<double>>> groups;
  std::vector<Steps> projected;
  std::vector<std::uint8_t> failed;
  Json per = Json::array();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    Steps pts;
    std::vector<double> explained;
    if (shared) {
      pts = pca_apply(*shared, canon[i].steps);
      explained = shared->explained;
    } else {
      auto proj = pca_project(canon[i].steps, 3);
      pts = std::move(proj.points);
      explained = std::move(proj.explained);
    }
    std::ostringstream s;
    write_trajectory_csv(canon[i], pts, s);
    write_text_file((csv_dir / (trajs[i].id + ".csv")).string(), s.str());

    double length = path_length(pts);
    auto tort = tortuosity(pts);
    std::vector<double> conc;
    for (const auto& e : trajs[i].effects) {
      try {
        conc.push_back(concentration(e));
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::degenerate) throw;
      }
    }
    double mean_conc = aggregate(conc).mean;
    std::vector<std::string> names{std::string(to_string(trajs[i].outcome)), "all"};
    if (is_failure(trajs[i].outcome)) names.push_back("failure");
    for (const auto& g : names) {
      groups[g]["path_length"].push_back(length);
      if (!tort.closed_path) groups[g]["tortuosity"].push_back(tort.value);
      if (!conc.empty()) groups[g]["concentration"].push_back(mean_conc);
    }
    Json row{{"id", trajs[i].id},
             {"outcome", to_string(trajs[i].outcome)},
             {"steps", trajs[i].effects.size()},
             {"path_length", length},
             {"closed_path", tort.closed_path},
             {"explained_variance", explained}};
    if (!tort.closed_path) row["tortuosity"] = tort.value;
    per.push_back(row);
    if (trajs[i].outcome != Outcome::unknown) {
      projected.push_back(pts);
      failed.push_back(is_failure(trajs[i].outcome));
    }
  }

  Json summary;
  summary["trajectories"] = trajs.size();
  summary["dimension"] = a.r;
  summary["projection"] = a.pooled ? "pooled" : "per_trajectory";
  Json gj = Json::object();
  for (const auto& [g, metrics] : groups)
    for (const auto& [metric, values] : metrics) gj[g][metric] = to_json(describe(values));
  summary["groups"] = gj;
  const bool both = std::count(failed.begin(), failed.end(), 1) > 0 &&
                    std::count(failed.begin(), failed.end(), 0) > 0;
  if (both) {
    Json curve = Json::array();
    for (const auto& p : failure_auc_curve(projected, failed, a.fractions))
      curve.push_back({{"fraction", p.fraction},
                       {"auc", std::isfinite(p.auc) ? Json(p.auc) : Json(nullptr)},
                       {"used", p.used}});
    summary["failure_auc"] = {{"metric", "tortuosity"}, {"curve", curve}};
  } else {
    log::warn("labels hold a single class; no failure AUC");
  }
  summary["per_trajectory"] = per;
  write_text_file((dir / "summary.json").string(), summary.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming region attribution for attention traces", "attrstream"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  UnitizeArgs ua;
  auto* unitize = app.add_subcommand("unitize", "partition a trace's vision tokens into regions");
  add_common(unitize, ua.c, true);
  add_partition(unitize, ua.p);
  unitize->add_option("--trace", ua.trace, "VSTRACE file")->required();

  CollectArgs ca;
  auto* collect = app.add_subcommand("collect", "generate a training set from the toy oracle");
  add_common(collect, ca.c, true);
  add_model(collect, ca.m);
  add_partition(collect, ca.p);
  collect->add_option("--examples", ca.examples);
  collect->add_option("--first", ca.first, "index of the first example");
  collect->add_option("--masks-per-sample", ca.masks);
  collect->add_option("--noise", ca.noise, "target noise as a fraction of target std");
  collect->add_flag("--singletons", ca.singletons, "add one mask per region");
  collect->add_flag("!--no-traces", ca.write_traces, "skip writing traces and partitions");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "fit estimator weights");
  add_common(trainc, ta.c, true);
  trainc->add_option("--data", ta.data, "training-set JSON lines")->required();
  trainc->add_option("--lr", ta.t.learning_rate);
  trainc->add_option("--min-lr", ta.t.min_learning_rate);
  trainc->add_option("--weight-decay", ta.t.weight_decay);
  trainc->add_option("--warmup", ta.t.warmup_iterations);
  trainc->add_option("--iters", ta.t.iterations);
  trainc->add_option("--batch", ta.t.batch_size);
  trainc->add_option("--masks-per-sample", ta.t.masks_per_sample);
  trainc->add_option("--beta1", ta.t.beta1);
  trainc->add_option("--beta2", ta.t.beta2);
  trainc->add_option("--eps", ta.t.epsilon);
  trainc->add_flag("--all-samples", ta.all_samples, "also train on samples marked incorrect");

  StreamArgs sa;
  auto* stream = app.add_subcommand("stream", "emit per-span attribution frames as NDJSON");
  add_common(stream, sa.c, false);
  stream->add_option("--trace", sa.trace)->required();
  stream->add_option("--partition", sa.partition)->required();
  stream->add_option("--weights", sa.weights)->required();
  stream->add_option("--capacity", sa.capacity, "queue capacity in token rows");
  stream->add_flag("--trace-spans", sa.trace_spans, "use the trace's span table");
  stream->add_flag("--free-run", sa.free_run, "do not wait for each frame before continuing");
  stream->add_flag("--timing", sa.timing, "include timing fields");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "score estimator and baselines against the oracle");
  add_common(evalc, ea.c, true);
  add_model(evalc, ea.m);
  add_partition(evalc, ea.p);
  evalc->add_option("--weights", ea.weights)->required();
  evalc->add_option("--manifest", ea.manifest, "reuse model and partition settings");
  evalc->add_option("--examples", ea.examples);
  evalc->add_option("--first", ea.first, "index of the first held-out example");
  evalc->add_option("--top-k", ea.top_k);
  evalc->add_option("--masks-per-sample", ea.masks, "held-out masks for R^2");
  evalc->add_option("--dataset", ea.dataset);

  TrajectoryArgs ja;
  auto* traj = app.add_subcommand("trajectory", "trajectory metrics from frame logs");
  add_common(traj, ja.c, true);
  traj->add_option("--frames", ja.frames, "NDJSON frame logs")->required()->expected(1, -1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  traj->add_option("--labels", ja.labels, "CSV of id,label")->required();
  traj->add_option("--dims", ja.r, "canonical dimension R");
  traj->add_flag("--pooled", ja.pooled, "one PCA fit over every trajectory");
  traj->add_option("--fractions", ja.fractions, "truncation fractions")
      ->expected(1, -1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  // Pull --config out first so its values can be spliced in ahead of the
  // explicit flags.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) {
        path = args[i + 1];
      } else if (args[i].rfind("--config=", 0) == 0) {
        path = args[i].substr(9);
      } else {
        continue;
      }
      if (args.empty() || args[0].rfind("-", 0) == 0) break;
      auto extra = config_args(path);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
      break;
    }
  } catch (const Error& e) {
    report(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", e.what());
    return 2;
  }

  try {
    if (*unitize) {
      apply_log_level(ua.c.log_level);
      run_unitize(ua);
    } else if (*collect) {
      apply_log_level(ca.c.log_level);
      run_collect(ca);
    } else if (*trainc) {
      apply_log_level(ta.c.log_level);
      run_train(ta);
    } else if (*stream) {
      apply_log_level(sa.c.log_level);
      run_stream(sa);
    } else if (*evalc) {
      apply_log_level(ea.c.log_level);
      run_eval(ea);
    } else if (*traj) {
      apply_log_level(ja.c.log_level);
      run_trajectory(ja);
    }
  } catch (const Error& e) {
    report(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report("internal", e.what());
    return 1;
  }
  return 0;
}
