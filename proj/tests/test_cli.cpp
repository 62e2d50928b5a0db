#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "attrstream/io_json.hpp"

namespace fs = std::filesystem;
using attrstream::Json;
using attrstream::read_json_file;
using attrstream::read_text_file;

namespace {

const std::string kCli = ATTRSTREAM_CLI;

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  std::string cmd = kCli + " " + args + " 2>/dev/null";
  Run r{0, {}};
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

int run_err(const std::string& args, std::string& err) {
  auto path = fs::temp_directory_path() / "attrstream_cli_err.txt";
  int status = std::system((kCli + " " + args + " >/dev/null 2>" + path.string()).c_str());
  err = read_text_file(path.string());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("attrstream_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};
fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, CollectAccountsPasses) {
  ASSERT_EQ(run("collect --examples 2 --masks-per-sample 3 --out " + path("c2")).code, 0);
  auto m = read_json_file(path("c2/manifest.json"));
  EXPECT_EQ(m["passes"], 8);
  EXPECT_EQ(m["examples"], 2);
  EXPECT_EQ(m["seed"], 42);
  EXPECT_TRUE(fs::exists(path("c2/traces/example_000001.vstrace")));
  EXPECT_TRUE(fs::exists(path("c2/partitions/example_000000.json")));
}

TEST_F(Cli, PlantedEndToEnd) {
  ASSERT_EQ(run("collect --mode planted --examples 60 --noise 0.05 --out " + path("p")).code, 0);
  ASSERT_EQ(run("train --data " + path("p/training.jsonl") + " --out " + path("pt")).code, 0);
  auto loss = read_text_file(path("pt/loss_history.csv"));
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 2001);
  ASSERT_EQ(run("eval --manifest " + path("p/manifest.json") + " --weights " + path("pt/weights.json") +
                " --examples 20 --out " + path("pe"))
                .code,
            0);
  auto report = read_json_file(path("pe/eval.json"));
  double lds = 0;
  for (const auto& m : report["methods"])
    if (m["method"] == "estimator") lds = m["lds_pooled"]["mean"].get<double>();
  EXPECT_GE(lds, 0.95);
  auto csv = read_text_file(path("pe/eval.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("toy,random,"), std::string::npos);
}

TEST_F(Cli, StreamIsDeterministicAndTrajectoryRuns) {
  ASSERT_EQ(run("collect --examples 4 --masks-per-sample 4 --out " + path("s")).code, 0);
  ASSERT_EQ(run("train --data " + path("s/training.jsonl") + " --iters 20 --out " + path("st")).code, 0);
  std::ofstream labels(path("labels.csv"));
  labels << "id,label\n";
  std::string frames;
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "example_%06d", i);
    std::string args = "stream --trace " + path(std::string("s/traces/") + name + ".vstrace") +
                       " --partition " + path(std::string("s/partitions/") + name + ".json") +
                       " --weights " + path("st/weights.json");
    auto a = run(args), b = run(args);
    ASSERT_EQ(a.code, 0);
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 4);  // one frame per span
    auto first = Json::parse(a.out.substr(0, a.out.find('\n')));
    for (auto key : {"span_id", "token_range", "region_scores", "patch_scores", "tokens_behind"})
      EXPECT_TRUE(first.contains(key));
    std::ofstream(path(std::string(name) + ".ndjson")) << a.out;
    frames += " " + path(std::string(name) + ".ndjson");
    labels << name << ',' << (i % 2 ? "hallucination" : "success") << '\n';
  }
  labels.close();
  ASSERT_EQ(run("trajectory --frames" + frames + " --labels " + path("labels.csv") + " --out " + path("tr")).code, 0);
  auto summary = read_json_file(path("tr/summary.json"));
  EXPECT_EQ(summary["trajectories"], 4);
  EXPECT_TRUE(summary["groups"].contains("success"));
  EXPECT_TRUE(summary["groups"].contains("failure"));
  EXPECT_TRUE(summary.contains("failure_auc"));
  auto csv = read_text_file(path("tr/trajectories/example_000000.csv"));
  EXPECT_EQ(csv.substr(0, 13), "step,e_1,e_2,");
  EXPECT_NE(csv.find(",e_32,x,y,z\n"), std::string::npos);
}

TEST_F(Cli, ConfigFileAndPrecedence) {
  ASSERT_EQ(run("collect --examples 3 --masks-per-sample 4 --no-traces --out " + path("cf")).code, 0);
  std::ofstream(path("train.cfg")) << "# golden\niters=7\nlr = 0.01\nbatch=4\n";
  ASSERT_EQ(run("train --config " + path("train.cfg") + " --data " + path("cf/training.jsonl") + " --out " + path("cf1")).code, 0);
  auto loss = read_text_file(path("cf1/loss_history.csv"));
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 8);
  EXPECT_NE(read_text_file(path("cf1/train_config.txt")).find("lr=0.01\n"), std::string::npos);
  ASSERT_EQ(run("train --config " + path("train.cfg") + " --iters 3 --data " + path("cf/training.jsonl") + " --out " + path("cf2")).code, 0);
  loss = read_text_file(path("cf2/loss_history.csv"));
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 4);
  std::ofstream(path("bad.cfg")) << "warp_speed=9\n";
  EXPECT_EQ(run("train --config " + path("bad.cfg") + " --data " + path("cf/training.jsonl") + " --out " + path("cf3")).code, 2);
}

TEST_F(Cli, ErrorsHaveDistinctCodes) {
  std::string err;
  EXPECT_EQ(run_err("train --data /nonexistent.jsonl --out " + path("x"), err), 3);
  EXPECT_EQ(err.rfind("error: kind=io msg=", 0), 0u);
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1);
  std::ofstream(path("garbage.jsonl")) << "{nope\n";
  EXPECT_EQ(run_err("train --data " + path("garbage.jsonl") + " --out " + path("x"), err), 4);
  EXPECT_EQ(err.rfind("error: kind=format", 0), 0u);
  std::ofstream(path("trace.vstrace")) << "not a trace";
  ASSERT_EQ(run("collect --examples 1 --masks-per-sample 2 --out " + path("d")).code, 0);
  std::ofstream(path("w.json")) << R"({"L": 1, "H": 2, "w": [1, 2]})";
  EXPECT_EQ(run_err("stream --trace " + path("d/traces/example_000000.vstrace") + " --partition " +
                        path("d/partitions/example_000000.json") + " --weights " + path("w.json"),
                    err),
            5);
  EXPECT_EQ(err.rfind("error: kind=dimension", 0), 0u);
  EXPECT_EQ(run_err("stream --trace " + path("trace.vstrace") + " --partition " +
                        path("d/partitions/example_000000.json") + " --weights " + path("w.json"),
                    err),
            4);
  EXPECT_EQ(run_err("collect --bogus 1 --out " + path("x"), err), 2);
  EXPECT_EQ(run_err("", err), 2);
}
