#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("flatmin-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream cfg(dir_ / "small.toml");
    cfg << R"([experiment]
presets = ["sgd-fast", "rsgd-slow"]
restarts = 2
threads = 1

[dataset]
inputs = 30
teacher_hidden = 3
train_size = 200
test_size = 100

[model]
hidden = 3

[flatness]
sigma_points = 3
sigma_samples = 5
d_points = 3
entropy_samples = 10

[preset.sgd-fast]
max_epochs = 200

[preset.rsgd-slow]
replicas = 3
max_epochs = 10
)";
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(FLATMIN_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
  }

  static json last_json_line(const std::string& text) {
    std::stringstream ss(text);
    std::string line, last;
    while (std::getline(ss, line))
      if (!line.empty() && line.front() == '{') last = line;
    return json::parse(last);
  }

  std::string cfg() const { return (dir_ / "small.toml").string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, ExperimentThenReport) {
  const fs::path out = dir_ / "exp";
  const auto r = run("experiment --config " + cfg() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(last_json_line(r.out)["status"], "ok");
  for (const char* f : {"config.toml", "records.json", "records.csv", "summary.csv", "summary.json", "pairwise.csv",
                        "plot-energy.csv", "plot-entropy.csv", "test-errors.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_TRUE(fs::exists(out / "weights" / "sgd-fast-1.csv"));
  EXPECT_TRUE(fs::exists(out / "profiles" / "rsgd-slow-0-entropy.csv"));
  const json recs = json::parse(slurp(out / "records.json"));
  EXPECT_EQ(recs.size(), 4u);

  const std::string summary = slurp(out / "summary.csv");
  fs::remove(out / "summary.csv");
  const auto rep = run("report --out " + out.string());
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(slurp(out / "summary.csv"), summary);
  EXPECT_TRUE(json::parse(rep.out).contains("presets"));
}

TEST_F(Cli, SeedRestartsAndBudgetFlags) {
  const fs::path out = dir_ / "flags";
  const auto r = run("experiment --config " + cfg() + " --preset sgd-fast --seed 77 --restarts 3 --budget per-replica --out " +
                     out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const json recs = json::parse(slurp(out / "records.json"));
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[2]["seed"], 79);
  EXPECT_NE(slurp(out / "config.toml").find("per-replica"), std::string::npos);
}

TEST_F(Cli, TrainGenDataAndFlatness) {
  const fs::path out = dir_ / "one";
  const auto t = run("train --config " + cfg() + " --preset sgd-fast --out " + out.string());
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(last_json_line(t.out)["preset"], "sgd-fast");
  const auto f = run("flatness --config " + cfg() + " --weights " + (out / "weights" / "sgd-fast-0.csv").string() +
                     " --out " + (dir_ / "flat").string());
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_TRUE(fs::exists(dir_ / "flat" / "sgd-fast-0-entropy.csv"));
  const auto g = run("gen-data --config " + cfg() + " --seed 5 --out " + (dir_ / "data").string());
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_TRUE(fs::exists(dir_ / "data" / "dataset.fmds"));
}

TEST_F(Cli, ErrorsAreMachineReadable) {
  struct Case {
    std::string args;
    std::string kind;
  };
  const std::vector<Case> cases{
      {"", "usage"},
      {"experiment --budget sometimes", "usage"},
      {"experiment --config " + cfg() + " --preset nope --out " + (dir_ / "x").string(), "invalid-argument"},
      {"train --config " + cfg() + " --out " + (dir_ / "x").string(), "usage"},
      {"report --out " + (dir_ / "missing").string(), "runtime"},
  };
  for (const auto& c : cases) {
    const auto r = run(c.args);
    EXPECT_NE(r.code, 0) << c.args;
    const json err = last_json_line(r.err);
    EXPECT_EQ(err["status"], "error") << c.args;
    EXPECT_EQ(err["kind"], c.kind) << c.args << "\n" << r.err;
    EXPECT_TRUE(err.contains("message"));
  }
  std::ofstream(dir_ / "broken.toml") << "[experiment]\nrestarts = \"two\"\n";
  const auto b = run("experiment --config " + (dir_ / "broken.toml").string());
  EXPECT_EQ(b.code, 2);
  EXPECT_EQ(last_json_line(b.err)["kind"], "invalid-argument");
}
