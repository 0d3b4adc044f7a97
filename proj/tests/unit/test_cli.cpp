#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int status = -1;
  std::string out;
};

// Runs the CLI through the shell, capturing stdout and stderr together.
RunResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + DSR_CLI_PATH + "' " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dsr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const std::string data = DSR_DATA_DIR;
    std::ofstream cfg(dir_ / "run.json");
    cfg << R"({
  "presets": ["if-default", "digits"],
  "network": {"arch": "mlp", "classes": 10},
  "train": {"time_steps": 4, "epochs": 2, "batch_size": 16, "seed": 3},
  "data": {
    "format": "idx",
    "train_images": ")" << data << R"(/digits/train-images.idx3-ubyte",
    "train_labels": ")" << data << R"(/digits/train-labels.idx1-ubyte",
    "test_images": ")" << data << R"(/digits/test-images.idx3-ubyte",
    "test_labels": ")" << data << R"(/digits/test-labels.idx1-ubyte",
    "limit_train": 64,
    "limit_test": 40
  }
})";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string config() const { return (dir_ / "run.json").string(); }
  std::string out(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, TrainWritesArtifacts) {
  const auto r = run("train --config " + config() + " --out " + out("a"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(out("a") + "/checkpoint.dsr"));
  EXPECT_TRUE(fs::exists(out("a") + "/config.json"));
  const auto rows = lines(slurp(out("a") + "/metrics.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rfind("epoch,lr,train_loss,reg_loss,train_acc,test_acc,vth_0", 0), 0u);
  EXPECT_EQ(split(rows[1]).size(), split(rows[0]).size());
}

TEST_F(Cli, ZeroEpochsSavesInitialCheckpointAndHeaderOnly) {
  const auto r = run("train --config " + config() + " --epochs 0 --out " + out("z"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(out("z") + "/checkpoint.dsr"));
  EXPECT_EQ(lines(slurp(out("z") + "/metrics.csv")).size(), 1u);
}

TEST_F(Cli, DeterministicRunsAreByteIdentical) {
  ASSERT_EQ(run("train --config " + config() + " --deterministic --out " + out("r1")).status, 0);
  ASSERT_EQ(run("train --config " + config() + " --deterministic --out " + out("r2"), "DSR_THREADS=2").status, 0);
  EXPECT_EQ(slurp(out("r1") + "/metrics.csv"), slurp(out("r2") + "/metrics.csv"));
  EXPECT_EQ(slurp(out("r1") + "/checkpoint.dsr"), slurp(out("r2") + "/checkpoint.dsr"));
  EXPECT_NE(slurp(out("r1") + "/config.json").find("\"deterministic\": true"), std::string::npos);
}

TEST_F(Cli, SeedOverrideChangesTheRun) {
  ASSERT_EQ(run("train --config " + config() + " --epochs 1 --seed 1 --out " + out("s1")).status, 0);
  ASSERT_EQ(run("train --config " + config() + " --epochs 1 --seed 2 --out " + out("s2")).status, 0);
  EXPECT_NE(slurp(out("s1") + "/checkpoint.dsr"), slurp(out("s2") + "/checkpoint.dsr"));
}

TEST_F(Cli, EvalReproducesFinalTestAccuracy) {
  ASSERT_EQ(run("train --config " + config() + " --out " + out("e")).status, 0);
  const auto rows = lines(slurp(out("e") + "/metrics.csv"));
  const double test_acc = std::stod(split(rows.back())[5]);
  const auto r = run("eval --checkpoint " + out("e") + "/checkpoint.dsr --quant-bits 8");
  ASSERT_EQ(r.status, 0) << r.out;
  char expect[64];
  std::snprintf(expect, sizeof expect, "accuracy %.4f (40 samples", test_acc);
  EXPECT_NE(r.out.find(expect), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("8-bit weights"), std::string::npos);
}

TEST_F(Cli, CorruptedCheckpointFails) {
  ASSERT_EQ(run("train --config " + config() + " --epochs 0 --out " + out("c")).status, 0);
  const fs::path ck = out("c") + "/checkpoint.dsr";
  fs::resize_file(ck, fs::file_size(ck) / 2);
  const auto r = run("eval --checkpoint " + ck.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("error:"), std::string::npos);
}

TEST_F(Cli, MissingConfigFails) {
  EXPECT_NE(run("train --config " + out("absent.json") + " --out " + out("m")).status, 0);
}

TEST_F(Cli, UnknownConfigKeyFails) {
  std::ofstream(out("bad.json")) << R"({"train": {"epoch": 3}})";
  const auto r = run("train --config " + out("bad.json") + " --out " + out("b"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("epoch"), std::string::npos);
}

TEST_F(Cli, StaircaseCsv) {
  const auto r = run("analyze staircase --steps 5 --alpha 0.5 --lo 0 --hi 1 --points 11");
  ASSERT_EQ(r.status, 0) << r.out;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0], "current,simulated,closed_form,clamp,e_q");
  EXPECT_EQ(split(rows[6])[0], "0.5");
  EXPECT_EQ(split(rows[6])[1], "0.6");
}

TEST_F(Cli, StaircaseToFile) {
  ASSERT_EQ(run("analyze staircase --points 5 --out " + out("s.csv")).status, 0);
  EXPECT_EQ(lines(slurp(out("s.csv"))).size(), 6u);
}

TEST_F(Cli, EmptyGridFails) {
  EXPECT_EQ(run("analyze staircase --points 0").status, 1);
  EXPECT_EQ(run("analyze decompose --points 0").status, 1);
}

TEST_F(Cli, ConvergenceAndDecomposeRun) {
  const auto c = run("analyze convergence --steps-list 4,16 --widths 4,3");
  ASSERT_EQ(c.status, 0) << c.out;
  EXPECT_EQ(lines(c.out).front(), "steps,err_1,err_max");
  const auto d = run("analyze decompose --points 3 --noise 0,0.2 --steps 8");
  ASSERT_EQ(d.status, 0) << d.out;
  EXPECT_EQ(lines(d.out).size(), 7u);
}

TEST_F(Cli, BadThreadCountFails) {
  const auto r = run("analyze staircase --points 3", "DSR_THREADS=zero");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("DSR_THREADS"), std::string::npos);
}

TEST_F(Cli, MissingSubcommandIsUsageError) {
  EXPECT_NE(run("").status, 0);
  EXPECT_NE(run("train").status, 0);
}

}  // namespace
