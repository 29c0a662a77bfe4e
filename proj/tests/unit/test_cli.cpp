#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "fedadapt_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(FEDADAPT_CLI) + " " + args + " > " + (kDir / "stdout.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, nlohmann::json j) {
  const fs::path p = kDir / name;
  std::ofstream(p) << j.dump();
  return p;
}

nlohmann::json tiny(const std::string& mode) {
  auto j = nlohmann::json::parse(R"({
    "model": {"layers": 2, "hidden": 8, "heads": 2, "ffn_dim": 16, "vocab": 12, "seqlen": 4, "num_labels": 2},
    "task": {"samples_per_label": 40},
    "federation": {"num_clients": 4, "participants": 2, "groups": 1},
    "fixed": {"depth": 1, "width": 8},
    "reference_rounds": 2,
    "reference_accuracy": 0.5,
    "targets": [0.5],
    "seeds": [1, 2],
    "budget": {"max_rounds": 4}
  })");
  j["mode"] = mode;
  return j;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};

}  // namespace

TEST_F(Cli, RunWritesOneTracePerSeed) {
  const fs::path cfg = write_config("a.json", tiny("fixed_adapter"));
  EXPECT_EQ(run("run --config " + cfg.string() + " --out " + (kDir / "out").string()), 0) << slurp(kDir / "stdout.txt");
  EXPECT_TRUE(fs::exists(kDir / "out" / "fixed_adapter-seed1.jsonl"));
  EXPECT_TRUE(fs::exists(kDir / "out" / "fixed_adapter-seed2.jsonl"));

  EXPECT_EQ(run("report " + (kDir / "out" / "fixed_adapter-seed1.jsonl").string() + " --out " +
                (kDir / "r.json").string()),
            0);
  const auto report = nlohmann::json::parse(slurp(kDir / "r.json"));
  EXPECT_EQ(report["sessions"].size(), 1u);
  EXPECT_GT(report["total_bytes"].get<std::size_t>(), 0u);
}

TEST_F(Cli, UnreachedTargetExitsTwo) {
  auto j = tiny("autofed");
  j["reference_accuracy"] = 1.0;
  j["targets"] = {1.0};
  j["seeds"] = {1};
  j["budget"]["max_rounds"] = 2;
  const fs::path cfg = write_config("b.json", j);
  EXPECT_EQ(run("run --config " + cfg.string() + " --out " + (kDir / "out").string()), 2) << slurp(kDir / "stdout.txt");
}

TEST_F(Cli, ConfigErrorsExitThree) {
  auto j = tiny("autofed");
  j["federation"]["typo"] = 3;
  const fs::path cfg = write_config("c.json", j);
  EXPECT_EQ(run("run --config " + cfg.string()), 3);
  EXPECT_NE(slurp(kDir / "stdout.txt").find("federation.typo"), std::string::npos);
  EXPECT_EQ(run("run --config " + (kDir / "missing.json").string()), 3);
  EXPECT_EQ(run("sweep --config " + cfg.string() + " --depths 1,x --widths 8"), 3);
}

TEST_F(Cli, SweepWritesTable) {
  auto j = tiny("fixed_adapter");
  j["seeds"] = {1};
  const fs::path cfg = write_config("d.json", j);
  EXPECT_EQ(run("sweep --config " + cfg.string() + " --depths 1,2 --widths 8 --out " + (kDir / "sw").string()), 0)
      << slurp(kDir / "stdout.txt");
  const auto table = nlohmann::json::parse(slurp(kDir / "sw" / "sweep.json"));
  ASSERT_EQ(table.size(), 2u);
  EXPECT_EQ(table[1]["depth"], 2);
}

TEST_F(Cli, BadUsageFails) {
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("run"), 0);
  EXPECT_EQ(run("report " + (kDir / "nope.jsonl").string()), 1);
}
