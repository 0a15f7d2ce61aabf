// Drives the installed command-line tool end to end on a tiny configuration.

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "test_util.hpp"
#include "vibrec/json_io.hpp"

namespace fs = std::filesystem;
using vibrec::testing::slurp;
using vibrec::testing::TempDir;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(VIBREC_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string tiny() { return std::string("--config ") + VIBREC_TINY_CONFIG; }

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t columns(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("no-such-command"), 1);
  EXPECT_EQ(run("gen-data --config /nonexistent.json"), 1);
  EXPECT_EQ(run("train --beta notanumber"), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, RejectsUnknownConfigKeys) {
  TempDir dir("cli_cfg");
  vibrec::write_text_file(dir.path() / "bad.json", R"({"seed": 1, "modle": {}})");
  EXPECT_EQ(run("gen-data --config " + (dir.path() / "bad.json").string() + " --out " + (dir.path() / "o").string()), 1);
  vibrec::write_text_file(dir.path() / "bad2.json", R"({"model": {"variant": "svs-sideways"}})");
  EXPECT_EQ(run("gen-data --config " + (dir.path() / "bad2.json").string() + " --out " + (dir.path() / "o").string()), 1);
}

TEST(Cli, TrainAndEvalRequireInputs) {
  TempDir dir("cli_req");
  EXPECT_EQ(run("train " + tiny() + " --out " + dir.path().string()), 1);
  EXPECT_EQ(run("eval " + tiny() + " --out " + dir.path().string()), 1);
}

TEST(Cli, GenTrainEvalPipeline) {
  TempDir dir("cli_pipe");
  const fs::path data = dir.path() / "data", model = dir.path() / "model", ev = dir.path() / "eval";
  ASSERT_EQ(run("gen-data " + tiny() + " --out " + data.string()), 0);
  EXPECT_TRUE(fs::exists(data / "manifest.json"));
  EXPECT_TRUE(fs::exists(data / "config.json"));
  EXPECT_TRUE(fs::exists(data / "inputs.json"));
  ASSERT_EQ(run("train " + tiny() + " --variant svs-det --data " + data.string() + " --out " + model.string()), 0);
  EXPECT_TRUE(fs::exists(model / "model.json"));
  ASSERT_EQ(run("eval " + tiny() + " --data " + data.string() + " --checkpoint " + model.string() + " --out " + ev.string()), 0);
  const auto m = lines(ev / "metrics.csv");
  ASSERT_GE(m.size(), 2u);
  EXPECT_EQ(m.front(), "case_id,split,mse,tmp_corr,at_corr,dice,quality_flags");
  // 7 angles x (2 cases + 1 aggregate row).
  EXPECT_EQ(m.size(), 1u + 21u);
  EXPECT_EQ(std::count_if(m.begin(), m.end(), [](const std::string& l) { return l.rfind("AGG:", 0) == 0; }), 7);
  // A checkpoint trained on a different lead count does not fit the data.
  const fs::path cfg4 = dir.path() / "leads4.json", other = dir.path() / "other";
  vibrec::write_text_file(cfg4, R"({"grid": {"nx": 6, "ny": 6, "leads": 4, "ring_radius": 15.0},
    "sim": {"n_steps": 800}, "data": {"plan": "rotation-i", "n_train": 5, "n_test": 2, "n_per_angle": 1,
    "angle_min": -1, "angle_max": 1}})");
  ASSERT_EQ(run("gen-data --config " + cfg4.string() + " --out " + other.string()), 0);
  EXPECT_EQ(run("eval " + tiny() + " --data " + other.string() + " --checkpoint " + model.string() + " --out " +
                (dir.path() / "ev2").string()),
            1);
}

TEST(Cli, FlagsOverrideConfigFile) {
  TempDir dir("cli_prec");
  ASSERT_EQ(run("gen-data " + tiny() + " --seed 77 --out " + dir.path().string()), 0);
  const auto cfg = vibrec::read_json_file(dir.path() / "config.json");
  EXPECT_EQ(cfg.at("seed").get<std::uint64_t>(), 77u);
  EXPECT_EQ(cfg.at("grid").at("nx").get<int>(), 6);
}

TEST(Cli, ExperimentCsvShapes) {
  TempDir dir("cli_exp");
  const fs::path beta = dir.path() / "beta";
  ASSERT_EQ(run("exp-beta " + tiny() + " --out " + beta.string()), 0);
  const auto b = lines(beta / "beta.csv");
  // (2 betas + det reference) x 7 angles.
  ASSERT_EQ(b.size(), 1u + 3u * 7u);
  for (const auto& l : b) EXPECT_EQ(columns(l), 14u) << l;

  const fs::path path = dir.path() / "pathology";
  ASSERT_EQ(run("exp-pathology " + tiny() + " --out " + path.string()), 0);
  const auto t1 = lines(path / "table1.csv");
  ASSERT_EQ(t1.size(), 5u);
  for (const auto& l : t1) EXPECT_EQ(columns(l), 12u) << l;
  const auto f2 = lines(path / "fig2.csv");
  EXPECT_EQ(f2.size(), 1u + 64u);
  EXPECT_EQ(f2.front(), "variant,difficulty,metric,mean,std,n_seeds");

  const fs::path diag = dir.path() / "diag";
  ASSERT_EQ(run("diagnose " + tiny() + " --experiment " + path.string() + " --out " + diag.string()), 0);
  const auto report = vibrec::read_json_file(diag / "theory_report.json");
  EXPECT_TRUE(report.contains("variants"));
  EXPECT_TRUE(report.at("gaussian_oracle").at("all_bounds_hold").get<bool>());
}

TEST(Cli, RerunsAreByteIdentical) {
  TempDir dir("cli_det");
  const fs::path a = dir.path() / "a", b = dir.path() / "b";
  ASSERT_EQ(run("exp-rotation " + tiny() + " --out " + a.string()), 0);
  ASSERT_EQ(run("exp-rotation " + tiny() + " --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "rotation.csv"), slurp(b / "rotation.csv"));
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    const auto rel = fs::relative(e.path(), a);
    // config.json records the output directory itself.
    if (rel == "config.json" || rel == "inputs.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 10u);
}
