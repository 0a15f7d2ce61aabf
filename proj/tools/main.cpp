// vibrec: dataset generation, training, evaluation and the experiment suite.
//
// Option precedence: built-in defaults < --config file < command-line flags.
// Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime failure.

#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vibrec/error.hpp"
#include "vibrec_app/commands.hpp"
#include "vibrec_app/run_config.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;
  std::optional<double> beta;
  std::string data;
  std::string checkpoint;
  std::string experiment;
};

vibrec::app::RunConfig resolve(const Flags& f) {
  auto cfg = f.config.empty() ? vibrec::app::RunConfig{} : vibrec::app::load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.variant.empty()) cfg.model.variant = f.variant;
  if (f.beta) cfg.model.beta = *f.beta;
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  if (!f.experiment.empty()) cfg.diagnose.experiment_dir = f.experiment;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information-bottleneck sequence encoder-decoder for cardiac TMP reconstruction"};
  app.require_subcommand(1);
  Flags flags;
  std::function<void(const vibrec::app::RunConfig&)> action;

  auto add = [&](const std::string& name, const std::string& help, void (*fn)(const vibrec::app::RunConfig&)) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Master seed");
    sub->add_option("--out", flags.out, "Output directory");
    sub->callback([&action, fn] { action = fn; });
    return sub;
  };

  add("gen-data", "Simulate a dataset for the configured split plan", vibrec::app::cmd_gen_data);
  auto* train = add("train", "Train one model variant", vibrec::app::cmd_train);
  train->add_option("--variant", flags.variant, "{svs,svs-l}-{stoch,det}");
  train->add_option("--beta", flags.beta, "KL weight for stochastic variants");
  train->add_option("--data", flags.data, "Dataset directory");
  auto* eval = add("eval", "Score a checkpoint on dataset splits", vibrec::app::cmd_eval);
  eval->add_option("--data", flags.data, "Dataset directory");
  eval->add_option("--checkpoint", flags.checkpoint, "Directory holding model.json and params.bin");
  add("exp-pathology", "Four variants across pathology difficulty splits", vibrec::app::cmd_exp_pathology);
  add("exp-rotation", "Stochastic vs deterministic under heart rotation", vibrec::app::cmd_exp_rotation);
  add("exp-beta", "KL weight sweep under heart rotation", vibrec::app::cmd_exp_beta);
  auto* diag = add("diagnose", "Generalization gap, variation and Taylor diagnostics", vibrec::app::cmd_diagnose);
  diag->add_option("--experiment", flags.experiment, "Output directory of exp-pathology");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    action(resolve(flags));
  } catch (const vibrec::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const vibrec::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
