#include "vibrec_app/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "vibrec/error.hpp"
#include "vibrec/rng.hpp"
#include "vibrec/theory.hpp"
#include "vibrec/train.hpp"
#include "vibrec_app/content_hash.hpp"

namespace vibrec::app {

namespace fs = std::filesystem;

namespace {

// Test sets of the angle experiments draw from their own seed stream so
// their tissue never coincides with a training case.
constexpr std::uint64_t kAngleTestStream = 0x7e57;
constexpr std::uint64_t kTaylorStream = 0x7a11;
constexpr std::uint64_t kOracleStream = 0x0ac1e;

void log(const std::string& msg) { std::clog << "[vibrec] " << msg << std::endl; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string beta_label(double beta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", beta);
  return buf;
}

fs::path require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is required");
  return path;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out = require_dir(cfg.out, "--out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  return out;
}

/// Writes config.json and inputs.json. The resolved config is itself an input.
void write_provenance(const fs::path& out, const RunConfig& cfg, InputLedger inputs) {
  const std::string text = to_json(cfg).dump(2) + "\n";
  write_text_file(out / "config.json", text);
  inputs.add_bytes("config.json", text);
  write_json_file(out / "inputs.json", inputs.to_json());
}

data::Manifest generate(const RunConfig& cfg, const data::SplitPlan& plan, std::uint64_t base_seed,
                        const fs::path& dir) {
  log("generating " + dir.string());
  return data::generate_dataset(build_geometry(cfg), cfg.sim, plan, base_seed, dir,
                                data::GenerateOptions{cfg.snr_db, cfg.sampling});
}

data::SplitPlan angle_test_plan(const DataConfig& d) {
  data::SplitPlan plan;
  for (int a : test_angles(d)) plan.push_back({sim::angle_tag(a), d.n_per_angle, static_cast<double>(a)});
  return plan;
}

/// Trains one variant on `train_ds` and evaluates it on `splits` of `eval_ds`.
std::vector<metrics::SplitEvaluation> train_and_evaluate(const RunConfig& cfg, const data::Dataset& train_ds,
                                                         const data::Dataset& eval_ds, const std::string& variant,
                                                         double beta, std::uint64_t seed, const fs::path& dir,
                                                         const std::vector<std::string>& splits) {
  const auto mc = model_config(cfg, variant, beta, train_ds.manifest());
  training::TrainConfig tc = cfg.train;
  tc.seed = seed;
  log("training " + dir.string());
  auto result = training::train(train_ds.split("train"), mc, tc, dir);
  std::vector<metrics::SplitEvaluation> evals;
  for (const auto& s : splits) {
    evals.push_back(metrics::evaluate_split(s, eval_ds.split(s), result.model, eval_ds.geometry(), cfg.eval.scar));
  }
  metrics::write_metrics_csv(dir / "metrics.csv", evals);
  return evals;
}

metrics::Aggregate pooled(const std::vector<metrics::SplitEvaluation>& evals) {
  std::vector<metrics::CaseRecord> all;
  for (const auto& e : evals) all.insert(all.end(), e.records.begin(), e.records.end());
  return metrics::aggregate(all);
}

/// Aggregates collected over seeds for one (variant, split) cell.
using SeedAggregates = std::vector<metrics::Aggregate>;

metrics::Aggregate median_aggregate(const SeedAggregates& per_seed) {
  auto pick = [&](auto field) {
    std::vector<double> v;
    for (const auto& a : per_seed) v.push_back(static_cast<double>(a.*field));
    return median(v);
  };
  metrics::Aggregate m;
  m.mse_mean = pick(&metrics::Aggregate::mse_mean);
  m.mse_std = pick(&metrics::Aggregate::mse_std);
  m.tmp_corr_mean = pick(&metrics::Aggregate::tmp_corr_mean);
  m.tmp_corr_std = pick(&metrics::Aggregate::tmp_corr_std);
  m.at_corr_mean = pick(&metrics::Aggregate::at_corr_mean);
  m.at_corr_std = pick(&metrics::Aggregate::at_corr_std);
  m.dice_mean = pick(&metrics::Aggregate::dice_mean);
  m.dice_std = pick(&metrics::Aggregate::dice_std);
  m.n = static_cast<int>(std::lround(pick(&metrics::Aggregate::n)));
  m.n_excluded = static_cast<int>(std::lround(pick(&metrics::Aggregate::n_excluded)));
  return m;
}

constexpr const char* kWideMetricColumns =
    "n,n_excluded,n_seeds,mse_mean,mse_std,tmp_corr_mean,tmp_corr_std,at_corr_mean,at_corr_std,dice_mean,dice_std";

std::string wide_metric_cells(const SeedAggregates& per_seed) {
  const auto m = median_aggregate(per_seed);
  std::ostringstream os;
  os << m.n << ',' << m.n_excluded << ',' << per_seed.size() << ',' << fmt(m.mse_mean) << ',' << fmt(m.mse_std) << ','
     << fmt(m.tmp_corr_mean) << ',' << fmt(m.tmp_corr_std) << ',' << fmt(m.at_corr_mean) << ','
     << fmt(m.at_corr_std) << ',' << fmt(m.dice_mean) << ',' << fmt(m.dice_std);
  return os.str();
}

std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

/// Collects failures without aborting the remaining runs.
struct FailureLog {
  std::vector<std::string> messages;

  template <typename Fn>
  void run(const fs::path& dir, Fn&& fn) {
    try {
      fn();
    } catch (const TrainingError& e) {
      messages.push_back(dir.string() + ": " + e.what());
      std::error_code ec;
      fs::create_directories(dir, ec);
      write_text_file(dir / "FAILED.txt", std::string(e.what()) + "\n");
      log("FAILED " + messages.back());
    }
  }
  void raise_if_any() const {
    if (messages.empty()) return;
    std::string all = std::to_string(messages.size()) + " run(s) failed:";
    for (const auto& m : messages) all += "\n  " + m;
    throw TrainingError(all);
  }
};

}  // namespace

std::vector<int> training_angles(const std::string& plan) {
  if (plan == "rotation-i") return {-2, -1, 0, 1, 2};
  if (plan == "rotation-ii") return {-4, -3, -2, -1, 0, 1, 2, 3, 4, 5};
  throw ConfigError("no training angles for plan '" + plan + "'");
}

std::vector<int> test_angles(const DataConfig& d) {
  std::vector<int> out;
  for (int a = d.angle_min; a <= d.angle_max; ++a) out.push_back(a);
  return out;
}

data::SplitPlan pathology_plan(const DataConfig& d) {
  data::SplitPlan plan{{"train", d.n_train, 0.0}};
  if (d.include_test) {
    for (const auto& tag : sim::pathology_tags()) plan.push_back({tag, d.n_test, 0.0});
  }
  return plan;
}

data::SplitPlan rotation_plan(const DataConfig& d) {
  const auto angles = training_angles(d.plan);
  const int k = static_cast<int>(angles.size());
  if (d.n_train < k) throw ConfigError("data.n_train must cover every training angle");
  data::SplitPlan plan;
  for (int i = 0; i < k; ++i) {
    plan.push_back({"train", d.n_train / k + (i < d.n_train % k ? 1 : 0), static_cast<double>(angles[static_cast<std::size_t>(i)])});
  }
  if (d.include_test) {
    for (const auto& e : angle_test_plan(d)) plan.push_back(e);
  }
  return plan;
}

data::SplitPlan plan_for(const DataConfig& d) {
  return d.plan == "pathology" ? pathology_plan(d) : rotation_plan(d);
}

std::string variant_key(const vib::ModelConfig& m) {
  return std::string(m.arch == vib::Arch::Svs ? "svs" : "svs-l") + (m.stochastic ? "-stoch" : "-det");
}

double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- single-step commands ----------------------------------------------------

void cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out = prepare_out(cfg);
  generate(cfg, plan_for(cfg.data), cfg.seed, out);
  write_provenance(out, cfg, {});
}

void cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const fs::path data_dir = require_dir(cfg.data_dir, "--data");
  const fs::path out = prepare_out(cfg);
  const auto ds = data::Dataset::load(data_dir);
  auto mc = model_config(cfg, cfg.model.variant, cfg.model.beta, ds.manifest());
  training::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  log("training " + mc.variant_name() + " on " + data_dir.string());
  training::train(ds.split("train"), mc, tc, out);
  InputLedger inputs;
  inputs.add_tree(data_dir);
  write_provenance(out, cfg, inputs);
}

void cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  const fs::path data_dir = require_dir(cfg.data_dir, "--data");
  const fs::path ckpt = require_dir(cfg.checkpoint, "--checkpoint");
  const fs::path out = prepare_out(cfg);
  const auto ds = data::Dataset::load(data_dir);
  auto model = vib::Model::load(ckpt);
  std::vector<std::string> splits = cfg.eval.splits;
  if (splits.empty()) {
    for (const auto& s : ds.split_names()) {
      if (s != "train") splits.push_back(s);
    }
  }
  std::vector<metrics::SplitEvaluation> evals;
  for (const auto& s : splits) {
    evals.push_back(metrics::evaluate_split(s, ds.split(s), model, ds.geometry(), cfg.eval.scar));
  }
  metrics::write_metrics_csv(out / "metrics.csv", evals);
  InputLedger inputs;
  inputs.add_tree(data_dir);
  inputs.add_file(ckpt / "model.json");
  inputs.add_file(ckpt / "params.bin");
  write_provenance(out, cfg, inputs);
}

// ---- experiments -------------------------------------------------------------

void cmd_exp_pathology(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out = prepare_out(cfg);
  DataConfig d = cfg.data;
  d.plan = "pathology";
  d.include_test = true;
  const auto& tags = sim::pathology_tags();

  // variant -> split ("all" = pooled over the difficulty splits) -> per-seed aggregates
  std::map<std::string, std::map<std::string, SeedAggregates>> results;
  FailureLog failures;
  for (auto seed : cfg.master_seeds()) {
    const fs::path sd = out / seed_dir_name(seed);
    generate(cfg, pathology_plan(d), seed, sd / "data");
    const auto ds = data::Dataset::load(sd / "data");
    for (const auto& variant : pathology_variants()) {
      failures.run(sd / variant, [&] {
        const auto evals = train_and_evaluate(cfg, ds, ds, variant, cfg.model.beta, seed, sd / variant, tags);
        for (const auto& e : evals) results[variant][e.split].push_back(e.aggregate);
        results[variant]["all"].push_back(pooled(evals));
      });
    }
  }

  std::string table = std::string("variant,") + kWideMetricColumns + "\n";
  std::string fig = "variant,difficulty,metric,mean,std,n_seeds\n";
  for (const auto& variant : pathology_variants()) {
    if (!results.count(variant)) continue;
    table += variant + "," + wide_metric_cells(results[variant]["all"]) + "\n";
    for (const auto& tag : tags) {
      const auto m = median_aggregate(results[variant][tag]);
      const auto n = std::to_string(results[variant][tag].size());
      fig += variant + "," + tag + ",mse," + fmt(m.mse_mean) + "," + fmt(m.mse_std) + "," + n + "\n";
      fig += variant + "," + tag + ",tmp_corr," + fmt(m.tmp_corr_mean) + "," + fmt(m.tmp_corr_std) + "," + n + "\n";
      fig += variant + "," + tag + ",at_corr," + fmt(m.at_corr_mean) + "," + fmt(m.at_corr_std) + "," + n + "\n";
      fig += variant + "," + tag + ",dice," + fmt(m.dice_mean) + "," + fmt(m.dice_std) + "," + n + "\n";
    }
  }
  write_text_file(out / "table1.csv", table);
  write_text_file(out / "fig2.csv", fig);
  write_provenance(out, cfg, {});
  failures.raise_if_any();
}

void cmd_exp_rotation(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out = prepare_out(cfg);
  const std::vector<std::string> regimes{"rotation-i", "rotation-ii"};
  const std::vector<std::string> variants{"svs-stoch", "svs-det"};
  std::vector<std::string> splits;
  for (int a : test_angles(cfg.data)) splits.push_back(sim::angle_tag(a));

  // regime -> variant -> angle split -> per-seed aggregates
  std::map<std::string, std::map<std::string, std::map<std::string, SeedAggregates>>> results;
  FailureLog failures;
  for (auto seed : cfg.master_seeds()) {
    const fs::path sd = out / seed_dir_name(seed);
    generate(cfg, angle_test_plan(cfg.data), derive_seed(seed, kAngleTestStream), sd / "data_test");
    const auto test_ds = data::Dataset::load(sd / "data_test");
    for (const auto& regime : regimes) {
      DataConfig d = cfg.data;
      d.plan = regime;
      d.include_test = false;
      const fs::path rd = sd / regime;
      generate(cfg, rotation_plan(d), seed, rd / "data");
      const auto train_ds = data::Dataset::load(rd / "data");
      for (const auto& variant : variants) {
        failures.run(rd / variant, [&] {
          for (const auto& e : train_and_evaluate(cfg, train_ds, test_ds, variant, cfg.model.beta, seed, rd / variant, splits)) {
            results[regime][variant][e.split].push_back(e.aggregate);
          }
        });
      }
    }
  }

  std::string csv = std::string("regime,variant,angle,") + kWideMetricColumns + "\n";
  for (const auto& regime : regimes) {
    for (const auto& variant : variants) {
      if (!results[regime].count(variant)) continue;
      for (int a : test_angles(cfg.data)) {
        csv += regime + "," + variant + "," + std::to_string(a) + "," +
               wide_metric_cells(results[regime][variant][sim::angle_tag(a)]) + "\n";
      }
    }
  }
  write_text_file(out / "rotation.csv", csv);
  write_provenance(out, cfg, {});
  failures.raise_if_any();
}

void cmd_exp_beta(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out = prepare_out(cfg);
  std::vector<std::string> splits;
  for (int a : test_angles(cfg.data)) splits.push_back(sim::angle_tag(a));

  // run label -> angle split -> per-seed aggregates; "" labels the deterministic reference
  std::map<std::string, std::map<std::string, SeedAggregates>> results;
  FailureLog failures;
  for (auto seed : cfg.master_seeds()) {
    const fs::path sd = out / seed_dir_name(seed);
    generate(cfg, angle_test_plan(cfg.data), derive_seed(seed, kAngleTestStream), sd / "data_test");
    DataConfig d = cfg.data;
    d.plan = "rotation-i";
    d.include_test = false;
    generate(cfg, rotation_plan(d), seed, sd / "data_train");
    const auto test_ds = data::Dataset::load(sd / "data_test");
    const auto train_ds = data::Dataset::load(sd / "data_train");
    for (double beta : cfg.betas) {
      const auto label = beta_label(beta);
      const fs::path dir = sd / ("svs-stoch_beta_" + label);
      failures.run(dir, [&] {
        for (const auto& e : train_and_evaluate(cfg, train_ds, test_ds, "svs-stoch", beta, seed, dir, splits)) {
          results[label][e.split].push_back(e.aggregate);
        }
      });
    }
    failures.run(sd / "svs-det", [&] {
      for (const auto& e : train_and_evaluate(cfg, train_ds, test_ds, "svs-det", 0.0, seed, sd / "svs-det", splits)) {
        results[""][e.split].push_back(e.aggregate);
      }
    });
  }

  std::string csv = std::string("variant,beta,angle,") + kWideMetricColumns + "\n";
  auto emit = [&](const std::string& variant, const std::string& label) {
    if (!results.count(label)) return;
    for (int a : test_angles(cfg.data)) {
      csv += variant + "," + label + "," + std::to_string(a) + "," +
             wide_metric_cells(results[label][sim::angle_tag(a)]) + "\n";
    }
  };
  for (double beta : cfg.betas) emit("svs-stoch", beta_label(beta));
  emit("svs-det", "");
  write_text_file(out / "beta.csv", csv);
  write_provenance(out, cfg, {});
  failures.raise_if_any();
}

// ---- diagnostics -------------------------------------------------------------

void cmd_diagnose(const RunConfig& cfg) {
  cfg.validate();
  const fs::path exp = require_dir(cfg.diagnose.experiment_dir, "--experiment");
  const fs::path out = prepare_out(cfg);
  const RunConfig ecfg = load_config(exp / "config.json");
  const auto& dg = cfg.diagnose;
  InputLedger inputs;
  inputs.add_file(exp / "config.json");

  Json variants = Json::object();
  for (auto seed : ecfg.master_seeds()) {
    const fs::path sd = exp / seed_dir_name(seed);
    std::optional<data::Dataset> ds;
    for (const auto& variant : pathology_variants()) {
      if (!fs::exists(sd / variant / "model.json")) continue;
      if (!ds) {
        ds = data::Dataset::load(sd / "data");
        inputs.add_tree(sd / "data");
      }
      inputs.add_file(sd / variant / "model.json");
      inputs.add_file(sd / variant / "params.bin");
      log("diagnosing " + (sd / variant).string());
      auto model = vib::Model::load(sd / variant);
      const auto part = training::split_train_val(ds->split("train"), ecfg.train.val_fraction, seed);

      Json gaps = Json::array();
      std::vector<const data::Case*> all_shifted;
      for (const auto& tag : sim::pathology_tags()) {
        const auto shifted = ds->split(tag);
        all_shifted.insert(all_shifted.end(), shifted.begin(), shifted.end());
        for (auto fn : {theory::ErrorFn::Mse, theory::ErrorFn::OneMinusAtCorr}) {
          Json g = theory::to_json(theory::generalization_gap(model, part.val, shifted, fn));
          g["shifted_split"] = tag;
          gaps.push_back(g);
        }
      }
      for (auto fn : {theory::ErrorFn::Mse, theory::ErrorFn::OneMinusAtCorr}) {
        Json g = theory::to_json(theory::generalization_gap(model, part.val, all_shifted, fn));
        g["shifted_split"] = "all";
        gaps.push_back(g);
      }

      const std::size_t n_probe = std::min(part.val.size(), static_cast<std::size_t>(dg.n_variation_probes));
      const std::vector<const data::Case*> probes(part.val.begin(), part.val.begin() + static_cast<std::ptrdiff_t>(n_probe));
      const auto variation = theory::variation_proxy(model, probes, dg.h);

      Json taylor = Json::array();
      if (model.config().stochastic) {
        const std::size_t n_taylor = std::min(part.val.size(), static_cast<std::size_t>(dg.n_taylor_probes));
        for (std::size_t i = 0; i < n_taylor; ++i) {
          const auto lat = vib::encode(part.val[i]->y, model);
          Json t = theory::to_json(theory::taylor_probe(model, part.val[i]->x.values, lat.t, lat.sigma_t, dg.taylor_n_mc,
                                                        derive_seed(cfg.seed, kTaylorStream + i), dg.h));
          t["case_id"] = part.val[i]->id;
          taylor.push_back(t);
        }
      }
      variants[variant]["seeds"].push_back(
          {{"seed", seed}, {"gap", gaps}, {"variation", theory::to_json(variation)}, {"taylor", taylor}});
    }
  }
  for (auto& [name, v] : variants.items()) {
    std::map<std::string, std::vector<double>> cols;
    for (const auto& s : v.at("seeds")) {
      for (const char* key : {"order1", "order2", "order1_sigma_weighted", "order2_sigma_weighted",
                              "order1_marginal_weighted", "order2_marginal_weighted"}) {
        cols[key].push_back(s.at("variation").at(key).get<double>());
      }
    }
    Json med = Json::object();
    for (const auto& [key, values] : cols) med[key] = median(values);
    v["variation_median"] = med;
  }

  // Linear decoder g(w) = c w with a closed-form expectation.
  const double x = 0.9, c = 1.3, t = 0.4, s = 0.7;
  const auto lin = theory::taylor_probe(
      [=](const Eigen::MatrixXd& p) { return Eigen::VectorXd((x - c * p.col(0).array()).square()); },
      Eigen::VectorXd::Constant(1, t), Eigen::VectorXd::Constant(1, s), dg.taylor_n_mc, derive_seed(cfg.seed, kTaylorStream),
      dg.h);
  Json toy = theory::to_json(lin);
  toy["closed_form"] = (x - c * t) * (x - c * t) + c * c * s * s;
  toy["decoder"] = {{"x", x}, {"c", c}, {"t", t}, {"sigma", s}};

  Json points = Json::array();
  bool all_hold = true;
  for (const auto& p : theory::gaussian_ib_sweep(dg.oracle_points, derive_seed(cfg.seed, kOracleStream))) {
    all_hold = all_hold && p.bound_holds;
    points.push_back({{"var_x", p.toy.var_x},
                      {"noise_var", p.toy.noise_var},
                      {"gain", p.toy.gain},
                      {"enc_noise_var", p.toy.enc_noise_var},
                      {"beta", p.beta},
                      {"I_xw", p.result.I_xw},
                      {"I_wy", p.result.I_wy},
                      {"loss_ib_exact", p.result.loss_ib_exact},
                      {"L_IB_exact", p.result.L_IB_exact},
                      {"L_IB_marginal_prior", p.result.L_IB_marginal_prior},
                      {"bound_holds", p.bound_holds}});
  }

  const Json report{{"experiment_dir", exp.generic_string()},
                    {"variants", variants},
                    {"taylor_linear_toy", toy},
                    {"gaussian_oracle", {{"points", points}, {"all_bounds_hold", all_hold}}}};
  write_json_file(out / "theory_report.json", report);
  write_provenance(out, cfg, inputs);
}

}  // namespace vibrec::app
