#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vibrec/apsim.hpp"
#include "vibrec/dataset.hpp"
#include "vibrec/eval.hpp"
#include "vibrec/geometry.hpp"
#include "vibrec/json_io.hpp"
#include "vibrec/train.hpp"
#include "vibrec/vib.hpp"

namespace vibrec::app {

struct GridConfig {
  int nx = 8;
  int ny = 8;
  int leads = 16;
  double ring_radius = 20.0;
};

/// Which split plan `gen-data` builds and how many cases go into each split.
struct DataConfig {
  std::string plan = "pathology";  // pathology | rotation-i | rotation-ii
  int n_train = 400;
  int n_test = 100;      // per pathology difficulty
  int n_per_angle = 50;  // per rotation test angle
  int angle_min = -20;
  int angle_max = 20;
  bool include_test = true;
};

struct ModelSection {
  std::string variant = "svs-stoch";
  int latent_dim = 16;
  int enc_hidden = 64;
  int dec_hidden = 64;
  int fc_hidden = 128;
  int dec_step_input = 16;
  double beta = 1.0;
  int n_mc = 1;
};

struct EvalSection {
  std::vector<std::string> splits;  // empty: every split except train
  metrics::ScarRule scar;
};

struct DiagnoseSection {
  std::string experiment_dir;  // output of exp-pathology
  int n_variation_probes = 50;
  int n_taylor_probes = 5;
  int taylor_n_mc = 10000;
  double h = 1e-3;
  int oracle_points = 100;
};

/// Everything a command needs. Serialised verbatim into each run directory.
struct RunConfig {
  std::uint64_t seed = 0;
  int n_seeds = 3;
  std::string out;
  std::string data_dir;
  std::string checkpoint;
  GridConfig grid;
  sim::SimConfig sim;
  sim::SamplingConfig sampling;
  double snr_db = 40.0;
  DataConfig data;
  ModelSection model;
  training::TrainConfig train;
  EvalSection eval;
  std::vector<double> betas{0.1, 1.0, 10.0, 100.0};
  DiagnoseSection diagnose;

  /// Master seeds seed, seed+1, ... used by the experiment commands.
  std::vector<std::uint64_t> master_seeds() const;
  void validate() const;
};

Json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
RunConfig config_from_json(const Json& j);
RunConfig load_config(const std::filesystem::path& path);

geo::Geometry build_geometry(const RunConfig& c);
/// Model hyper-parameters from the config, data dimensions from the dataset.
vib::ModelConfig model_config(const RunConfig& c, const std::string& variant, double beta, const data::Manifest& data);

}  // namespace vibrec::app
