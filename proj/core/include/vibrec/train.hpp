#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vibrec/dataset.hpp"
#include "vibrec/vib.hpp"

namespace vibrec::training {

/// Seed for the epsilon draws used whenever a stochastic objective is
/// evaluated rather than optimised.
inline constexpr std::uint64_t kEvalEpsSeed = 0x5eedULL;

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 16;
  int max_epochs = 300;
  int patience = 20;
  double val_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  std::vector<double> train_loss;  // mean minibatch objective per epoch
  std::vector<double> val_loss;
  int best_epoch = -1;  // 0-based
  bool stopped_early = false;
  int n_train = 0;
  int n_val = 0;
  double wall_time_s = 0.0;
  std::string checkpoint;  // model file, relative to the report directory
};

struct TrainResult {
  vib::Model model;
  TrainReport report;
};

/// Deterministic train/validation partition. When the validation share
/// rounds to zero cases the training cases double as the validation set.
struct Partition {
  std::vector<const data::Case*> train;
  std::vector<const data::Case*> val;
};
Partition split_train_val(std::span<const data::Case* const> cases, double val_fraction, std::uint64_t seed);

/// Per-lead mean and standard deviation of y over `cases`.
vib::Normalizer fit_normalizer(std::span<const data::Case* const> cases);

/// Trains one variant. Returns the best-validation parameters rounded to
/// float32, i.e. exactly what the checkpoint holds. When `out_dir` is set,
/// writes model.json, params.bin, report.json and timing.json there.
TrainResult train(std::span<const data::Case* const> cases, const vib::ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Mean objective of the model's own variant over `cases`, without updates.
double evaluate_loss(std::span<const data::Case* const> cases, vib::Model& model,
                     std::uint64_t eps_seed = kEvalEpsSeed);

void write_report(const std::filesystem::path& path, const TrainReport& report);

}  // namespace vibrec::training
