#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vibrec/dataset.hpp"
#include "vibrec/geometry.hpp"
#include "vibrec/vib.hpp"

namespace vibrec::metrics {

/// Sorted node indices.
using NodeSet = std::vector<int>;

double mse(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat);
/// Pearson correlation of the flattened arguments. DomainError on zero variance.
double pearson_corr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double pearson_corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct ActivationTimes {
  Eigen::VectorXi at;
  int constant_traces = 0;  // nodes whose AT fell back to 0 because the trace is flat
};
/// Per node: frame index of the steepest forward difference (first occurrence).
ActivationTimes activation_time(const Eigen::MatrixXd& x);
double at_corr(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat);

struct ScarRule {
  double level = 0.5;       // a frame counts towards the duration when u > level
  double median_ratio = 0.5;  // scar iff duration < ratio * median duration
};
NodeSet scar_from_tmp(const Eigen::MatrixXd& x, const ScarRule& rule = {});
NodeSet mask_to_set(const std::vector<bool>& mask);
double dice(const NodeSet& a, const NodeSet& b);

struct CaseRecord {
  int case_id = 0;
  std::string split;
  double mse = 0.0;
  double tmp_corr = 0.0;
  double at_corr = 0.0;
  double dice = 0.0;
  std::vector<std::string> flags;
  bool excluded = false;  // a metric failed; `flags` carries the reason
};

struct Aggregate {
  double mse_mean = 0.0, mse_std = 0.0;
  double tmp_corr_mean = 0.0, tmp_corr_std = 0.0;
  double at_corr_mean = 0.0, at_corr_std = 0.0;
  double dice_mean = 0.0, dice_std = 0.0;
  int n = 0;
  int n_excluded = 0;
};

struct SplitEvaluation {
  std::string split;
  std::vector<CaseRecord> records;
  Aggregate aggregate;
};

CaseRecord evaluate_case(int case_id, const std::string& split, const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat,
                         const NodeSet& true_scar, const ScarRule& rule = {});
/// Mean and sample standard deviation over the non-excluded records.
Aggregate aggregate(std::span<const CaseRecord> records);

/// Scores given reconstructions (in case order) against the cases' ground truth.
SplitEvaluation evaluate_reconstructions(const std::string& split, std::span<const data::Case* const> cases,
                                         std::span<const Eigen::MatrixXd> reconstructions,
                                         const geo::Geometry& geom, const ScarRule& rule = {});
SplitEvaluation evaluate_split(const std::string& split, std::span<const data::Case* const> cases, vib::Model& model,
                               const geo::Geometry& geom, const ScarRule& rule = {});

inline constexpr const char* kMetricsCsvHeader = "case_id,split,mse,tmp_corr,at_corr,dice,quality_flags";
/// Per-case rows followed by one `AGG:<split>` row per evaluation.
std::string metrics_csv(std::span<const SplitEvaluation> evals);
void write_metrics_csv(const std::filesystem::path& path, std::span<const SplitEvaluation> evals);

}  // namespace vibrec::metrics
