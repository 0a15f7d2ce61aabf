#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vibrec/dataset.hpp"
#include "vibrec/eval.hpp"
#include "vibrec_app/run_config.hpp"

namespace vibrec::app {

inline const std::vector<std::string>& pathology_variants() {
  static const std::vector<std::string> v{"svs-stoch", "svs-det", "svs-l-stoch", "svs-l-det"};
  return v;
}

/// Training angles of a rotation regime: "rotation-i" -> -2..2, "rotation-ii" -> -4..5.
std::vector<int> training_angles(const std::string& plan);
/// Test angles angle_min..angle_max in unit steps.
std::vector<int> test_angles(const DataConfig& d);

/// Train split plus, when `include_test`, the four difficulty splits.
data::SplitPlan pathology_plan(const DataConfig& d);
/// Training cases spread over the regime's angles (first angles take the
/// remainder), plus one split per test angle when `include_test`.
data::SplitPlan rotation_plan(const DataConfig& d);
data::SplitPlan plan_for(const DataConfig& d);

/// Short variant name: svs-stoch, svs-det, svs-l-stoch, svs-l-det.
std::string variant_key(const vib::ModelConfig& m);

/// Median of a nonempty list (mean of the two middle values for even sizes).
double median(std::vector<double> v);

void cmd_gen_data(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_exp_pathology(const RunConfig& cfg);
void cmd_exp_rotation(const RunConfig& cfg);
void cmd_exp_beta(const RunConfig& cfg);
void cmd_diagnose(const RunConfig& cfg);

}  // namespace vibrec::app
