#include "vibrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>

#include "vibrec/error.hpp"
#include "vibrec/json_io.hpp"

namespace vibrec::metrics {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double mse(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
    throw ShapeError("mse: shape mismatch");
  }
  if (x.size() == 0) throw ShapeError("mse: empty input");
  return (x - x_hat).squaredNorm() / static_cast<double>(x.size());
}

double pearson_corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("pearson_corr: length mismatch");
  if (a.size() < 2) throw DomainError("pearson_corr: need at least two values");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double saa = da.square().sum();
  const double sbb = db.square().sum();
  if (!(saa > 0.0) || !(sbb > 0.0)) throw DomainError("pearson_corr: zero variance");
  const double r = (da * db).sum() / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

double pearson_corr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("pearson_corr: shape mismatch");
  return pearson_corr(Eigen::VectorXd(a.reshaped()), Eigen::VectorXd(b.reshaped()));
}

ActivationTimes activation_time(const Eigen::MatrixXd& x) {
  if (x.cols() < 2) throw ShapeError("activation_time: need at least two frames");
  ActivationTimes out;
  out.at = Eigen::VectorXi::Zero(x.rows());
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    Eigen::Index best = 0;
    double best_diff = -std::numeric_limits<double>::infinity();
    bool flat = true;
    for (Eigen::Index f = 0; f + 1 < x.cols(); ++f) {
      const double d = x(j, f + 1) - x(j, f);
      if (d != 0.0) flat = false;
      if (d > best_diff) {
        best_diff = d;
        best = f + 1;
      }
    }
    // A flat trace reports frame 0, the same as a trace whose steepest
    // step is the first one, but is counted so callers can flag it.
    if (flat) {
      best = 0;
      ++out.constant_traces;
    }
    out.at(j) = static_cast<int>(best);
  }
  return out;
}

double at_corr(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw ShapeError("at_corr: shape mismatch");
  return pearson_corr(Eigen::VectorXd(activation_time(x).at.cast<double>()),
                      Eigen::VectorXd(activation_time(x_hat).at.cast<double>()));
}

NodeSet scar_from_tmp(const Eigen::MatrixXd& x, const ScarRule& rule) {
  NodeSet out;
  if (x.rows() == 0) return out;
  std::vector<double> durations(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    durations[static_cast<std::size_t>(j)] = static_cast<double>((x.row(j).array() > rule.level).count());
  }
  std::vector<double> sorted = durations;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const double cut = rule.median_ratio * median;
  for (std::size_t j = 0; j < n; ++j) {
    if (durations[j] < cut) out.push_back(static_cast<int>(j));
  }
  return out;
}

NodeSet mask_to_set(const std::vector<bool>& mask) {
  NodeSet out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

double dice(const NodeSet& a, const NodeSet& b) {
  NodeSet sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  std::sort(sb.begin(), sb.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  if (sa.empty() || sb.empty()) return 0.0;
  NodeSet common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
  return 2.0 * static_cast<double>(common.size()) / static_cast<double>(sa.size() + sb.size());
}

CaseRecord evaluate_case(int case_id, const std::string& split, const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat,
                         const NodeSet& true_scar, const ScarRule& rule) {
  CaseRecord r;
  r.case_id = case_id;
  r.split = split;
  try {
    r.mse = mse(x, x_hat);
    r.tmp_corr = pearson_corr(x, x_hat);
    const ActivationTimes at_true = activation_time(x);
    const ActivationTimes at_hat = activation_time(x_hat);
    if (at_true.constant_traces) r.flags.push_back("flat_truth=" + std::to_string(at_true.constant_traces));
    if (at_hat.constant_traces) r.flags.push_back("flat_recon=" + std::to_string(at_hat.constant_traces));
    r.at_corr = pearson_corr(Eigen::VectorXd(at_true.at.cast<double>()), Eigen::VectorXd(at_hat.at.cast<double>()));
    r.dice = dice(true_scar, scar_from_tmp(x_hat, rule));
    if (!std::isfinite(r.mse)) throw DomainError("non-finite mse");
  } catch (const std::exception& e) {
    r.excluded = true;
    std::string why = e.what();
    std::replace(why.begin(), why.end(), ',', ' ');
    std::replace(why.begin(), why.end(), ';', ' ');
    r.flags.push_back("excluded:" + why);
  }
  return r;
}

Aggregate aggregate(std::span<const CaseRecord> records) {
  std::vector<double> m, tc, ac, d;
  Aggregate a;
  for (const auto& r : records) {
    if (r.excluded) {
      ++a.n_excluded;
      continue;
    }
    m.push_back(r.mse);
    tc.push_back(r.tmp_corr);
    ac.push_back(r.at_corr);
    d.push_back(r.dice);
  }
  a.n = static_cast<int>(m.size());
  mean_std(m, a.mse_mean, a.mse_std);
  mean_std(tc, a.tmp_corr_mean, a.tmp_corr_std);
  mean_std(ac, a.at_corr_mean, a.at_corr_std);
  mean_std(d, a.dice_mean, a.dice_std);
  return a;
}

SplitEvaluation evaluate_reconstructions(const std::string& split, std::span<const data::Case* const> cases,
                                         std::span<const Eigen::MatrixXd> reconstructions,
                                         const geo::Geometry& geom, const ScarRule& rule) {
  if (cases.size() != reconstructions.size()) {
    throw ShapeError("evaluate_reconstructions: case/reconstruction count mismatch");
  }
  SplitEvaluation out;
  out.split = split;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = *cases[i];
    out.records.push_back(evaluate_case(c.id, split, c.x.values, reconstructions[i],
                                        mask_to_set(data::scar_mask_of(geom, c.meta)), rule));
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const CaseRecord& a, const CaseRecord& b) { return a.case_id < b.case_id; });
  out.aggregate = aggregate(out.records);
  return out;
}

SplitEvaluation evaluate_split(const std::string& split, std::span<const data::Case* const> cases, vib::Model& model,
                               const geo::Geometry& geom, const ScarRule& rule) {
  if (cases.empty()) throw ConfigError("evaluate_split: split '" + split + "' is empty");
  std::vector<const sim::EcgSequence*> ys;
  for (const auto* c : cases) ys.push_back(&c->y);
  std::vector<Eigen::MatrixXd> recon;
  for (auto& r : vib::reconstruct_batch(ys, model)) recon.push_back(std::move(r.values));
  return evaluate_reconstructions(split, cases, recon, geom, rule);
}

std::string metrics_csv(std::span<const SplitEvaluation> evals) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& ev : evals) {
    for (const auto& r : ev.records) {
      const bool ok = !r.excluded;
      out += std::to_string(r.case_id) + "," + r.split + "," + (ok ? fmt(r.mse) : "") + "," +
             (ok ? fmt(r.tmp_corr) : "") + "," + (ok ? fmt(r.at_corr) : "") + "," + (ok ? fmt(r.dice) : "") + "," +
             join(r.flags, ';') + "\n";
    }
    const auto& a = ev.aggregate;
    out += "AGG:" + ev.split + "," + ev.split + "," + fmt(a.mse_mean) + "," + fmt(a.tmp_corr_mean) + "," +
           fmt(a.at_corr_mean) + "," + fmt(a.dice_mean) + "," +
           join({"n=" + std::to_string(a.n), "excluded=" + std::to_string(a.n_excluded), "std_mse=" + fmt(a.mse_std),
                 "std_tmp_corr=" + fmt(a.tmp_corr_std), "std_at_corr=" + fmt(a.at_corr_std),
                 "std_dice=" + fmt(a.dice_std)},
                ';') +
           "\n";
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const SplitEvaluation> evals) {
  write_text_file(path, metrics_csv(evals));
}

}  // namespace vibrec::metrics
