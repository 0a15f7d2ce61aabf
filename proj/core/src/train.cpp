#include "vibrec/train.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>

#include "vibrec/error.hpp"
#include "vibrec/json_io.hpp"
#include "vibrec/rng.hpp"

namespace vibrec::training {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kEpsStream = 4;
constexpr int kEvalBatch = 64;

void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  // Fisher-Yates with the library's own integer draw keeps the order
  // independent of the standard library's shuffle implementation.
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
}

vib::Batch batch_of(const vib::Model& model, std::span<const data::Case* const> cases) {
  std::vector<const sim::EcgSequence*> ys;
  std::vector<const sim::TmpSequence*> xs;
  for (const auto* c : cases) {
    ys.push_back(&c->y);
    xs.push_back(&c->x);
  }
  return model.make_batch(ys, xs);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be > 0");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("TrainConfig: val_fraction must lie in (0, 1)");
}

Partition split_train_val(std::span<const data::Case* const> cases, double val_fraction, std::uint64_t seed) {
  if (cases.empty()) throw ConfigError("split_train_val: no cases");
  std::vector<std::size_t> idx(cases.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kSplitStream));
  shuffle(idx, rng);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(cases.size())));
  Partition p;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_val ? p.val : p.train).push_back(cases[idx[i]]);
  if (p.val.empty()) p.val = p.train;
  return p;
}

vib::Normalizer fit_normalizer(std::span<const data::Case* const> cases) {
  if (cases.empty()) throw ConfigError("fit_normalizer: no cases");
  const Eigen::Index M = cases.front()->y.values.rows();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(M);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(M);
  double n = 0.0;
  for (const auto* c : cases) {
    sum += c->y.values.rowwise().sum();
    sq += c->y.values.array().square().matrix().rowwise().sum();
    n += static_cast<double>(c->y.values.cols());
  }
  vib::Normalizer out;
  out.mean = sum / n;
  const Eigen::ArrayXd var = (sq / n).array() - out.mean.array().square();
  out.stddev = var.max(0.0).sqrt().max(1e-12).matrix();
  return out;
}

double evaluate_loss(std::span<const data::Case* const> cases, vib::Model& model, std::uint64_t eps_seed) {
  if (cases.empty()) throw ConfigError("evaluate_loss: empty split");
  Rng rng(eps_seed);
  double total = 0.0;
  for (std::size_t start = 0; start < cases.size(); start += kEvalBatch) {
    const auto chunk = cases.subspan(start, std::min<std::size_t>(kEvalBatch, cases.size() - start));
    ad::Tape tape(false);
    const double batch_mean = vib::loss_for(tape, model, batch_of(model, chunk), rng).item();
    total += batch_mean * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(cases.size());
}

void write_report(const std::filesystem::path& path, const TrainReport& r) {
  write_json_file(path, Json{{"train_loss", r.train_loss},
                             {"val_loss", r.val_loss},
                             {"best_epoch", r.best_epoch},
                             {"best_val_loss", r.best_epoch >= 0 ? r.val_loss[static_cast<std::size_t>(r.best_epoch)] : 0.0},
                             {"epochs_run", r.train_loss.size()},
                             {"stopped_early", r.stopped_early},
                             {"n_train", r.n_train},
                             {"n_val", r.n_val},
                             {"checkpoint", r.checkpoint}});
}

TrainResult train(std::span<const data::Case* const> cases, const vib::ModelConfig& model_cfg,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  if (cases.empty()) throw ConfigError("train: dataset is empty");
  const auto started = std::chrono::steady_clock::now();

  const Partition part = split_train_val(cases, cfg.val_fraction, cfg.seed);
  vib::Model model(model_cfg, derive_seed(cfg.seed, kInitStream));
  model.set_normalizer(fit_normalizer(part.train));

  Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
  Rng eps_rng(derive_seed(cfg.seed, kEpsStream));
  const ad::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};

  TrainReport report;
  report.n_train = static_cast<int>(part.train.size());
  report.n_val = static_cast<int>(part.val.size());

  std::vector<ad::Mat> best;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<std::size_t> order(part.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const data::Case*> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(part.train[order[i]]);
      ad::Tape tape;
      ad::Var loss = vib::loss_for(tape, model, batch_of(model, chunk), eps_rng);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches));
      }
      tape.backward(loss);
      ad::adam_step(model.params(), adam);
      epoch_sum += value;
      ++batches;
    }
    report.train_loss.push_back(epoch_sum / batches);

    const double val = evaluate_loss(part.val, model);
    if (!std::isfinite(val)) {
      throw TrainingError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    report.val_loss.push_back(val);
    if (val < best_val) {
      best_val = val;
      report.best_epoch = epoch;
      since_best = 0;
      best.clear();
      for (std::size_t i = 0; i < model.params().size(); ++i) best.push_back(model.params().value(i));
    } else if (++since_best >= cfg.patience) {
      report.stopped_early = epoch + 1 < cfg.max_epochs;
      break;
    }
  }

  for (std::size_t i = 0; i < best.size(); ++i) model.params().value(i) = best[i];
  model.params().round_to_float();

  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (out_dir) {
    model.save(*out_dir);
    report.checkpoint = "model.json";
    write_report(*out_dir / "report.json", report);
    write_json_file(*out_dir / "timing.json", Json{{"wall_time_s", report.wall_time_s}});
  }
  return {std::move(model), std::move(report)};
}

}  // namespace vibrec::training
