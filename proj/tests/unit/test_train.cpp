#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "small_data.hpp"
#include "test_util.hpp"
#include "vibrec/error.hpp"
#include "vibrec/json_io.hpp"
#include "vibrec/train.hpp"

using namespace vibrec;

TEST(TrainConfig, Validation) {
  training::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.val_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Split, DeterministicAndDisjoint) {
  vibrec::testing::SmallData d(20);
  const auto all = d.ptrs();
  const auto a = training::split_train_val(all, 0.15, 4), b = training::split_train_val(all, 0.15, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.val.size(), 3u);
  EXPECT_EQ(a.train.size(), 17u);
  for (const auto* v : a.val) EXPECT_EQ(std::count(a.train.begin(), a.train.end(), v), 0);
  const auto c = training::split_train_val(all, 0.15, 5);
  EXPECT_NE(a.val, c.val);
}

TEST(Normalizer, PerLeadStatistics) {
  vibrec::testing::SmallData d(4);
  const auto n = training::fit_normalizer(d.ptrs());
  Eigen::MatrixXd all(8, 4 * 16);
  for (int i = 0; i < 4; ++i) all.middleCols(16 * i, 16) = d.cases[i].y.values;
  for (int l = 0; l < 8; ++l) {
    const double m = all.row(l).mean();
    EXPECT_NEAR(n.mean(l), m, 1e-12);
    EXPECT_NEAR(n.stddev(l), std::sqrt((all.row(l).array() - m).square().mean()), 1e-12);
  }
}

TEST(Train, OverfitsSingleCase) {
  vibrec::testing::SmallData d(1);
  training::TrainConfig tc;
  tc.max_epochs = 200;
  tc.patience = 200;
  // Default layer widths; the narrow test model is not wide enough to memorize.
  vib::ModelConfig wide;
  vib::apply_variant(wide, "svs-det");
  const auto narrow = d.model("svs-det");
  wide.M = narrow.M;
  wide.T = narrow.T;
  wide.U = narrow.U;
  const auto r = training::train(d.ptrs(), wide, tc);
  EXPECT_EQ(r.report.n_val, 1);
  EXPECT_LT(*std::min_element(r.report.train_loss.begin(), r.report.train_loss.end()), 0.01 * r.report.train_loss.front());
}

TEST(Train, IdenticalSeedsReproduce) {
  vibrec::testing::SmallData d(12);
  training::TrainConfig tc;
  tc.max_epochs = 4;
  tc.seed = 9;
  vibrec::testing::TempDir a("tr_a"), b("tr_b");
  for (const std::string v : {"svs-stoch", "svs-l-det"}) {
    const auto ra = training::train(d.ptrs(), d.model(v), tc, a.path() / v);
    const auto rb = training::train(d.ptrs(), d.model(v), tc, b.path() / v);
    EXPECT_EQ(ra.report.train_loss, rb.report.train_loss);
    EXPECT_EQ(ra.report.val_loss, rb.report.val_loss);
    for (const char* f : {"model.json", "params.bin", "report.json"}) {
      EXPECT_EQ(vibrec::testing::slurp(a.path() / v / f), vibrec::testing::slurp(b.path() / v / f)) << f;
    }
    EXPECT_TRUE(std::filesystem::exists(a.path() / v / "timing.json"));
    EXPECT_FALSE(read_json_file(a.path() / v / "report.json").contains("wall_time_s"));
  }
}

TEST(Train, EarlyStoppingOnConstantTargets) {
  vibrec::testing::SmallData d(12);
  for (auto& c : d.cases) c.x.values.setConstant(0.5);
  training::TrainConfig tc;
  tc.max_epochs = 100;
  tc.patience = 1;
  tc.batch_size = 1;
  tc.lr = 1e-2;
  const auto r = training::train(d.ptrs(), d.model("svs-det"), tc);
  EXPECT_TRUE(r.report.stopped_early);
  EXPECT_LT(r.report.train_loss.size(), 50u);
}

TEST(Train, ReturnsArgminValidationParameters) {
  vibrec::testing::SmallData d(12);
  training::TrainConfig tc;
  tc.max_epochs = 8;
  tc.patience = 8;
  auto r = training::train(d.ptrs(), d.model("svs-det"), tc);
  const auto& vl = r.report.val_loss;
  const auto best = static_cast<int>(std::min_element(vl.begin(), vl.end()) - vl.begin());
  EXPECT_EQ(r.report.best_epoch, best);
  const auto part = training::split_train_val(d.ptrs(), tc.val_fraction, tc.seed);
  // Stored parameters are the best epoch's, rounded to float32.
  EXPECT_NEAR(training::evaluate_loss(part.val, r.model), vl[best], 1e-4 * std::abs(vl[best]));
}

TEST(Train, NonFiniteLossAborts) {
  vibrec::testing::SmallData d(6);
  d.cases[0].x.values(0, 0) = std::nan("");
  d.cases[1].x.values(0, 0) = std::nan("");
  d.cases[2].x.values(0, 0) = std::nan("");
  training::TrainConfig tc;
  tc.max_epochs = 2;
  try {
    training::train(d.ptrs(), d.model("svs-det"), tc);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

TEST(EvaluateLoss, Definitions) {
  vibrec::testing::SmallData d(2);
  auto cfg = d.model("svs-det");
  vib::Model m(cfg, 1);
  for (std::size_t i = 0; i < m.params().size(); ++i) m.params().value(i).setZero();
  auto zero = d;
  for (auto& c : zero.cases) c.x.values.setZero();
  EXPECT_EQ(training::evaluate_loss(zero.ptrs(), m), 0.0);

  vib::Model r(cfg, 2);
  const auto all = d.ptrs();
  const double l0 = vib::loss_deterministic(d.cases[0].x, d.cases[0].y, r);
  const double l1 = vib::loss_deterministic(d.cases[1].x, d.cases[1].y, r);
  EXPECT_NEAR(training::evaluate_loss(all, r), 0.5 * (l0 + l1), 1e-10);
  EXPECT_THROW(training::evaluate_loss(std::span<const data::Case* const>{}, r), ConfigError);

  vib::Model s(d.model("svs-stoch"), 3);
  EXPECT_EQ(training::evaluate_loss(all, s), training::evaluate_loss(all, s));
}
