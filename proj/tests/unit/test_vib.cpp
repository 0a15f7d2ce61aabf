#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "vibrec/error.hpp"
#include "vibrec/json_io.hpp"
#include "vibrec/vib.hpp"

using namespace vibrec;
using ad::Mat;

namespace {

vib::ModelConfig tiny(const std::string& variant) {
  vib::ModelConfig c;
  vib::apply_variant(c, variant);
  c.latent_dim = 2;
  c.enc_hidden = 4;
  c.dec_hidden = 4;
  c.fc_hidden = 5;
  c.dec_step_input = 3;
  c.M = 3;
  c.T = 5;
  c.U = 4;
  c.beta = 0.7;
  return c;
}

const std::vector<std::string> kVariants{"svs-stoch", "svs-det", "svs-l-stoch", "svs-l-det"};

sim::EcgSequence random_y(int M, int T, std::uint64_t seed) {
  Rng rng(seed);
  sim::EcgSequence y;
  y.values.resize(M, T);
  for (Eigen::Index i = 0; i < y.values.size(); ++i) y.values.data()[i] = rng.normal();
  return y;
}

sim::TmpSequence random_x(int U, int T, std::uint64_t seed) {
  Rng rng(seed);
  sim::TmpSequence x;
  x.values.resize(U, T);
  for (Eigen::Index i = 0; i < x.values.size(); ++i) x.values.data()[i] = rng.uniform(0.0, 1.0);
  return x;
}

void zero_params(vib::Model& m) {
  for (std::size_t i = 0; i < m.params().size(); ++i) m.params().value(i).setZero();
}

}  // namespace

TEST(ModelConfig, VariantsAndValidation) {
  vib::ModelConfig c;
  vib::apply_variant(c, "svs-L-deterministic");
  EXPECT_EQ(c.arch, vib::Arch::SvsL);
  EXPECT_FALSE(c.stochastic);
  EXPECT_EQ(c.variant_name(), "svs-L-deterministic");
  vib::apply_variant(c, "SVS-stoch");
  EXPECT_EQ(c.variant_name(), "svs-stochastic");
  EXPECT_THROW(vib::apply_variant(c, "svs"), ConfigError);
  EXPECT_THROW(vib::apply_variant(c, "cnn-det"), ConfigError);
  EXPECT_THROW(c.validate(), ConfigError);  // dims unset
  auto t = tiny("svs-stoch");
  EXPECT_NO_THROW(t.validate());
  t.n_mc = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = tiny("svs-stoch");
  t.beta = -1;
  EXPECT_THROW(t.validate(), ConfigError);
  t = tiny("svs-det");
  t.beta = -1;  // ignored for deterministic models
  EXPECT_NO_THROW(t.validate());
}

TEST(Model, ParameterPartitionIsExact) {
  for (const auto& v : kVariants) {
    vib::Model m(tiny(v), 1);
    auto enc = m.encoder_params(), dec = m.decoder_params();
    std::set<std::size_t> all(enc.begin(), enc.end());
    for (auto i : dec) EXPECT_TRUE(all.insert(i).second) << v;
    EXPECT_EQ(all.size(), m.params().size()) << v;
    const bool has_var = m.params().find("enc.logvar.W").has_value() || m.params().find("dec.logvar.W").has_value();
    EXPECT_EQ(has_var, m.config().stochastic) << v;
  }
}

TEST(Encode, ZeroNetworkGivesStandardLatent) {
  vib::Model m(tiny("svs-stoch"), 3);
  zero_params(m);
  const auto lat = vib::encode(sim::EcgSequence{Eigen::MatrixXd::Zero(3, 5), {}}, m);
  EXPECT_EQ(lat.t, Eigen::VectorXd::Zero(2));
  EXPECT_EQ(lat.sigma_t, Eigen::VectorXd::Ones(2));
}

TEST(Encode, DeterministicHasZeroSigmaAndIsPure) {
  for (const auto& v : kVariants) {
    vib::Model m(tiny(v), 3);
    const auto y = random_y(3, 5, 8);
    const auto a = vib::encode(y, m), b = vib::encode(y, m);
    EXPECT_EQ(a.t, b.t);
    EXPECT_EQ(a.sigma_t, b.sigma_t);
    if (!m.config().stochastic) EXPECT_EQ(a.sigma_t, Eigen::VectorXd::Zero(2)) << v;
    else EXPECT_TRUE((a.sigma_t.array() > 0).all());
  }
  vib::Model m(tiny("svs-stoch"), 3);
  EXPECT_THROW(vib::encode(random_y(4, 5, 1), m), ShapeError);
}

TEST(SampleLatent, Examples) {
  vib::LatentGaussian lat{Eigen::Vector2d(1, 2), Eigen::Vector2d(0.5, 1)};
  EXPECT_EQ(vib::sample_latent(lat, Eigen::Vector2d(2, -1)), Eigen::Vector2d(2, 1));
  EXPECT_EQ(vib::sample_latent(lat, Eigen::Vector2d::Zero()), lat.t);
  lat.sigma_t.setZero();
  EXPECT_EQ(vib::sample_latent(lat, Eigen::Vector2d(5, -7)), lat.t);
  EXPECT_THROW(vib::sample_latent(lat, Eigen::Vector3d::Zero()), ShapeError);
}

TEST(Decode, ZeroNetworkAndShapes) {
  for (const auto& v : kVariants) {
    vib::Model m(tiny(v), 2);
    const auto out = vib::decode(Eigen::Vector2d(0.3, -1.0), m);
    EXPECT_EQ(out.g.rows(), 4);
    EXPECT_EQ(out.g.cols(), 5);
    EXPECT_EQ(out.sigma_x2.rows(), 4);
    EXPECT_EQ(out.sigma_x2.cols(), 5);
    zero_params(m);
    const auto z = vib::decode(Eigen::Vector2d::Zero(), m);
    EXPECT_EQ(z.g, Eigen::MatrixXd::Zero(4, 5)) << v;
    EXPECT_EQ(z.sigma_x2, Eigen::MatrixXd::Ones(4, 5)) << v;
    EXPECT_THROW(vib::decode(Eigen::Vector3d::Zero(), m), ShapeError);
  }
}

TEST(Decode, GradientWrtLatentMatchesFiniteDifferences) {
  for (const auto& v : kVariants) {
    vib::Model m(tiny(v), 4);
    ad::ParamStore w;
    w.add("w", Mat::Random(1, 2));
    auto build = [&](ad::Tape& t) {
      const auto o = m.decode(t, ad::bind(t, w, 0));
      ad::Var acc = ad::sum(o.mean[0]);
      for (std::size_t k = 1; k < o.mean.size(); ++k) acc = ad::add(acc, ad::sum(o.mean[k]));
      return acc;
    };
    const auto r = vibrec::testing::check_gradients(w, build);
    EXPECT_LT(r.max_rel, 1e-4) << v << " " << r.worst;
  }
}

TEST(Kl, ClosedFormExamples) {
  EXPECT_NEAR(vib::kl_to_standard_normal({Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)}), 0.0, 1e-12);
  EXPECT_NEAR(vib::kl_to_standard_normal({Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)}), 0.5, 1e-12);
  EXPECT_NEAR(vib::kl_to_standard_normal({Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 0.5)}), 0.3181472, 1e-6);
  EXPECT_THROW(vib::kl_to_standard_normal({Eigen::VectorXd::Zero(2), Eigen::Vector2d(1, 0)}), ContractError);
}

TEST(Kl, MonotoneAwayFromUnitSigma) {
  double prev_up = 0.0, prev_down = 0.0;
  for (int k = 1; k <= 20; ++k) {
    const double up = vib::kl_to_standard_normal({Eigen::VectorXd::Zero(2), Eigen::VectorXd::Constant(2, 1.0 + 0.1 * k)});
    const double down = vib::kl_to_standard_normal({Eigen::VectorXd::Zero(2), Eigen::VectorXd::Constant(2, std::pow(0.9, k))});
    EXPECT_GT(up, prev_up);
    EXPECT_GT(down, prev_down);
    prev_up = up;
    prev_down = down;
  }
}

TEST(Kl, MatchesMonteCarlo) {
  Rng pick(11);
  for (int rep = 0; rep < 20; ++rep) {
    const int d = static_cast<int>(pick.uniform_int(1, 4));
    vib::LatentGaussian lat{Eigen::VectorXd(d), Eigen::VectorXd(d)};
    for (int k = 0; k < d; ++k) {
      lat.t(k) = pick.uniform(-2, 2);
      lat.sigma_t(k) = pick.uniform(0.2, 2.0);
    }
    // log p(w|y) - log N(w; 0, I) under w ~ p(w|y).
    Rng rng(1000 + rep);
    const int n = 100000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
      double v = 0;
      for (int k = 0; k < d; ++k) {
        const double e = rng.normal();
        const double w = lat.t(k) + lat.sigma_t(k) * e;
        v += -0.5 * e * e - std::log(lat.sigma_t(k)) + 0.5 * w * w;
      }
      s += v;
      ss += v * v;
    }
    const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean - vib::kl_to_standard_normal(lat)), 3 * se) << rep;
  }
}

TEST(Nll, Examples) {
  auto one = [](double x, double g, double s2) {
    return vib::nll_term(sim::TmpSequence{Eigen::MatrixXd::Constant(1, 1, x)},
                         vib::OutputGaussian{Eigen::MatrixXd::Constant(1, 1, g), Eigen::MatrixXd::Constant(1, 1, s2)});
  };
  EXPECT_DOUBLE_EQ(one(0.4, 0.4, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(one(1.0, 0.0, 1.0), 1.0);
  EXPECT_NEAR(one(1.0, 0.0, 0.5), 1.3068528, 1e-7);
  EXPECT_THROW(vib::nll_term(sim::TmpSequence{Eigen::MatrixXd::Zero(2, 2)},
                             vib::OutputGaussian{Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Ones(2, 3)}),
               ShapeError);
}

TEST(LossIb, LinearToyMatchesClosedForm) {
  // One node, one frame, decoder g(w) = c w with unit output variance.
  const double x = 0.8, c = 1.7, t = 0.3, sigma = 0.6, beta = 2.0;
  const vib::LatentGaussian lat{Eigen::VectorXd::Constant(1, t), Eigen::VectorXd::Constant(1, sigma)};
  const double kl = vib::kl_to_standard_normal(lat);
  Rng rng(21);
  const int n = 100000;
  double s = 0, ss = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd w = vib::sample_latent(lat, Eigen::VectorXd::Constant(1, rng.normal()));
    const double v = vib::nll_term(sim::TmpSequence{Eigen::MatrixXd::Constant(1, 1, x)},
                                   vib::OutputGaussian{Eigen::MatrixXd::Constant(1, 1, c * w(0)), Eigen::MatrixXd::Ones(1, 1)}) +
                     beta * kl;
    s += v;
    ss += v * v;
  }
  const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
  const double exact = (x - c * t) * (x - c * t) + c * c * sigma * sigma + beta * kl;
  EXPECT_LT(std::abs(mean - exact), 3 * se);
}

TEST(LossIb, ReducesToDeterministicObjective) {
  for (const std::string arch : {"svs", "svs-l"}) {
    auto sc = tiny(arch + "-stoch");
    sc.beta = 0.0;
    vib::Model stoch(sc, 5);
    vib::Model det(tiny(arch + "-det"), 6);
    det.copy_shared_params(stoch);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto x = random_x(4, 5, seed);
  const auto y = random_y(3, 5, seed + 50);
      Rng rng(seed);
      const double a = vib::loss_ib(x, y, stoch, rng, {true, true});
      const double b = vib::loss_deterministic(x, y, det);
      EXPECT_NEAR(a, b, 1e-10) << arch;
    }
  }
}

TEST(LossIb, DeterministicGivenSeed) {
  vib::Model m(tiny("svs-stoch"), 5);
  const auto x = random_x(4, 5, 1);
  const auto y = random_y(3, 5, 2);
  Rng a(9), b(9), c(10);
  const double la = vib::loss_ib(x, y, m, a), lb = vib::loss_ib(x, y, m, b), lc = vib::loss_ib(x, y, m, c);
  EXPECT_EQ(la, lb);
  EXPECT_NE(la, lc);
}

TEST(LossIb, ContractsPerVariant) {
  vib::Model det(tiny("svs-det"), 1), stoch(tiny("svs-stoch"), 1);
  const auto x = random_x(4, 5, 1);
  const auto y = random_y(3, 5, 2);
  Rng rng(1);
  EXPECT_THROW(vib::loss_ib(x, y, det, rng), ContractError);
  EXPECT_THROW(vib::loss_deterministic(x, y, stoch), ContractError);
}

TEST(LossDeterministic, HandExample) {
  auto c = tiny("svs-det");
  c.U = 2;
  c.T = 2;
  vib::Model m(c, 1);
  zero_params(m);
  EXPECT_DOUBLE_EQ(vib::loss_deterministic(sim::TmpSequence{Eigen::MatrixXd::Ones(2, 2)},
                                           sim::EcgSequence{Eigen::MatrixXd::Zero(3, 2), {}}, m),
                   4.0);
}

TEST(LossIb, GradientsMatchFiniteDifferencesAtFixedEps) {
  for (const auto& v : kVariants) {
    auto cfg = tiny(v);
    cfg.n_mc = 2;
    cfg.detach_variance_head = false;
    vib::Model m(cfg, 8);
    std::vector<sim::TmpSequence> xs{random_x(4, 5, 1), random_x(4, 5, 2)};
    std::vector<sim::EcgSequence> ys{random_y(3, 5, 3), random_y(3, 5, 4)};
    const sim::EcgSequence* yp[] = {&ys[0], &ys[1]};
    const sim::TmpSequence* xp[] = {&xs[0], &xs[1]};
    const vib::Batch batch = m.make_batch(yp, xp);
    auto build = [&](ad::Tape& t) {
      Rng rng(77);
      return vib::loss_for(t, m, batch, rng);
    };
    const auto r = vibrec::testing::check_gradients(m.params(), build);
    EXPECT_LT(r.max_rel, 1e-3) << v << " " << r.worst;
  }
}

TEST(LossIb, DetachedVarianceHeadKeepsLossAndHeadGradient) {
  for (const std::string v : {"svs-stoch", "svs-l-stoch"}) {
    auto exact_cfg = tiny(v);
    exact_cfg.detach_variance_head = false;
    auto detached_cfg = tiny(v);
    detached_cfg.detach_variance_head = true;
    vib::Model exact(exact_cfg, 3), detached(detached_cfg, 3);
    const auto x = random_x(4, 5, 1);
    const auto y = random_y(3, 5, 2);
    const sim::EcgSequence* yp[] = {&y};
    const sim::TmpSequence* xp[] = {&x};
    double loss[2];
    vib::Model* models[2] = {&exact, &detached};
    for (int k = 0; k < 2; ++k) {
      ad::Tape tape;
      Rng rng(5);
      const auto l = vib::loss_for(tape, *models[k], models[k]->make_batch(yp, xp), rng);
      loss[k] = l.item();
      tape.backward(l);
    }
    EXPECT_EQ(loss[0], loss[1]) << v;
    bool trunk_differs = false;
    for (std::size_t i = 0; i < exact.params().size(); ++i) {
      const auto& name = exact.params().name(i);
      const Mat diff = exact.params().grad(i) - detached.params().grad(i);
      if (name.rfind("dec.logvar", 0) == 0) {
        EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-12) << name;
      } else if (name.rfind("dec.lstm", 0) == 0 && diff.cwiseAbs().maxCoeff() > 1e-9) {
        trunk_differs = true;
      }
    }
    EXPECT_TRUE(trunk_differs) << v;
  }
}

TEST(Reconstruct, MeanPathIsDeterministic) {
  for (const auto& v : kVariants) {
    vib::Model m(tiny(v), 12);
    const auto y = random_y(3, 5, 4);
    const auto a = vib::reconstruct(y, m), b = vib::reconstruct(y, m);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values.rows(), 4);
    EXPECT_EQ(a.values.cols(), 5);
    EXPECT_LT((a.values - vib::decode(vib::encode(y, m).t, m).g).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  for (const auto& v : kVariants) {
    vibrec::testing::TempDir dir("ckpt");
    auto cfg = tiny(v);
    cfg.beta = 10.0;
    vib::Model m(cfg, 12);
    m.set_normalizer({Eigen::Vector3d(0.1, -0.2, 0.3), Eigen::Vector3d(1.5, 2.0, 0.5)});
    m.params().round_to_float();
    m.save(dir.path());
    const Json j = read_json_file(dir.path() / "model.json");
    EXPECT_EQ(j.at("config").at("arch"), vib::to_string(cfg.arch));
    EXPECT_EQ(j.at("config").at("stochastic"), cfg.stochastic);
    EXPECT_EQ(j.at("config").at("beta"), 10.0);
    EXPECT_EQ(j.at("parameters").size(), m.params().size());
    vib::Model back = vib::Model::load(dir.path());
    const auto y = random_y(3, 5, 4);
    EXPECT_EQ(vib::reconstruct(y, m).values, vib::reconstruct(y, back).values) << v;
    for (std::size_t i = 0; i < m.params().size(); ++i) EXPECT_EQ(m.params().name(i), back.params().name(i));
  }
}

TEST(Model, ForgetGateBiasPerArchitecture) {
  // Bias layout is [input | forget | cell | output], each `hidden` wide.
  for (const auto& [variant, want] : {std::pair<std::string, double>{"svs-det", 1.0}, {"svs-l-det", vib::kLongMemoryForgetBias}}) {
    vib::Model m(tiny(variant), 1);
    for (const std::string lstm : {"enc.lstm.b", "dec.lstm.b"}) {
      const auto& b = m.params().value(m.params().index(lstm));
      EXPECT_TRUE((b.middleCols(4, 4).array() == want).all()) << variant << " " << lstm;
      EXPECT_TRUE((b.leftCols(4).array() == 0.0).all()) << variant << " " << lstm;
      EXPECT_TRUE((b.rightCols(8).array() == 0.0).all()) << variant << " " << lstm;
    }
  }
}
