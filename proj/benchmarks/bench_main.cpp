#include <benchmark/benchmark.h>

#include <vector>

#include "vibrec/apsim.hpp"
#include "vibrec/geometry.hpp"
#include "vibrec/rng.hpp"
#include "vibrec/tensor.hpp"
#include "vibrec/vib.hpp"

using namespace vibrec;

namespace {

void BM_SimulateCase(benchmark::State& state) {
  const auto g = geo::build_grid(8, 8, 16, 20.0);
  const sim::SimConfig cfg;
  const auto tissue = geo::make_tissue(g, 45, 2, cfg.a_healthy, cfg.a_scar);
  for (auto _ : state) benchmark::DoNotOptimize(sim::simulate_tmp(g, tissue, 3, cfg));
}
BENCHMARK(BM_SimulateCase)->Unit(benchmark::kMillisecond);

void BM_ForwardProjection(benchmark::State& state) {
  const auto g = geo::build_grid(8, 8, 16, 20.0);
  const auto op = geo::build_forward_operator(g, 10.0);
  const sim::TmpSequence x{Eigen::MatrixXd::Random(64, 64)};
  for (auto _ : state) benchmark::DoNotOptimize(sim::project(op, x));
}
BENCHMARK(BM_ForwardProjection);

// One LSTM over `T` frames, forward then backward, batch 32.
void BM_LstmForwardBackward(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0)), in = 16, hidden = 64, B = 32;
  ad::ParamStore store;
  Rng rng(1);
  const auto cell = ad::Lstm::create(store, "lstm", in, hidden, rng);
  std::vector<ad::Mat> frames(static_cast<std::size_t>(T), ad::Mat::Random(B, in));
  for (auto _ : state) {
    ad::Tape tape;
    const auto bound = ad::bind(tape, store, cell);
    ad::LstmState s{tape.constant(ad::Mat::Zero(B, hidden)), tape.constant(ad::Mat::Zero(B, hidden))};
    for (const auto& f : frames) s = ad::lstm_step(tape.constant(f), s, bound);
    tape.backward(ad::sum(s.h));
    store.zero_grad();
  }
}
BENCHMARK(BM_LstmForwardBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

// One optimiser step of the default model on a batch of 32 cases.
void BM_TrainStep(benchmark::State& state) {
  vib::ModelConfig cfg;
  vib::apply_variant(cfg, state.range(0) ? "svs-stoch" : "svs-det");
  cfg.M = 16;
  cfg.T = 64;
  cfg.U = 64;
  vib::Model m(cfg, 1);
  std::vector<sim::TmpSequence> xs(32);
  std::vector<sim::EcgSequence> ys(32);
  std::vector<const sim::TmpSequence*> xp;
  std::vector<const sim::EcgSequence*> yp;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i].values = Eigen::MatrixXd::Random(64, 64);
    ys[i].values = Eigen::MatrixXd::Random(16, 64);
    xp.push_back(&xs[i]);
    yp.push_back(&ys[i]);
  }
  const auto batch = m.make_batch(yp, xp);
  Rng rng(2);
  for (auto _ : state) {
    ad::Tape tape;
    tape.backward(vib::loss_for(tape, m, batch, rng));
    ad::adam_step(m.params());
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Gradient-free decoding of many latent points, the inner loop of the diagnostics.
void BM_DecodeMeans(benchmark::State& state) {
  vib::ModelConfig cfg;
  vib::apply_variant(cfg, "svs-stoch");
  cfg.M = 16;
  cfg.T = 64;
  cfg.U = 64;
  vib::Model m(cfg, 1);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(state.range(0), cfg.latent_dim);
  for (auto _ : state) benchmark::DoNotOptimize(vib::decode_means(w, m));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DecodeMeans)->Arg(4)->Arg(8)->Arg(16)->Arg(32)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
