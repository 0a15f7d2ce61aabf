#include "vibrec/apsim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "vibrec/error.hpp"
#include "vibrec/rng.hpp"

namespace vibrec::sim {

void SimConfig::validate() const {
  if (!(dt > 0.0) || dt > 0.05) {
    throw ConfigError("SimConfig: dt must lie in (0, 0.05]");
  }
  if (subsample < 1) {
    throw ConfigError("SimConfig: subsample must be >= 1");
  }
  if (n_steps % subsample != 0) {
    throw ConfigError("SimConfig: n_steps must be a multiple of subsample");
  }
  if (frames() < 2) {
    throw ConfigError("SimConfig: need at least two output frames");
  }
  if (stim_duration_steps < 0) {
    throw ConfigError("SimConfig: stim_duration_steps must be >= 0");
  }
}

bool is_valid_tag(const std::string& tag) {
  if (tag == "train") return true;
  const auto& p = pathology_tags();
  if (std::find(p.begin(), p.end(), tag) != p.end()) return true;
  return parse_angle_tag(tag).has_value();
}

std::string angle_tag(double rotation_deg) {
  std::ostringstream os;
  os << "angle:";
  if (rotation_deg > 0) os << '+';
  os << rotation_deg;
  return os.str();
}

std::optional<double> parse_angle_tag(const std::string& tag) {
  constexpr std::string_view prefix = "angle:";
  if (tag.rfind(prefix, 0) != 0) return std::nullopt;
  std::string body = tag.substr(prefix.size());
  if (!body.empty() && body.front() == '+') body.erase(0, 1);
  if (body.empty()) return std::nullopt;
  double value = 0.0;
  const auto* first = body.data();
  const auto* last = body.data() + body.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || !std::isfinite(value)) return std::nullopt;
  return value;
}

namespace {

// Splits nodes by minimum lattice distance to the training pool.
NodePools split_by_distance(const geo::Geometry& geom, std::vector<int> train,
                            const SamplingConfig& cfg) {
  NodePools pools;
  const int n = static_cast<int>(geom.node_count());
  std::vector<bool> in_train(static_cast<std::size_t>(n), false);
  for (int t : train) in_train[static_cast<std::size_t>(t)] = true;
  for (int i = 0; i < n; ++i) {
    if (in_train[static_cast<std::size_t>(i)]) continue;
    int best = std::numeric_limits<int>::max();
    for (int t : train) best = std::min(best, geo::lattice_distance(geom, i, t));
    if (best <= cfg.dist_low) pools.low.push_back(i);
    if (best >= cfg.dist_high) pools.high.push_back(i);
  }
  pools.train = std::move(train);
  return pools;
}

int pick(Rng& rng, const std::vector<int>& pool) {
  return pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
}

}  // namespace

NodePools excitation_pools(const geo::Geometry& geom, const SamplingConfig& cfg) {
  std::vector<int> train;
  for (int i = 0; i < static_cast<int>(geom.node_count()); ++i) {
    if (geom.ix(i) < geom.nx / 2) train.push_back(i);
  }
  return split_by_distance(geom, std::move(train), cfg);
}

NodePools scar_pools(const geo::Geometry& geom, const SamplingConfig& cfg) {
  std::vector<int> train;
  for (int i = 0; i < static_cast<int>(geom.node_count()); ++i) {
    if (geom.iy(i) < geom.ny / 2) train.push_back(i);
  }
  return split_by_distance(geom, std::move(train), cfg);
}

SampledCase sample_case(std::uint64_t rng_seed, const std::string& split, const geo::Geometry& geom,
                        const SimConfig& sim, const SamplingConfig& sampling) {
  if (!is_valid_tag(split)) {
    throw ConfigError("sample_case: unknown split tag '" + split + "'");
  }
  if (sampling.dist_low < 1 || sampling.dist_high <= sampling.dist_low ||
      sampling.scar_radius_min < 0 || sampling.scar_radius_max < sampling.scar_radius_min) {
    throw ConfigError("sample_case: invalid sampling configuration");
  }
  const NodePools exc = excitation_pools(geom, sampling);
  const NodePools scar = scar_pools(geom, sampling);

  // Angle splits share the training distribution; only H changes.
  const std::vector<int>* exc_pool = &exc.train;
  const std::vector<int>* scar_pool = &scar.train;
  if (split.starts_with("scar")) {
    scar_pool = split[4] == 'L' ? &scar.low : &scar.high;
    exc_pool = split.back() == 'L' ? &exc.low : &exc.high;
  }
  if (exc_pool->empty() || scar_pool->empty()) {
    throw ConfigError("sample_case: node pools for split '" + split + "' are empty on a " +
                      std::to_string(geom.nx) + "x" + std::to_string(geom.ny) + " grid");
  }

  Rng rng(rng_seed);
  constexpr int kMaxTries = 256;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    const int center = pick(rng, *scar_pool);
    const int radius = static_cast<int>(rng.uniform_int(sampling.scar_radius_min, sampling.scar_radius_max));
    geo::TissueMap tissue = geo::make_tissue(geom, center, radius, sim.a_healthy, sim.a_scar);
    std::vector<int> candidates;
    for (int node : *exc_pool) {
      if (!tissue.scar_mask[static_cast<std::size_t>(node)]) candidates.push_back(node);
    }
    if (candidates.empty()) continue;
    const int exc_node = pick(rng, candidates);

    SampledCase out;
    out.tissue = std::move(tissue);
    out.exc_node = exc_node;
    out.meta.scar_center = center;
    out.meta.scar_radius = radius;
    out.meta.exc_node = exc_node;
    out.meta.rotation_deg = parse_angle_tag(split).value_or(0.0);
    out.meta.difficulty_tag = split;
    out.meta.rng_seed = rng_seed;
    return out;
  }
  throw ConfigError("sample_case: could not place a stimulus outside the scar for split '" + split + "'");
}

TmpSequence simulate_tmp(const geo::Geometry& geom, const geo::TissueMap& tissue, int exc_node,
                         const SimConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(geom.node_count());
  if (exc_node < 0 || exc_node >= n) {
    throw ConfigError("simulate_tmp: stimulus node out of range");
  }
  if (static_cast<Eigen::Index>(tissue.excitability.size()) != n) {
    throw ShapeError("simulate_tmp: tissue map does not match geometry");
  }
  if (!tissue.scar_mask.empty() && tissue.scar_mask[static_cast<std::size_t>(exc_node)]) {
    throw ConfigError("simulate_tmp: stimulus node lies inside the scar");
  }

  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) a(i) = tissue.excitability[static_cast<std::size_t>(i)];

  auto rhs = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& v, double stim, Eigen::VectorXd& du,
                 Eigen::VectorXd& dv) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double lap = 0.0;
      for (int j : geom.adjacency[static_cast<std::size_t>(i)]) lap += u(j) - u(i);
      const double ui = u(i);
      const double vi = v(i);
      du(i) = cfg.diffusion * lap - cfg.k * ui * (ui - a(i)) * (ui - 1.0) - ui * vi;
      dv(i) = (cfg.eps0 + cfg.mu1 * vi / (ui + cfg.mu2)) * (-vi - cfg.k * ui * (ui - a(i) - 1.0));
    }
    du(exc_node) += stim;
  };

  const int frames = cfg.frames();
  TmpSequence out;
  out.values.resize(n, frames);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd k1u(n), k1v(n), k2u(n), k2v(n), pu(n), pv(n);

  for (int step = 0; step < cfg.n_steps; ++step) {
    if (step % cfg.subsample == 0) out.values.col(step / cfg.subsample) = u;
    const double stim = step < cfg.stim_duration_steps ? cfg.stim_amplitude : 0.0;
    rhs(u, v, stim, k1u, k1v);
    pu = u + cfg.dt * k1u;
    pv = v + cfg.dt * k1v;
    rhs(pu, pv, stim, k2u, k2v);
    u += 0.5 * cfg.dt * (k1u + k2u);
    v += 0.5 * cfg.dt * (k1v + k2v);
    if (!u.allFinite() || u.cwiseAbs().maxCoeff() > 2.0) {
      throw StabilityError("simulate_tmp: |u| exceeded 2 at step " + std::to_string(step + 1));
    }
  }
  return out;
}

EcgSequence project(const geo::ForwardOperator& op, const TmpSequence& x) {
  if (op.H.cols() != x.values.rows()) {
    throw ShapeError("project: H has " + std::to_string(op.H.cols()) + " columns but x has " +
                     std::to_string(x.values.rows()) + " nodes");
  }
  EcgSequence y;
  y.values = op.H * x.values;
  return y;
}

EcgSequence add_noise(const EcgSequence& y, double snr_db, std::uint64_t rng_seed) {
  if (!std::isfinite(snr_db)) {
    throw DomainError("add_noise: snr_db must be finite; use project() for clean data");
  }
  if (!y.values.allFinite()) {
    throw DomainError("add_noise: signal has non-finite entries");
  }
  const double power = y.values.squaredNorm() / static_cast<double>(y.values.size());
  if (!(power > 0.0)) {
    throw DomainError("add_noise: SNR is undefined for an all-zero signal");
  }
  const double sd = std::sqrt(power * std::pow(10.0, -snr_db / 10.0));
  Rng rng(rng_seed);
  EcgSequence out = y;
  for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.values.rows(); ++r) {
      out.values(r, c) += sd * rng.normal();
    }
  }
  out.snr_db = snr_db;
  return out;
}

}  // namespace vibrec::sim
