#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vibrec/geometry.hpp"

namespace vibrec::sim {

/// Aliev-Panfilov parameters and integration schedule.
struct SimConfig {
  double k = 8.0;
  double a_healthy = 0.15;
  double a_scar = 0.5;
  double eps0 = 0.002;
  double mu1 = 0.2;
  double mu2 = 0.3;
  double diffusion = 0.1;
  double dt = 0.05;
  int n_steps = 3200;
  int subsample = 50;
  double stim_amplitude = 0.5;  // added to du/dt at the stimulus node
  int stim_duration_steps = 20;

  int frames() const { return subsample > 0 ? n_steps / subsample : 0; }
  /// Throws ConfigError when the schedule is unstable or degenerate.
  void validate() const;
};

/// Transmembrane potential, one row per heart node, one column per frame.
struct TmpSequence {
  Eigen::MatrixXd values;
};

/// Surface potential, one row per lead, one column per frame.
struct EcgSequence {
  Eigen::MatrixXd values;
  std::optional<double> snr_db;
};

inline const std::vector<std::string>& pathology_tags() {
  static const std::vector<std::string> tags{"scarL_excL", "scarL_excH", "scarH_excL", "scarH_excH"};
  return tags;
}

/// True for "train", the four pathology tags and "angle:<deg>".
bool is_valid_tag(const std::string& tag);
std::string angle_tag(double rotation_deg);
/// Parses the angle from an "angle:<deg>" tag; nullopt for other tags.
std::optional<double> parse_angle_tag(const std::string& tag);

struct CaseMeta {
  int scar_center = -1;
  int scar_radius = 0;
  int exc_node = -1;
  double rotation_deg = 0.0;
  std::string difficulty_tag = "train";
  std::uint64_t rng_seed = 0;

  bool operator==(const CaseMeta&) const = default;
};

/// How far test pools sit from the training pools, in lattice steps.
struct SamplingConfig {
  int dist_low = 1;
  int dist_high = 3;
  int scar_radius_min = 1;
  int scar_radius_max = 2;
};

/// Candidate node pools for one varied parameter.
struct NodePools {
  std::vector<int> train;
  std::vector<int> low;
  std::vector<int> high;
};

/// Stimulus origins: training pool is the left half of the lattice (ix < nx/2).
NodePools excitation_pools(const geo::Geometry& geom, const SamplingConfig& cfg = {});
/// Scar centers: training pool is the bottom half of the lattice (iy < ny/2).
NodePools scar_pools(const geo::Geometry& geom, const SamplingConfig& cfg = {});

struct SampledCase {
  geo::TissueMap tissue;
  int exc_node = -1;
  CaseMeta meta;
};

SampledCase sample_case(std::uint64_t rng_seed, const std::string& split, const geo::Geometry& geom,
                        const SimConfig& sim = {}, const SamplingConfig& sampling = {});

/// Integrates the monodomain Aliev-Panfilov system on the lattice graph with
/// Heun's method and returns every `subsample`-th state (frame 0 is the
/// resting initial state).
TmpSequence simulate_tmp(const geo::Geometry& geom, const geo::TissueMap& tissue, int exc_node,
                         const SimConfig& cfg);

/// y = H x, column by column. The result is clean (no SNR recorded).
EcgSequence project(const geo::ForwardOperator& op, const TmpSequence& x);

/// Adds white Gaussian noise with variance mean(y^2) * 10^(-snr_db/10).
EcgSequence add_noise(const EcgSequence& y, double snr_db, std::uint64_t rng_seed);

}  // namespace vibrec::sim
