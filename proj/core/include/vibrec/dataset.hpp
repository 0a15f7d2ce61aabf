#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vibrec/apsim.hpp"
#include "vibrec/geometry.hpp"

namespace vibrec::data {

inline constexpr std::uint32_t kCaseFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;
inline constexpr double kDefaultSnrDb = 40.0;

struct PlanEntry {
  std::string tag;
  int count = 0;
  double rotation_deg = 0.0;
};

using SplitPlan = std::vector<PlanEntry>;

struct Case {
  int id = 0;
  sim::TmpSequence x;
  sim::EcgSequence y;
  sim::CaseMeta meta;
};

struct ManifestEntry {
  int id = 0;
  std::string file;
  std::string split;
  double rotation_deg = 0.0;
  std::uint64_t seed = 0;
};

struct Manifest {
  int format_version = kManifestFormatVersion;
  int nx = 0;
  int ny = 0;
  int lead_count = 0;
  double ring_radius = 0.0;
  int U = 0;
  int M = 0;
  int T = 0;
  sim::SimConfig sim;
  sim::SamplingConfig sampling;
  double snr_db = kDefaultSnrDb;
  std::uint64_t base_seed = 0;
  SplitPlan plan;
  std::vector<ManifestEntry> cases;

  /// Split name -> case ids in generation order.
  std::map<std::string, std::vector<int>> splits() const;
};

struct GenerateOptions {
  double snr_db = kDefaultSnrDb;
  sim::SamplingConfig sampling;
};

/// Generates one case per planned slot. Per-case seed is `base_seed ^ id`,
/// so every case is reproducible on its own.
Case generate_case(const geo::Geometry& geom, const sim::SimConfig& cfg, const PlanEntry& entry,
                   int id, std::uint64_t base_seed, const GenerateOptions& opts = {});

/// Writes `manifest.json` and `cases/case_<id>.bin` under `out_dir` and
/// returns the manifest.
Manifest generate_dataset(const geo::Geometry& geom, const sim::SimConfig& cfg, const SplitPlan& plan,
                          std::uint64_t base_seed, const std::filesystem::path& out_dir,
                          const GenerateOptions& opts = {});

void write_case_file(const std::filesystem::path& path, const Case& c);
Case read_case_file(const std::filesystem::path& path);

std::string case_file_name(int id);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// In-memory dataset. Cases are held in manifest order.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& dir);
  Dataset(Manifest manifest, std::vector<Case> cases);

  const Manifest& manifest() const { return manifest_; }
  const std::vector<Case>& cases() const { return cases_; }
  const geo::Geometry& geometry() const { return geometry_; }
  /// Cases whose split tag equals `name`. Throws ConfigError when absent.
  std::vector<const Case*> split(const std::string& name) const;
  bool has_split(const std::string& name) const;
  std::vector<std::string> split_names() const;

 private:
  Manifest manifest_;
  std::vector<Case> cases_;
  geo::Geometry geometry_;
};

/// Scar mask reconstructed from a case's metadata on the dataset geometry.
std::vector<bool> scar_mask_of(const geo::Geometry& geom, const sim::CaseMeta& meta);

}  // namespace vibrec::data
