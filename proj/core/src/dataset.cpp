#include "vibrec/dataset.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "vibrec/error.hpp"
#include "vibrec/json_io.hpp"
#include "vibrec/rng.hpp"

namespace vibrec::data {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'I', 'B', 'R', 'C'};
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;  // "noise"

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_f32(std::string& buf, double v) {
  put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
 public:
  Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("truncated case file " + name_);
  }
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

std::map<std::string, std::vector<int>> Manifest::splits() const {
  std::map<std::string, std::vector<int>> out;
  for (const auto& c : cases) out[c.split].push_back(c.id);
  return out;
}

std::string case_file_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%06d.bin", id);
  return buf;
}

Case generate_case(const geo::Geometry& geom, const sim::SimConfig& cfg, const PlanEntry& entry, int id,
                   std::uint64_t base_seed, const GenerateOptions& opts) {
  const std::uint64_t seed = base_seed ^ static_cast<std::uint64_t>(id);
  auto sampled = sim::sample_case(seed, entry.tag, geom, cfg, opts.sampling);
  sampled.meta.rotation_deg = entry.rotation_deg;

  Case c;
  c.id = id;
  try {
    c.x = sim::simulate_tmp(geom, sampled.tissue, sampled.exc_node, cfg);
  } catch (const StabilityError& e) {
    throw StabilityError("case " + std::to_string(id) + ": " + e.what());
  }
  const auto op = geo::build_forward_operator(geom, entry.rotation_deg);
  c.y = sim::add_noise(sim::project(op, c.x), opts.snr_db, derive_seed(seed, kNoiseStream));
  c.meta = sampled.meta;
  return c;
}

Manifest generate_dataset(const geo::Geometry& geom, const sim::SimConfig& cfg, const SplitPlan& plan,
                          std::uint64_t base_seed, const fs::path& out_dir, const GenerateOptions& opts) {
  cfg.validate();
  if (plan.empty()) throw ConfigError("generate_dataset: empty split plan");
  for (const auto& e : plan) {
    if (e.count < 1) throw ConfigError("generate_dataset: plan entry '" + e.tag + "' needs count >= 1");
    if (!sim::is_valid_tag(e.tag)) throw ConfigError("generate_dataset: unknown split tag '" + e.tag + "'");
  }

  std::error_code ec;
  fs::create_directories(out_dir / "cases", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "cases").string() + ": " + ec.message());

  Manifest m;
  m.nx = geom.nx;
  m.ny = geom.ny;
  m.lead_count = static_cast<int>(geom.lead_count());
  m.ring_radius = geom.ring_radius;
  m.U = static_cast<int>(geom.node_count());
  m.M = static_cast<int>(geom.lead_count());
  m.T = cfg.frames();
  m.sim = cfg;
  m.sampling = opts.sampling;
  m.snr_db = opts.snr_db;
  m.base_seed = base_seed;
  m.plan = plan;

  int id = 0;
  for (const auto& entry : plan) {
    for (int i = 0; i < entry.count; ++i, ++id) {
      const Case c = generate_case(geom, cfg, entry, id, base_seed, opts);
      const std::string rel = "cases/" + case_file_name(id);
      write_case_file(out_dir / rel, c);
      m.cases.push_back({id, rel, entry.tag, entry.rotation_deg, c.meta.rng_seed});
    }
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

void write_case_file(const fs::path& path, const Case& c) {
  const auto& x = c.x.values;
  const auto& y = c.y.values;
  if (x.cols() != y.cols()) throw ShapeError("write_case_file: x and y frame counts differ");
  std::string buf;
  buf.reserve(static_cast<std::size_t>(24 + 4 * (x.size() + y.size()) + 256));
  buf.append(kMagic.data(), kMagic.size());
  put_u32(buf, kCaseFormatVersion);
  put_u32(buf, static_cast<std::uint32_t>(x.rows()));
  put_u32(buf, static_cast<std::uint32_t>(y.rows()));
  put_u32(buf, static_cast<std::uint32_t>(x.cols()));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index t = 0; t < x.cols(); ++t) put_f32(buf, x(r, t));
  for (Eigen::Index r = 0; r < y.rows(); ++r)
    for (Eigen::Index t = 0; t < y.cols(); ++t) put_f32(buf, y(r, t));
  const std::string meta = Json(c.meta).dump();
  put_u32(buf, static_cast<std::uint32_t>(meta.size()));
  buf += meta;
  write_text_file(path, buf);
}

Case read_case_file(const fs::path& path) {
  Reader rd(read_text_file(path), path.string());
  const std::string magic = rd.take(4);
  if (magic != std::string(kMagic.data(), kMagic.size())) throw IoError("bad magic in " + path.string());
  const std::uint32_t version = rd.u32();
  if (version != kCaseFormatVersion) {
    throw IoError("unsupported case format version " + std::to_string(version) + " in " + path.string());
  }
  const auto U = static_cast<Eigen::Index>(rd.u32());
  const auto M = static_cast<Eigen::Index>(rd.u32());
  const auto T = static_cast<Eigen::Index>(rd.u32());
  Case c;
  c.x.values.resize(U, T);
  c.y.values.resize(M, T);
  for (Eigen::Index r = 0; r < U; ++r)
    for (Eigen::Index t = 0; t < T; ++t) c.x.values(r, t) = rd.f32();
  for (Eigen::Index r = 0; r < M; ++r)
    for (Eigen::Index t = 0; t < T; ++t) c.y.values(r, t) = rd.f32();
  const std::uint32_t len = rd.u32();
  try {
    c.meta = Json::parse(rd.take(len)).get<sim::CaseMeta>();
  } catch (const Json::exception& e) {
    throw IoError("malformed case metadata in " + path.string() + ": " + e.what());
  }
  if (!rd.done()) throw IoError("trailing bytes in " + path.string());
  return c;
}

void write_manifest(const fs::path& path, const Manifest& manifest) { write_json_file(path, Json(manifest)); }

Manifest read_manifest(const fs::path& path) {
  try {
    return read_json_file(path).get<Manifest>();
  } catch (const Json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

Dataset::Dataset(Manifest manifest, std::vector<Case> cases)
    : manifest_(std::move(manifest)),
      cases_(std::move(cases)),
      geometry_(geo::build_grid(manifest_.nx, manifest_.ny, manifest_.lead_count, manifest_.ring_radius)) {}

Dataset Dataset::load(const fs::path& dir) {
  Manifest m = read_manifest(dir / "manifest.json");
  if (m.format_version != kManifestFormatVersion) {
    throw IoError("unsupported manifest version " + std::to_string(m.format_version));
  }
  std::vector<Case> cases;
  cases.reserve(m.cases.size());
  for (const auto& e : m.cases) {
    Case c = read_case_file(dir / e.file);
    c.id = e.id;
    if (c.x.values.rows() != m.U || c.y.values.rows() != m.M || c.x.values.cols() != m.T) {
      throw IoError("case " + std::to_string(e.id) + " dimensions disagree with the manifest");
    }
    c.y.snr_db = m.snr_db;
    cases.push_back(std::move(c));
  }
  return Dataset(std::move(m), std::move(cases));
}

std::vector<const Case*> Dataset::split(const std::string& name) const {
  std::vector<const Case*> out;
  for (std::size_t i = 0; i < cases_.size(); ++i) {
    if (manifest_.cases[i].split == name) out.push_back(&cases_[i]);
  }
  if (out.empty()) throw ConfigError("dataset has no split named '" + name + "'");
  return out;
}

bool Dataset::has_split(const std::string& name) const {
  for (const auto& e : manifest_.cases)
    if (e.split == name) return true;
  return false;
}

std::vector<std::string> Dataset::split_names() const {
  std::vector<std::string> out;
  for (const auto& [name, ids] : manifest_.splits()) out.push_back(name);
  return out;
}

std::vector<bool> scar_mask_of(const geo::Geometry& geom, const sim::CaseMeta& meta) {
  std::vector<bool> mask(geom.node_count(), false);
  if (meta.scar_center < 0) return mask;
  for (int i = 0; i < static_cast<int>(geom.node_count()); ++i) {
    mask[static_cast<std::size_t>(i)] = geo::lattice_distance(geom, i, meta.scar_center) <= meta.scar_radius;
  }
  return mask;
}

}  // namespace vibrec::data
