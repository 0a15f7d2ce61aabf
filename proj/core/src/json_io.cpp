#include "vibrec/json_io.hpp"

#include <fstream>
#include <sstream>

#include "vibrec/error.hpp"

namespace vibrec {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

Json read_json_file(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace vibrec

namespace vibrec::sim {

void to_json(Json& j, const SimConfig& c) {
  j = Json{{"k", c.k},
           {"a_healthy", c.a_healthy},
           {"a_scar", c.a_scar},
           {"eps0", c.eps0},
           {"mu1", c.mu1},
           {"mu2", c.mu2},
           {"D", c.diffusion},
           {"dt", c.dt},
           {"n_steps", c.n_steps},
           {"subsample", c.subsample},
           {"stim_amplitude", c.stim_amplitude},
           {"stim_duration_steps", c.stim_duration_steps},
           {"integrator", "heun"}};
}

void from_json(const Json& j, SimConfig& c) {
  c.k = j.at("k").get<double>();
  c.a_healthy = j.at("a_healthy").get<double>();
  c.a_scar = j.at("a_scar").get<double>();
  c.eps0 = j.at("eps0").get<double>();
  c.mu1 = j.at("mu1").get<double>();
  c.mu2 = j.at("mu2").get<double>();
  c.diffusion = j.at("D").get<double>();
  c.dt = j.at("dt").get<double>();
  c.n_steps = j.at("n_steps").get<int>();
  c.subsample = j.at("subsample").get<int>();
  c.stim_amplitude = j.at("stim_amplitude").get<double>();
  c.stim_duration_steps = j.at("stim_duration_steps").get<int>();
}

void to_json(Json& j, const SamplingConfig& c) {
  j = Json{{"dist_low", c.dist_low},
           {"dist_high", c.dist_high},
           {"scar_radius_min", c.scar_radius_min},
           {"scar_radius_max", c.scar_radius_max}};
}

void from_json(const Json& j, SamplingConfig& c) {
  c.dist_low = j.at("dist_low").get<int>();
  c.dist_high = j.at("dist_high").get<int>();
  c.scar_radius_min = j.at("scar_radius_min").get<int>();
  c.scar_radius_max = j.at("scar_radius_max").get<int>();
}

void to_json(Json& j, const CaseMeta& m) {
  j = Json{{"scar_center", m.scar_center},   {"scar_radius", m.scar_radius},
           {"exc_node", m.exc_node},         {"rotation_deg", m.rotation_deg},
           {"difficulty_tag", m.difficulty_tag}, {"rng_seed", m.rng_seed}};
}

void from_json(const Json& j, CaseMeta& m) {
  m.scar_center = j.at("scar_center").get<int>();
  m.scar_radius = j.at("scar_radius").get<int>();
  m.exc_node = j.at("exc_node").get<int>();
  m.rotation_deg = j.at("rotation_deg").get<double>();
  m.difficulty_tag = j.at("difficulty_tag").get<std::string>();
  m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

}  // namespace vibrec::sim

namespace vibrec::data {

void to_json(Json& j, const PlanEntry& e) {
  j = Json{{"tag", e.tag}, {"count", e.count}, {"rotation_deg", e.rotation_deg}};
}

void from_json(const Json& j, PlanEntry& e) {
  e.tag = j.at("tag").get<std::string>();
  e.count = j.at("count").get<int>();
  e.rotation_deg = j.at("rotation_deg").get<double>();
}

void to_json(Json& j, const Manifest& m) {
  Json cases = Json::array();
  for (const auto& c : m.cases) {
    cases.push_back(Json{{"id", c.id},
                         {"file", c.file},
                         {"split", c.split},
                         {"rotation_deg", c.rotation_deg},
                         {"seed", c.seed}});
  }
  Json splits = Json::object();
  for (const auto& [name, ids] : m.splits()) splits[name] = ids;
  j = Json{{"format_version", m.format_version},
           {"dims", {{"U", m.U}, {"M", m.M}, {"T", m.T}}},
           {"grid", {{"nx", m.nx}, {"ny", m.ny}, {"lead_count", m.lead_count}, {"ring_radius", m.ring_radius}}},
           {"sim_config", m.sim},
           {"sampling", m.sampling},
           {"snr_db", m.snr_db},
           {"base_seed", m.base_seed},
           {"split_plan", m.plan},
           {"splits", splits},
           {"cases", cases}};
}

void from_json(const Json& j, Manifest& m) {
  m.format_version = j.at("format_version").get<int>();
  const auto& dims = j.at("dims");
  m.U = dims.at("U").get<int>();
  m.M = dims.at("M").get<int>();
  m.T = dims.at("T").get<int>();
  const auto& grid = j.at("grid");
  m.nx = grid.at("nx").get<int>();
  m.ny = grid.at("ny").get<int>();
  m.lead_count = grid.at("lead_count").get<int>();
  m.ring_radius = grid.at("ring_radius").get<double>();
  m.sim = j.at("sim_config").get<sim::SimConfig>();
  m.sampling = j.at("sampling").get<sim::SamplingConfig>();
  m.snr_db = j.at("snr_db").get<double>();
  m.base_seed = j.at("base_seed").get<std::uint64_t>();
  m.plan = j.at("split_plan").get<SplitPlan>();
  m.cases.clear();
  for (const auto& c : j.at("cases")) {
    ManifestEntry e;
    e.id = c.at("id").get<int>();
    e.file = c.at("file").get<std::string>();
    e.split = c.at("split").get<std::string>();
    e.rotation_deg = c.at("rotation_deg").get<double>();
    e.seed = c.at("seed").get<std::uint64_t>();
    m.cases.push_back(std::move(e));
  }
}

}  // namespace vibrec::data
