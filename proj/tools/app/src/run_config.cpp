#include "vibrec_app/run_config.hpp"

#include "vibrec/error.hpp"

namespace vibrec::app {

namespace {

void reject_unknown(const Json& given, const Json& known, const std::string& where) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    const Json& k = known.at(it.key());
    if (k.is_object()) {
      if (!it->is_object()) throw ConfigError("config key '" + path + "' must be an object");
      reject_unknown(*it, k, path);
    }
  }
}

template <typename T>
T get(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

std::vector<std::uint64_t> RunConfig::master_seeds() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n_seeds; ++i) out.push_back(seed + static_cast<std::uint64_t>(i));
  return out;
}

void RunConfig::validate() const {
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (grid.nx < 2 || grid.ny < 2 || grid.leads < 1) throw ConfigError("grid: need nx, ny >= 2 and leads >= 1");
  sim.validate();
  train.validate();
  if (data.plan != "pathology" && data.plan != "rotation-i" && data.plan != "rotation-ii") {
    throw ConfigError("data.plan must be pathology, rotation-i or rotation-ii, got '" + data.plan + "'");
  }
  if (data.n_train < 1 || data.n_test < 1 || data.n_per_angle < 1) throw ConfigError("data: case counts must be >= 1");
  if (data.angle_min > data.angle_max) throw ConfigError("data: angle_min > angle_max");
  if (betas.empty()) throw ConfigError("betas must not be empty");
  for (double b : betas) {
    if (!(b >= 0.0)) throw ConfigError("betas must be >= 0");
  }
  if (diagnose.n_variation_probes < 1 || diagnose.n_taylor_probes < 0 || diagnose.taylor_n_mc < 1 ||
      !(diagnose.h > 0.0) || diagnose.oracle_points < 1) {
    throw ConfigError("diagnose: invalid probe settings");
  }
  vib::ModelConfig probe;
  vib::apply_variant(probe, model.variant);
}

Json to_json(const RunConfig& c) {
  return Json{
      {"seed", c.seed},
      {"n_seeds", c.n_seeds},
      {"out", c.out},
      {"data_dir", c.data_dir},
      {"checkpoint", c.checkpoint},
      {"grid", {{"nx", c.grid.nx}, {"ny", c.grid.ny}, {"leads", c.grid.leads}, {"ring_radius", c.grid.ring_radius}}},
      {"sim", c.sim},
      {"sampling", c.sampling},
      {"snr_db", c.snr_db},
      {"data",
       {{"plan", c.data.plan},
        {"n_train", c.data.n_train},
        {"n_test", c.data.n_test},
        {"n_per_angle", c.data.n_per_angle},
        {"angle_min", c.data.angle_min},
        {"angle_max", c.data.angle_max},
        {"include_test", c.data.include_test}}},
      {"model",
       {{"variant", c.model.variant},
        {"latent_dim", c.model.latent_dim},
        {"enc_hidden", c.model.enc_hidden},
        {"dec_hidden", c.model.dec_hidden},
        {"fc_hidden", c.model.fc_hidden},
        {"dec_step_input", c.model.dec_step_input},
        {"beta", c.model.beta},
        {"n_mc", c.model.n_mc}}},
      {"train",
       {{"lr", c.train.lr},
        {"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"val_fraction", c.train.val_fraction}}},
      {"eval", {{"splits", c.eval.splits}, {"scar_level", c.eval.scar.level}, {"scar_median_ratio", c.eval.scar.median_ratio}}},
      {"betas", c.betas},
      {"diagnose",
       {{"experiment_dir", c.diagnose.experiment_dir},
        {"n_variation_probes", c.diagnose.n_variation_probes},
        {"n_taylor_probes", c.diagnose.n_taylor_probes},
        {"taylor_n_mc", c.diagnose.taylor_n_mc},
        {"h", c.diagnose.h},
        {"oracle_points", c.diagnose.oracle_points}}},
  };
}

RunConfig config_from_json(const Json& given) {
  if (!given.is_object()) throw ConfigError("config must be a JSON object");
  Json j = to_json(RunConfig{});
  reject_unknown(given, j, "");
  j.merge_patch(given);

  RunConfig c;
  c.seed = get<std::uint64_t>(j, "seed");
  c.n_seeds = get<int>(j, "n_seeds");
  c.out = get<std::string>(j, "out");
  c.data_dir = get<std::string>(j, "data_dir");
  c.checkpoint = get<std::string>(j, "checkpoint");
  const Json& g = j.at("grid");
  c.grid = {get<int>(g, "nx"), get<int>(g, "ny"), get<int>(g, "leads"), get<double>(g, "ring_radius")};
  try {
    c.sim = j.at("sim").get<sim::SimConfig>();
    c.sampling = j.at("sampling").get<sim::SamplingConfig>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config sim/sampling: ") + e.what());
  }
  c.snr_db = get<double>(j, "snr_db");
  const Json& d = j.at("data");
  c.data.plan = get<std::string>(d, "plan");
  c.data.n_train = get<int>(d, "n_train");
  c.data.n_test = get<int>(d, "n_test");
  c.data.n_per_angle = get<int>(d, "n_per_angle");
  c.data.angle_min = get<int>(d, "angle_min");
  c.data.angle_max = get<int>(d, "angle_max");
  c.data.include_test = get<bool>(d, "include_test");
  const Json& m = j.at("model");
  c.model.variant = get<std::string>(m, "variant");
  c.model.latent_dim = get<int>(m, "latent_dim");
  c.model.enc_hidden = get<int>(m, "enc_hidden");
  c.model.dec_hidden = get<int>(m, "dec_hidden");
  c.model.fc_hidden = get<int>(m, "fc_hidden");
  c.model.dec_step_input = get<int>(m, "dec_step_input");
  c.model.beta = get<double>(m, "beta");
  c.model.n_mc = get<int>(m, "n_mc");
  const Json& t = j.at("train");
  c.train.lr = get<double>(t, "lr");
  c.train.batch_size = get<int>(t, "batch_size");
  c.train.max_epochs = get<int>(t, "max_epochs");
  c.train.patience = get<int>(t, "patience");
  c.train.val_fraction = get<double>(t, "val_fraction");
  const Json& e = j.at("eval");
  c.eval.splits = get<std::vector<std::string>>(e, "splits");
  c.eval.scar.level = get<double>(e, "scar_level");
  c.eval.scar.median_ratio = get<double>(e, "scar_median_ratio");
  c.betas = get<std::vector<double>>(j, "betas");
  const Json& dg = j.at("diagnose");
  c.diagnose.experiment_dir = get<std::string>(dg, "experiment_dir");
  c.diagnose.n_variation_probes = get<int>(dg, "n_variation_probes");
  c.diagnose.n_taylor_probes = get<int>(dg, "n_taylor_probes");
  c.diagnose.taylor_n_mc = get<int>(dg, "taylor_n_mc");
  c.diagnose.h = get<double>(dg, "h");
  c.diagnose.oracle_points = get<int>(dg, "oracle_points");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

geo::Geometry build_geometry(const RunConfig& c) {
  return geo::build_grid(c.grid.nx, c.grid.ny, c.grid.leads, c.grid.ring_radius);
}

vib::ModelConfig model_config(const RunConfig& c, const std::string& variant, double beta, const data::Manifest& data) {
  vib::ModelConfig m;
  vib::apply_variant(m, variant);
  m.latent_dim = c.model.latent_dim;
  m.enc_hidden = c.model.enc_hidden;
  m.dec_hidden = c.model.dec_hidden;
  m.fc_hidden = c.model.fc_hidden;
  m.dec_step_input = c.model.dec_step_input;
  m.beta = beta;
  m.n_mc = c.model.n_mc;
  m.M = data.M;
  m.T = data.T;
  m.U = data.U;
  return m;
}

}  // namespace vibrec::app
