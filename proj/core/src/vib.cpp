#include "vibrec/vib.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "vibrec/error.hpp"
#include "vibrec/json_io.hpp"

namespace vibrec::vib {

using ad::Mat;
using ad::Var;

std::string to_string(Arch arch) { return arch == Arch::Svs ? "svs" : "svs-L"; }

Arch parse_arch(const std::string& s) {
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "svs") return Arch::Svs;
  if (lower == "svs-l") return Arch::SvsL;
  throw ConfigError("unknown architecture '" + s + "' (expected svs or svs-L)");
}

void ModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("ModelConfig: latent_dim must be >= 1");
  if (n_mc < 1) throw ConfigError("ModelConfig: n_mc must be >= 1");
  if (enc_hidden < 1 || dec_hidden < 1) throw ConfigError("ModelConfig: LSTM hidden sizes must be >= 1");
  if (arch == Arch::Svs && (fc_hidden < 1 || dec_step_input < 1)) {
    throw ConfigError("ModelConfig: svs needs fc_hidden and dec_step_input >= 1");
  }
  if (stochastic && !(beta >= 0.0)) throw ConfigError("ModelConfig: beta must be >= 0");
  if (M < 1 || T < 1 || U < 1) throw ConfigError("ModelConfig: data dimensions M, T, U must be set");
}

std::string ModelConfig::variant_name() const {
  return to_string(arch) + (stochastic ? "-stochastic" : "-deterministic");
}

void apply_variant(ModelConfig& cfg, const std::string& variant) {
  std::string v = variant;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto dash = v.rfind('-');
  if (dash == std::string::npos) throw ConfigError("variant '" + variant + "' must look like svs-stoch");
  const std::string arch = v.substr(0, dash);
  const std::string kind = v.substr(dash + 1);
  cfg.arch = parse_arch(arch);
  if (kind == "stoch" || kind == "stochastic") {
    cfg.stochastic = true;
  } else if (kind == "det" || kind == "deterministic") {
    cfg.stochastic = false;
  } else {
    throw ConfigError("variant '" + variant + "': expected a stoch or det suffix");
  }
}

// ---- Model ----------------------------------------------------------------

Model::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(init_seed);
  const Eigen::Index d = cfg_.latent_dim;
  // svs-L reads the encoder only at its last step and feeds the decoder no
  // input, so both LSTMs must carry information across all T frames. A +1
  // forget bias forgets the latent within a few frames and training stalls
  // at the mean sequence.
  const double forget_bias = cfg_.arch == Arch::SvsL ? kLongMemoryForgetBias : 1.0;
  enc_lstm_ = ad::Lstm::create(params_, "enc.lstm", cfg_.M, cfg_.enc_hidden, rng, forget_bias);
  Eigen::Index code_width = cfg_.enc_hidden;
  if (cfg_.arch == Arch::Svs) {
    enc_fc1_ = ad::Dense::create(params_, "enc.fc1", static_cast<Eigen::Index>(cfg_.T) * cfg_.enc_hidden,
                                 cfg_.fc_hidden, rng);
    enc_fc2_ = ad::Dense::create(params_, "enc.fc2", cfg_.fc_hidden, cfg_.fc_hidden, rng);
    code_width = cfg_.fc_hidden;
  }
  enc_mean_ = ad::Dense::create(params_, "enc.mean", code_width, d, rng);
  if (cfg_.stochastic) enc_logvar_ = ad::Dense::create(params_, "enc.logvar", code_width, d, rng);

  if (cfg_.arch == Arch::Svs) {
    dec_fc1_ = ad::Dense::create(params_, "dec.fc1", d, cfg_.fc_hidden, rng);
    dec_fc2_ = ad::Dense::create(params_, "dec.fc2", cfg_.fc_hidden,
                                 static_cast<Eigen::Index>(cfg_.T) * cfg_.dec_step_input, rng);
    dec_lstm_ = ad::Lstm::create(params_, "dec.lstm", cfg_.dec_step_input, cfg_.dec_hidden, rng);
  } else {
    dec_init_h_ = ad::Dense::create(params_, "dec.init_h", d, cfg_.dec_hidden, rng);
    dec_init_c_ = ad::Dense::create(params_, "dec.init_c", d, cfg_.dec_hidden, rng);
    dec_lstm_ = ad::Lstm::create(params_, "dec.lstm", 0, cfg_.dec_hidden, rng, forget_bias);
  }
  dec_mean_ = ad::Dense::create(params_, "dec.mean", cfg_.dec_hidden, cfg_.U, rng);
  if (cfg_.stochastic) dec_logvar_ = ad::Dense::create(params_, "dec.logvar", cfg_.dec_hidden, cfg_.U, rng);

  norm_.mean = Eigen::VectorXd::Zero(cfg_.M);
  norm_.stddev = Eigen::VectorXd::Ones(cfg_.M);
}

void Model::set_normalizer(Normalizer n) {
  if (n.mean.size() != cfg_.M || n.stddev.size() != cfg_.M) throw ShapeError("normalizer size != lead count");
  if (!(n.stddev.array() > 0.0).all()) throw DomainError("normalizer standard deviations must be positive");
  norm_ = std::move(n);
}

std::vector<std::size_t> Model::encoder_params() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_.name(i).starts_with("enc.")) out.push_back(i);
  return out;
}

std::vector<std::size_t> Model::decoder_params() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_.name(i).starts_with("dec.")) out.push_back(i);
  return out;
}

Batch Model::make_batch(std::span<const sim::EcgSequence* const> ys,
                        std::span<const sim::TmpSequence* const> xs) const {
  if (ys.empty()) throw ShapeError("make_batch: empty batch");
  if (!xs.empty() && xs.size() != ys.size()) throw ShapeError("make_batch: x/y counts differ");
  const auto B = static_cast<Eigen::Index>(ys.size());
  Batch b;
  b.inputs.assign(static_cast<std::size_t>(cfg_.T), Mat(B, cfg_.M));
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& y = ys[static_cast<std::size_t>(i)]->values;
    if (y.rows() != cfg_.M || y.cols() != cfg_.T) {
      throw ShapeError("encode: expected y of " + std::to_string(cfg_.M) + "x" + std::to_string(cfg_.T) + ", got " +
                       std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
    }
    for (int t = 0; t < cfg_.T; ++t) {
      b.inputs[static_cast<std::size_t>(t)].row(i) =
          ((y.col(t) - norm_.mean).array() / norm_.stddev.array()).matrix().transpose();
    }
  }
  if (!xs.empty()) {
    b.targets.assign(static_cast<std::size_t>(cfg_.T), Mat(B, cfg_.U));
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto& x = xs[static_cast<std::size_t>(i)]->values;
      if (x.rows() != cfg_.U || x.cols() != cfg_.T) throw ShapeError("make_batch: x has the wrong shape");
      for (int t = 0; t < cfg_.T; ++t) b.targets[static_cast<std::size_t>(t)].row(i) = x.col(t).transpose();
    }
  }
  return b;
}

LatentVars Model::encode(ad::Tape& tape, const Batch& batch) {
  if (static_cast<int>(batch.inputs.size()) != cfg_.T) throw ShapeError("encode: batch has the wrong frame count");
  const Eigen::Index B = batch.size();
  const auto lstm = ad::bind(tape, params_, enc_lstm_);
  ad::LstmState s{tape.constant(Mat::Zero(B, cfg_.enc_hidden)), tape.constant(Mat::Zero(B, cfg_.enc_hidden))};
  std::vector<Var> hidden;
  hidden.reserve(batch.inputs.size());
  for (const auto& frame : batch.inputs) {
    if (frame.cols() != cfg_.M) throw ShapeError("encode: input frame width != M");
    s = ad::lstm_step(tape.constant(frame), s, lstm);
    hidden.push_back(s.h);
  }
  Var code = s.h;
  if (cfg_.arch == Arch::Svs) {
    code = ad::relu(ad::bind(tape, params_, enc_fc1_)(ad::concat_cols(hidden)));
    code = ad::relu(ad::bind(tape, params_, enc_fc2_)(code));
  }
  LatentVars out;
  out.mean = ad::bind(tape, params_, enc_mean_)(code);
  if (cfg_.stochastic) {
    out.logvar = ad::clamp(ad::bind(tape, params_, enc_logvar_)(code), kLogVarMin, kLogVarMax);
    out.sigma = ad::exp(ad::scale(out.logvar, 0.5));
  }
  return out;
}

OutputVars Model::decode(ad::Tape& tape, Var w, bool with_variance) {
  if (w.cols() != cfg_.latent_dim) {
    throw ShapeError("decode: latent width " + std::to_string(w.cols()) + " != " + std::to_string(cfg_.latent_dim));
  }
  const Eigen::Index B = w.rows();
  const auto lstm = ad::bind(tape, params_, dec_lstm_);
  const auto mean_head = ad::bind(tape, params_, dec_mean_);
  const bool emit_variance = cfg_.stochastic && with_variance;
  ad::BoundDense logvar_head;
  if (emit_variance) logvar_head = ad::bind(tape, params_, dec_logvar_);

  OutputVars out;
  out.mean.reserve(static_cast<std::size_t>(cfg_.T));
  auto emit = [&](Var h) {
    out.mean.push_back(mean_head(h));
    if (emit_variance) {
      out.logvar.push_back(ad::clamp(logvar_head(cfg_.detach_variance_head ? tape.constant(h.value()) : h),
                                     kLogVarMin, kLogVarMax));
    }
  };

  if (cfg_.arch == Arch::Svs) {
    Var e = ad::relu(ad::bind(tape, params_, dec_fc1_)(w));
    e = ad::relu(ad::bind(tape, params_, dec_fc2_)(e));
    ad::LstmState s{tape.constant(Mat::Zero(B, cfg_.dec_hidden)), tape.constant(Mat::Zero(B, cfg_.dec_hidden))};
    for (int t = 0; t < cfg_.T; ++t) {
      s = ad::lstm_step(ad::slice_cols(e, static_cast<Eigen::Index>(t) * cfg_.dec_step_input, cfg_.dec_step_input),
                        s, lstm);
      emit(s.h);
    }
  } else {
    ad::LstmState s{ad::tanh(ad::bind(tape, params_, dec_init_h_)(w)), ad::bind(tape, params_, dec_init_c_)(w)};
    for (int t = 0; t < cfg_.T; ++t) {
      s = ad::lstm_step(Var{}, s, lstm);
      emit(s.h);
    }
  }
  return out;
}

void Model::copy_shared_params(const Model& other) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (auto j = other.params().find(params_.name(i))) {
      const Mat& v = other.params().value(*j);
      if (v.rows() != params_.value(i).rows() || v.cols() != params_.value(i).cols()) {
        throw ShapeError("copy_shared_params: shape mismatch for '" + params_.name(i) + "'");
      }
      params_.value(i) = v;
    }
  }
  norm_ = other.norm_;
}

namespace {

Json config_json(const ModelConfig& c) {
  return Json{{"arch", to_string(c.arch)},     {"stochastic", c.stochastic},
              {"latent_dim", c.latent_dim},    {"enc_hidden", c.enc_hidden},
              {"dec_hidden", c.dec_hidden},    {"fc_hidden", c.fc_hidden},
              {"dec_step_input", c.dec_step_input}, {"beta", c.beta},
              {"n_mc", c.n_mc},                {"detach_variance_head", c.detach_variance_head},
              {"M", c.M},
              {"T", c.T},                      {"U", c.U}};
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.stochastic = j.at("stochastic").get<bool>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.enc_hidden = j.at("enc_hidden").get<int>();
  c.dec_hidden = j.at("dec_hidden").get<int>();
  c.fc_hidden = j.at("fc_hidden").get<int>();
  c.dec_step_input = j.at("dec_step_input").get<int>();
  c.beta = j.at("beta").get<double>();
  c.n_mc = j.at("n_mc").get<int>();
  c.detach_variance_head = j.at("detach_variance_head").get<bool>();
  c.M = j.at("M").get<int>();
  c.T = j.at("T").get<int>();
  c.U = j.at("U").get<int>();
  return c;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void Model::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  Json params = Json::array();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params.push_back(Json{{"name", params_.name(i)},
                          {"shape", {params_.value(i).rows(), params_.value(i).cols()}}});
  }
  Json j{{"format_version", kCheckpointFormatVersion},
         {"config", config_json(cfg_)},
         {"variant", cfg_.variant_name()},
         {"normalizer", {{"mean", to_std(norm_.mean)}, {"stddev", to_std(norm_.stddev)}}},
         {"parameters", params},
         {"params_file", "params.bin"}};
  write_json_file(dir / "model.json", j);
  ad::write_params_bin(dir / "params.bin", params_);
}

Model Model::load(const std::filesystem::path& dir) {
  const Json j = read_json_file(dir / "model.json");
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw IoError("unsupported checkpoint version in " + dir.string());
    }
    Model m(config_from_json(j.at("config")), 0);
    const auto& plist = j.at("parameters");
    if (plist.size() != m.params_.size()) throw IoError("checkpoint parameter list does not match the architecture");
    for (std::size_t i = 0; i < plist.size(); ++i) {
      const auto shape = plist[i].at("shape").get<std::vector<Eigen::Index>>();
      if (plist[i].at("name").get<std::string>() != m.params_.name(i) || shape.size() != 2 ||
          shape[0] != m.params_.value(i).rows() || shape[1] != m.params_.value(i).cols()) {
        throw IoError("checkpoint parameter " + std::to_string(i) + " does not match the architecture");
      }
    }
    ad::read_params_bin(dir / "params.bin", m.params_);
    const auto mean = j.at("normalizer").at("mean").get<std::vector<double>>();
    const auto sd = j.at("normalizer").at("stddev").get<std::vector<double>>();
    m.set_normalizer({Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                      Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()))});
    return m;
  } catch (const Json::exception& e) {
    throw IoError("malformed checkpoint " + dir.string() + ": " + e.what());
  }
}

// ---- single-sequence operations -------------------------------------------

LatentGaussian encode(const sim::EcgSequence& y, Model& model) {
  ad::Tape tape(false);
  const sim::EcgSequence* ys[] = {&y};
  const LatentVars lat = model.encode(tape, model.make_batch(ys));
  LatentGaussian out;
  out.t = lat.mean.value().row(0).transpose();
  out.sigma_t = model.config().stochastic ? Eigen::VectorXd(lat.sigma.value().row(0).transpose())
                                          : Eigen::VectorXd::Zero(out.t.size());
  return out;
}

Eigen::VectorXd sample_latent(const LatentGaussian& lat, const Eigen::VectorXd& eps) {
  if (lat.t.size() != lat.sigma_t.size() || eps.size() != lat.t.size()) {
    throw ShapeError("sample_latent: eps length " + std::to_string(eps.size()) + " != latent length " +
                     std::to_string(lat.t.size()));
  }
  return lat.t + lat.sigma_t.cwiseProduct(eps);
}

namespace {

Eigen::MatrixXd frames_to_matrix(const std::vector<Var>& frames, Eigen::Index row, bool exp_values) {
  Eigen::MatrixXd out(frames.front().cols(), static_cast<Eigen::Index>(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto r = frames[t].value().row(row).transpose();
    if (exp_values) {
      out.col(static_cast<Eigen::Index>(t)) = r.array().exp();
    } else {
      out.col(static_cast<Eigen::Index>(t)) = r;
    }
  }
  return out;
}

}  // namespace

OutputGaussian decode(const Eigen::VectorXd& w, Model& model) {
  if (w.size() != model.config().latent_dim) throw ShapeError("decode: latent length mismatch");
  ad::Tape tape(false);
  const OutputVars o = model.decode(tape, tape.constant(Mat(w.transpose())));
  OutputGaussian out;
  out.g = frames_to_matrix(o.mean, 0, false);
  out.sigma_x2 = model.config().stochastic ? frames_to_matrix(o.logvar, 0, true)
                                           : Eigen::MatrixXd::Ones(out.g.rows(), out.g.cols());
  return out;
}

std::vector<Eigen::MatrixXd> decode_means(const Eigen::MatrixXd& w, Model& model) {
  if (w.cols() != model.config().latent_dim) throw ShapeError("decode_means: latent width mismatch");
  ad::Tape tape(false);
  const OutputVars o = model.decode(tape, tape.constant(Mat(w)), false);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) out.push_back(frames_to_matrix(o.mean, r, false));
  return out;
}

double kl_to_standard_normal(const LatentGaussian& lat) {
  if (lat.t.size() != lat.sigma_t.size()) throw ShapeError("kl_to_standard_normal: length mismatch");
  if (!(lat.sigma_t.array() > 0.0).all()) {
    throw ContractError("kl_to_standard_normal: requires a stochastic latent (sigma_t > 0)");
  }
  const Eigen::ArrayXd s2 = lat.sigma_t.array().square();
  return 0.5 * (s2 + lat.t.array().square() - 1.0 - s2.log()).sum();
}

double nll_term(const sim::TmpSequence& x, const OutputGaussian& out) {
  if (x.values.rows() != out.g.rows() || x.values.cols() != out.g.cols() ||
      out.sigma_x2.rows() != out.g.rows() || out.sigma_x2.cols() != out.g.cols()) {
    throw ShapeError("nll_term: shapes differ");
  }
  if (!(out.sigma_x2.array() > 0.0).all()) throw DomainError("nll_term: variances must be positive");
  return ((x.values - out.g).array().square() / out.sigma_x2.array() + out.sigma_x2.array().log()).sum();
}

std::vector<sim::TmpSequence> reconstruct_batch(std::span<const sim::EcgSequence* const> ys, Model& model) {
  ad::Tape tape(false);
  const LatentVars lat = model.encode(tape, model.make_batch(ys));
  const OutputVars o = model.decode(tape, lat.mean, false);
  std::vector<sim::TmpSequence> out(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) out[i].values = frames_to_matrix(o.mean, static_cast<Eigen::Index>(i), false);
  return out;
}

sim::TmpSequence reconstruct(const sim::EcgSequence& y, Model& model) {
  const sim::EcgSequence* ys[] = {&y};
  return std::move(reconstruct_batch(ys, model).front());
}

// ---- objectives ------------------------------------------------------------

namespace {

Var gaussian_nll(ad::Tape& tape, const OutputVars& o, const Batch& batch, bool unit_variance) {
  Var total;
  for (std::size_t t = 0; t < o.mean.size(); ++t) {
    Var diff = ad::sub(tape.constant(batch.targets[t]), o.mean[t]);
    Var term;
    if (unit_variance || o.logvar.empty()) {
      term = ad::sum(ad::square(diff));
    } else {
      const Var& lv = o.logvar[t];
      term = ad::sum(ad::add(ad::mul(ad::square(diff), ad::exp(ad::neg(lv))), lv));
    }
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

void require_targets(const Batch& batch, const ModelConfig& cfg) {
  if (static_cast<int>(batch.targets.size()) != cfg.T) throw ShapeError("loss: batch carries no targets");
}

}  // namespace

Var loss_ib(ad::Tape& tape, Model& model, const Batch& batch, Rng& rng, const LossOptions& opts) {
  const ModelConfig& cfg = model.config();
  if (!cfg.stochastic) throw ContractError("loss_ib: model is deterministic");
  require_targets(batch, cfg);
  const Eigen::Index B = batch.size();
  const LatentVars lat = model.encode(tape, batch);

  Var nll_sum;
  for (int k = 0; k < cfg.n_mc; ++k) {
    Mat eps(B, cfg.latent_dim);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    Var w = lat.mean;
    if (!opts.zero_latent_sigma) w = ad::add(lat.mean, ad::mul(lat.sigma, tape.constant(std::move(eps))));
    Var nll = gaussian_nll(tape, model.decode(tape, w), batch, opts.unit_output_variance);
    nll_sum = nll_sum.valid() ? ad::add(nll_sum, nll) : nll;
  }
  Var loss = ad::scale(nll_sum, 1.0 / cfg.n_mc);
  if (cfg.beta != 0.0) {
    // 0.5 * sum(sigma^2 + t^2 - 1 - log sigma^2), with log sigma^2 = logvar.
    Var kl = ad::scale(ad::sum(ad::sub(ad::add_scalar(ad::add(ad::exp(lat.logvar), ad::square(lat.mean)), -1.0),
                                       lat.logvar)),
                       0.5);
    loss = ad::add(loss, ad::scale(kl, cfg.beta));
  }
  return ad::scale(loss, 1.0 / static_cast<double>(B));
}

Var loss_deterministic(ad::Tape& tape, Model& model, const Batch& batch) {
  const ModelConfig& cfg = model.config();
  if (cfg.stochastic) throw ContractError("loss_deterministic: model is stochastic");
  require_targets(batch, cfg);
  const LatentVars lat = model.encode(tape, batch);
  Var nll = gaussian_nll(tape, model.decode(tape, lat.mean), batch, true);
  return ad::scale(nll, 1.0 / static_cast<double>(batch.size()));
}

Var loss_for(ad::Tape& tape, Model& model, const Batch& batch, Rng& rng) {
  return model.config().stochastic ? loss_ib(tape, model, batch, rng) : loss_deterministic(tape, model, batch);
}

double loss_ib(const sim::TmpSequence& x, const sim::EcgSequence& y, Model& model, Rng& rng, const LossOptions& opts) {
  ad::Tape tape(false);
  const sim::EcgSequence* ys[] = {&y};
  const sim::TmpSequence* xs[] = {&x};
  return loss_ib(tape, model, model.make_batch(ys, xs), rng, opts).item();
}

double loss_deterministic(const sim::TmpSequence& x, const sim::EcgSequence& y, Model& model) {
  ad::Tape tape(false);
  const sim::EcgSequence* ys[] = {&y};
  const sim::TmpSequence* xs[] = {&x};
  return loss_deterministic(tape, model, model.make_batch(ys, xs)).item();
}

}  // namespace vibrec::vib
