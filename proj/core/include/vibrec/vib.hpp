#pragma once

// Sequence encoder-decoder with a (optionally) stochastic latent code.
//
//   svs   : encoder LSTM -> concat of all hidden states -> 2 x FC(ReLU) -> heads
//           w -> 2 x FC(ReLU) -> T-step input sequence -> decoder LSTM -> heads
//   svs-L : encoder LSTM -> last hidden state -> heads
//           w -> initial (h, c) of the decoder LSTM, unrolled over a zero input
//
// Stochastic variants add log-variance heads on both sides; deterministic
// variants have no variance parameters at all.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vibrec/apsim.hpp"
#include "vibrec/rng.hpp"
#include "vibrec/tensor.hpp"

namespace vibrec::vib {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
/// Initial forget-gate bias of both svs-L LSTMs (svs uses +1).
inline constexpr double kLongMemoryForgetBias = 3.0;
inline constexpr int kCheckpointFormatVersion = 1;

enum class Arch { Svs, SvsL };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::Svs;
  bool stochastic = true;
  int latent_dim = 16;
  int enc_hidden = 64;
  int dec_hidden = 64;
  int fc_hidden = 128;
  int dec_step_input = 16;  // svs: width of each decoder input frame
  double beta = 1.0;        // ignored when deterministic
  int n_mc = 1;
  // The output log-variance head reads a detached copy of the decoder state:
  // the variance term then trains only its own head and cannot pull the
  // shared trunk away from fitting the mean. Off = exact loss gradient.
  bool detach_variance_head = true;
  int M = 0;
  int T = 0;
  int U = 0;

  void validate() const;
  /// "svs-stochastic", "svs-L-deterministic", ...
  std::string variant_name() const;
};

/// Parses "svs-stoch", "svs-l-det", "svs-L-stochastic", ... into arch/stochastic.
void apply_variant(ModelConfig& cfg, const std::string& variant);

struct LatentGaussian {
  Eigen::VectorXd t;
  Eigen::VectorXd sigma_t;
};

struct OutputGaussian {
  Eigen::MatrixXd g;         // U x T
  Eigen::MatrixXd sigma_x2;  // U x T
};

/// Per-lead input standardisation fitted on the training split.
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
};

/// Mini-batch in time-major layout.
struct Batch {
  std::vector<ad::Mat> inputs;   // T matrices, B x M (already standardised)
  std::vector<ad::Mat> targets;  // T matrices, B x U (may be empty)
  Eigen::Index size() const { return inputs.empty() ? 0 : inputs.front().rows(); }
};

/// Tape-level encoder output. `logvar` and `sigma` are invalid for
/// deterministic models.
struct LatentVars {
  ad::Var mean;
  ad::Var logvar;
  ad::Var sigma;
};

/// Tape-level decoder output, one B x U node per frame. `logvar` is empty
/// for deterministic models (unit variance).
struct OutputVars {
  std::vector<ad::Var> mean;
  std::vector<ad::Var> logvar;
};

/// Testing hooks that force the reduction of the stochastic objective to
/// the deterministic one.
struct LossOptions {
  bool zero_latent_sigma = false;
  bool unit_output_variance = false;
};

class Model {
 public:
  /// Registers all parameters and draws their initial values from `init_seed`.
  Model(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const Normalizer& normalizer() const { return norm_; }
  void set_normalizer(Normalizer n);

  /// Parameter indices of the encoder (theta_1) and decoder (theta_2).
  std::vector<std::size_t> encoder_params() const;
  std::vector<std::size_t> decoder_params() const;

  Batch make_batch(std::span<const sim::EcgSequence* const> ys,
                   std::span<const sim::TmpSequence* const> xs = {}) const;

  LatentVars encode(ad::Tape& tape, const Batch& batch);
  /// `with_variance = false` skips the output log-variance head.
  OutputVars decode(ad::Tape& tape, ad::Var w, bool with_variance = true);

  /// Copies every parameter whose name also exists in `other`.
  void copy_shared_params(const Model& other);

  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);

 private:
  ModelConfig cfg_;
  ad::ParamStore params_;
  Normalizer norm_;
  ad::Lstm enc_lstm_;
  ad::Dense enc_fc1_, enc_fc2_, enc_mean_, enc_logvar_;
  ad::Dense dec_fc1_, dec_fc2_, dec_init_h_, dec_init_c_, dec_mean_, dec_logvar_;
  ad::Lstm dec_lstm_;
};

// ---- single-sequence operations -------------------------------------------

LatentGaussian encode(const sim::EcgSequence& y, Model& model);
/// w = t + sigma_t * eps.
Eigen::VectorXd sample_latent(const LatentGaussian& lat, const Eigen::VectorXd& eps);
OutputGaussian decode(const Eigen::VectorXd& w, Model& model);
/// Decoder means for many latent points at once (rows of `w`).
std::vector<Eigen::MatrixXd> decode_means(const Eigen::MatrixXd& w, Model& model);

/// sum_i 0.5 (sigma_i^2 + t_i^2 - 1 - ln sigma_i^2). ContractError if any sigma is 0.
double kl_to_standard_normal(const LatentGaussian& lat);
/// sum over entries of (x - g)^2 / sigma_x2 + ln sigma_x2.
double nll_term(const sim::TmpSequence& x, const OutputGaussian& out);

/// Mean-latent, mean-output reconstruction (no sampling).
sim::TmpSequence reconstruct(const sim::EcgSequence& y, Model& model);
std::vector<sim::TmpSequence> reconstruct_batch(std::span<const sim::EcgSequence* const> ys, Model& model);

// ---- objectives ------------------------------------------------------------

/// Batch mean of  (1/n_mc) sum_k nll(x, decode(t + sigma * eps_k)) + beta * KL.
ad::Var loss_ib(ad::Tape& tape, Model& model, const Batch& batch, Rng& rng, const LossOptions& opts = {});
/// Batch mean of ||x - g(t)||_F^2.
ad::Var loss_deterministic(ad::Tape& tape, Model& model, const Batch& batch);
/// The variant's own objective (loss_ib or loss_deterministic).
ad::Var loss_for(ad::Tape& tape, Model& model, const Batch& batch, Rng& rng);

double loss_ib(const sim::TmpSequence& x, const sim::EcgSequence& y, Model& model, Rng& rng,
               const LossOptions& opts = {});
double loss_deterministic(const sim::TmpSequence& x, const sim::EcgSequence& y, Model& model);

}  // namespace vibrec::vib
