#pragma once

// Diagnostics that make the learning-theory argument measurable: the
// generalisation gap, finite-difference variation proxies of the loss as a
// function of the latent code, a Taylor decomposition of the expected
// loss under latent noise, and a linear-Gaussian testbed where every term
// of the bottleneck objective and its bound is closed-form.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vibrec/dataset.hpp"
#include "vibrec/json_io.hpp"
#include "vibrec/vib.hpp"

namespace vibrec::theory {

inline constexpr double kDefaultFdStep = 1e-3;

enum class ErrorFn { Mse, OneMinusAtCorr };
std::string to_string(ErrorFn fn);

struct GapReport {
  std::string error_fn;
  double val_error = 0.0;
  double shifted_error = 0.0;
  double gap = 0.0;  // shifted_error - val_error
  int n_val = 0;
  int n_shifted = 0;
  /// Cases whose error was undefined (flat activation map) and scored as
  /// zero correlation.
  int n_undefined = 0;
  std::string note = "expected shifted-domain error approximated by a held-out shifted test set";
};

/// Per-case error of a reconstruction. `undefined` is set when the
/// correlation-based error had to fall back to 1.
double case_error(ErrorFn fn, const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat, bool* undefined = nullptr);
std::vector<double> case_errors(ErrorFn fn, std::span<const data::Case* const> cases, vib::Model& model,
                                int* undefined = nullptr);
GapReport gap_from_errors(ErrorFn fn, std::span<const double> val_errors, std::span<const double> shifted_errors);
GapReport generalization_gap(vib::Model& model, std::span<const data::Case* const> val,
                             std::span<const data::Case* const> shifted, ErrorFn fn);

/// Loss evaluated at many latent points (rows) for one fixed target.
using BatchLoss = std::function<Eigen::VectorXd(const Eigen::MatrixXd& points)>;

struct FdDerivatives {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // symmetric
};
/// Central differences: gradient, diagonal and mixed second derivatives.
FdDerivatives fd_derivatives(const BatchLoss& loss, const Eigen::VectorXd& t, double h = kDefaultFdStep);

struct VariationReport {
  double order1 = 0.0;  // mean_p sum_k |dl/dt_k|
  double order2 = 0.0;  // mean_p (sum_{k<l} |d2l/dt_k dt_l| + sum_k |d2l/dt_k^2|)
  // Same magnitudes with every derivative scaled by the latent spread along
  // its axes: the probe's own sigma_t, and the marginal spread of the code
  // (sqrt(var_p t_k + mean_p sigma_k^2)).
  double order1_sigma = 0.0;
  double order2_sigma = 0.0;
  double order1_marginal = 0.0;
  double order2_marginal = 0.0;
  int n_probes = 0;
  int n_excluded = 0;
  double h = kDefaultFdStep;
};

struct VariationInput {
  std::vector<Eigen::VectorXd> probes;
  std::vector<BatchLoss> losses;           // one per probe
  std::vector<Eigen::VectorXd> sigmas;     // per probe; empty means zero
  Eigen::VectorXd marginal_sigma;          // empty means derived from probes and sigmas
};
VariationReport variation_proxy(const VariationInput& in, double h = kDefaultFdStep);

/// Probe latents are the encoder means of `probe_cases`; each is paired with
/// its own ground truth x in  l(t) = ||x - g(t)||_F^2.
VariationReport variation_proxy(vib::Model& model, std::span<const data::Case* const> probe_cases,
                                double h = kDefaultFdStep);

struct TaylorReport {
  double order0 = 0.0;
  double order1 = 0.0;
  double order2 = 0.0;
  double mc_estimate = 0.0;
  double residual = 0.0;  // |mc - (order0 + order1 + order2)|
  int n_mc = 0;
  double h = kDefaultFdStep;
};

/// Expected loss under w = t + sigma * eps, split into its first Taylor
/// terms with empirical moments of the same eps draws the Monte-Carlo
/// estimate uses.
TaylorReport taylor_probe(const BatchLoss& loss, const Eigen::VectorXd& t, const Eigen::VectorXd& sigma, int n_mc,
                          std::uint64_t seed, double h = kDefaultFdStep);
TaylorReport taylor_probe(vib::Model& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                          const Eigen::VectorXd& sigma, int n_mc, std::uint64_t seed, double h = kDefaultFdStep);

/// x ~ N(0, var_x), y = x + n, n ~ N(0, noise_var), w = gain * y + e, e ~ N(0, enc_noise_var).
struct GaussianToy {
  double var_x = 1.0;
  double noise_var = 1.0;
  double gain = 1.0;
  double enc_noise_var = 1.0;

  void validate() const;
};

struct GaussianIbResult {
  double I_xw = 0.0;
  double I_wy = 0.0;
  double loss_ib_exact = 0.0;  // -I_xw + beta * I_wy
  double H_x = 0.0;
  double H_x_given_w = 0.0;
  /// Posterior-mean decoder, standard normal latent prior.
  double L_IB_exact = 0.0;
  /// Posterior-mean decoder, prior equal to the true marginal of w.
  double L_IB_marginal_prior = 0.0;
};
GaussianIbResult gaussian_ib_oracle(const GaussianToy& toy, double beta);

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};
/// Sample estimate of L_IB_exact.
McEstimate gaussian_ib_monte_carlo(const GaussianToy& toy, double beta, int n, std::uint64_t seed);

struct SweepPoint {
  GaussianToy toy;
  double beta = 1.0;
  GaussianIbResult result;
  bool bound_holds = false;  // L_IB_exact >= loss_ib_exact
};
/// Random toys with var_x in [0.5, 2] so that H(x) >= 0, the condition
/// under which the reconstruction term bounds -I(x;w).
std::vector<SweepPoint> gaussian_ib_sweep(int n, std::uint64_t seed);

Json to_json(const GapReport& r);
Json to_json(const VariationReport& r);
Json to_json(const TaylorReport& r);

}  // namespace vibrec::theory
