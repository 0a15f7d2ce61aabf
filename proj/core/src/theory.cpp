#include "vibrec/theory.hpp"

#include <cmath>
#include <numbers>

#include "vibrec/error.hpp"
#include "vibrec/eval.hpp"
#include "vibrec/rng.hpp"

namespace vibrec::theory {

namespace {

// Small chunks keep the gradient-free tape inside the cache.
constexpr int kDecodeChunk = 16;

double entropy_gaussian(double var) { return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * var); }

/// Loss ||x - g(w)||^2 for each row of `points`, decoded in chunks.
BatchLoss squared_error_loss(vib::Model& model, const Eigen::MatrixXd& x) {
  return [&model, x](const Eigen::MatrixXd& points) {
    Eigen::VectorXd out(points.rows());
    for (Eigen::Index start = 0; start < points.rows(); start += kDecodeChunk) {
      const Eigen::Index n = std::min<Eigen::Index>(kDecodeChunk, points.rows() - start);
      const auto g = vib::decode_means(points.middleRows(start, n), model);
      for (Eigen::Index i = 0; i < n; ++i) out(start + i) = (x - g[static_cast<std::size_t>(i)]).squaredNorm();
    }
    return out;
  };
}

}  // namespace

std::string to_string(ErrorFn fn) { return fn == ErrorFn::Mse ? "mse" : "1-at_corr"; }

double case_error(ErrorFn fn, const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat, bool* undefined) {
  if (undefined) *undefined = false;
  if (fn == ErrorFn::Mse) return metrics::mse(x, x_hat);
  try {
    return 1.0 - metrics::at_corr(x, x_hat);
  } catch (const DomainError&) {
    if (undefined) *undefined = true;
    return 1.0;
  }
}

std::vector<double> case_errors(ErrorFn fn, std::span<const data::Case* const> cases, vib::Model& model,
                                int* undefined) {
  std::vector<const sim::EcgSequence*> ys;
  for (const auto* c : cases) ys.push_back(&c->y);
  const auto recon = vib::reconstruct_batch(ys, model);
  std::vector<double> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    bool undef = false;
    out.push_back(case_error(fn, cases[i]->x.values, recon[i].values, &undef));
    if (undef && undefined) ++*undefined;
  }
  return out;
}

GapReport gap_from_errors(ErrorFn fn, std::span<const double> val_errors, std::span<const double> shifted_errors) {
  if (val_errors.empty() || shifted_errors.empty()) throw ConfigError("generalization_gap: empty split");
  GapReport r;
  r.error_fn = to_string(fn);
  for (double e : val_errors) r.val_error += e;
  for (double e : shifted_errors) r.shifted_error += e;
  r.val_error /= static_cast<double>(val_errors.size());
  r.shifted_error /= static_cast<double>(shifted_errors.size());
  r.gap = r.shifted_error - r.val_error;
  r.n_val = static_cast<int>(val_errors.size());
  r.n_shifted = static_cast<int>(shifted_errors.size());
  return r;
}

GapReport generalization_gap(vib::Model& model, std::span<const data::Case* const> val,
                             std::span<const data::Case* const> shifted, ErrorFn fn) {
  if (val.empty() || shifted.empty()) throw ConfigError("generalization_gap: empty split");
  int undefined = 0;
  const auto ve = case_errors(fn, val, model, &undefined);
  const auto se = case_errors(fn, shifted, model, &undefined);
  GapReport r = gap_from_errors(fn, ve, se);
  r.n_undefined = undefined;
  return r;
}

FdDerivatives fd_derivatives(const BatchLoss& loss, const Eigen::VectorXd& t, double h) {
  if (!(h > 0.0)) throw ConfigError("fd_derivatives: h must be > 0");
  const Eigen::Index d = t.size();
  const Eigen::Index n_pairs = d * (d - 1) / 2;
  Eigen::MatrixXd pts(1 + 2 * d + 4 * n_pairs, d);
  pts.rowwise() = t.transpose();
  Eigen::Index row = 1;
  for (Eigen::Index k = 0; k < d; ++k) {
    pts(row++, k) += h;
    pts(row++, k) -= h;
  }
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index l = k + 1; l < d; ++l) {
      for (const auto& [sk, sl] : {std::pair{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}) {
        pts(row, k) += sk * h;
        pts(row, l) += sl * h;
        ++row;
      }
    }
  }
  const Eigen::VectorXd f = loss(pts);
  if (f.size() != pts.rows()) throw ShapeError("fd_derivatives: loss returned the wrong number of values");

  FdDerivatives out;
  out.value = f(0);
  out.grad.resize(d);
  out.hess.resize(d, d);
  row = 1;
  for (Eigen::Index k = 0; k < d; ++k, row += 2) {
    out.grad(k) = (f(row) - f(row + 1)) / (2.0 * h);
    out.hess(k, k) = (f(row) - 2.0 * f(0) + f(row + 1)) / (h * h);
  }
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index l = k + 1; l < d; ++l, row += 4) {
      const double v = (f(row) - f(row + 1) - f(row + 2) + f(row + 3)) / (4.0 * h * h);
      out.hess(k, l) = out.hess(l, k) = v;
    }
  }
  return out;
}

VariationReport variation_proxy(const VariationInput& in, double h) {
  if (in.probes.empty()) throw ConfigError("variation_proxy: no probes");
  if (in.losses.size() != in.probes.size()) throw ShapeError("variation_proxy: one loss per probe required");
  if (!in.sigmas.empty() && in.sigmas.size() != in.probes.size()) throw ShapeError("variation_proxy: sigma count");
  const Eigen::Index d = in.probes.front().size();

  Eigen::VectorXd marginal = in.marginal_sigma;
  if (marginal.size() == 0) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d), s2 = Eigen::VectorXd::Zero(d);
    for (std::size_t p = 0; p < in.probes.size(); ++p) {
      mean += in.probes[p];
      sq += in.probes[p].cwiseAbs2();
      if (!in.sigmas.empty()) s2 += in.sigmas[p].cwiseAbs2();
    }
    const double n = static_cast<double>(in.probes.size());
    mean /= n;
    marginal = ((sq / n - mean.cwiseAbs2()).cwiseMax(0.0) + s2 / n).cwiseSqrt();
  }
  if (marginal.size() != d) throw ShapeError("variation_proxy: marginal sigma length");

  VariationReport r;
  r.h = h;
  auto weighted = [](const FdDerivatives& fd, const Eigen::VectorXd& s, double& o1, double& o2) {
    o1 = (fd.grad.cwiseAbs().array() * s.array()).sum();
    const Eigen::MatrixXd w = fd.hess.cwiseAbs().array() * (s * s.transpose()).array();
    o2 = 0.5 * (w.sum() + w.diagonal().sum());  // upper triangle incl. diagonal
  };
  for (std::size_t p = 0; p < in.probes.size(); ++p) {
    if (in.probes[p].size() != d) throw ShapeError("variation_proxy: probes differ in dimension");
    const FdDerivatives fd = fd_derivatives(in.losses[p], in.probes[p], h);
    if (!fd.grad.allFinite() || !fd.hess.allFinite()) {
      ++r.n_excluded;
      continue;
    }
    double o1, o2;
    weighted(fd, Eigen::VectorXd::Ones(d), o1, o2);
    r.order1 += o1;
    r.order2 += o2;
    weighted(fd, in.sigmas.empty() ? Eigen::VectorXd::Zero(d) : in.sigmas[p], o1, o2);
    r.order1_sigma += o1;
    r.order2_sigma += o2;
    weighted(fd, marginal, o1, o2);
    r.order1_marginal += o1;
    r.order2_marginal += o2;
    ++r.n_probes;
  }
  if (r.n_probes > 0) {
    const double n = r.n_probes;
    r.order1 /= n;
    r.order2 /= n;
    r.order1_sigma /= n;
    r.order2_sigma /= n;
    r.order1_marginal /= n;
    r.order2_marginal /= n;
  }
  return r;
}

VariationReport variation_proxy(vib::Model& model, std::span<const data::Case* const> probe_cases, double h) {
  VariationInput in;
  for (const auto* c : probe_cases) {
    const vib::LatentGaussian lat = vib::encode(c->y, model);
    in.probes.push_back(lat.t);
    in.sigmas.push_back(lat.sigma_t);
    in.losses.push_back(squared_error_loss(model, c->x.values));
  }
  return variation_proxy(in, h);
}

TaylorReport taylor_probe(const BatchLoss& loss, const Eigen::VectorXd& t, const Eigen::VectorXd& sigma, int n_mc,
                          std::uint64_t seed, double h) {
  if (n_mc < 1) throw ConfigError("taylor_probe: n_mc must be >= 1");
  if (sigma.size() != t.size()) throw ShapeError("taylor_probe: sigma length");
  const Eigen::Index d = t.size();
  Rng rng(seed);
  Eigen::MatrixXd eps(n_mc, d);
  for (Eigen::Index i = 0; i < n_mc; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) eps(i, k) = rng.normal();
  }
  const Eigen::VectorXd m1 = eps.colwise().mean().transpose();
  const Eigen::MatrixXd m2 = eps.transpose() * eps / static_cast<double>(n_mc);

  const FdDerivatives fd = fd_derivatives(loss, t, h);
  if (!std::isfinite(fd.value) || !fd.grad.allFinite() || !fd.hess.allFinite()) {
    throw DomainError("taylor_probe: non-finite finite-difference estimate");
  }
  TaylorReport r;
  r.n_mc = n_mc;
  r.h = h;
  r.order0 = fd.value;
  r.order1 = sigma.cwiseProduct(m1).dot(fd.grad);
  r.order2 = 0.5 * ((sigma * sigma.transpose()).array() * m2.array() * fd.hess.array()).sum();

  Eigen::MatrixXd pts = (eps.array().rowwise() * sigma.transpose().array()).matrix();
  pts.rowwise() += t.transpose();
  r.mc_estimate = loss(pts).mean();
  r.residual = std::abs(r.mc_estimate - (r.order0 + r.order1 + r.order2));
  return r;
}

TaylorReport taylor_probe(vib::Model& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                          const Eigen::VectorXd& sigma, int n_mc, std::uint64_t seed, double h) {
  return taylor_probe(squared_error_loss(model, x), t, sigma, n_mc, seed, h);
}

void GaussianToy::validate() const {
  if (!(var_x > 0.0 && noise_var > 0.0 && enc_noise_var > 0.0)) {
    throw ConfigError("GaussianToy: variances must be > 0");
  }
  if (!std::isfinite(gain)) throw ConfigError("GaussianToy: gain must be finite");
}

GaussianIbResult gaussian_ib_oracle(const GaussianToy& toy, double beta) {
  toy.validate();
  const double a2 = toy.gain * toy.gain;
  const double var_y = toy.var_x + toy.noise_var;
  const double var_w = a2 * var_y + toy.enc_noise_var;
  const double var_w_given_x = a2 * toy.noise_var + toy.enc_noise_var;
  const double var_x_given_w = toy.var_x - a2 * toy.var_x * toy.var_x / var_w;

  GaussianIbResult r;
  r.I_wy = 0.5 * std::log1p(a2 * var_y / toy.enc_noise_var);
  r.I_xw = 0.5 * std::log(var_w / var_w_given_x);
  r.loss_ib_exact = -r.I_xw + beta * r.I_wy;
  r.H_x = entropy_gaussian(toy.var_x);
  r.H_x_given_w = entropy_gaussian(var_x_given_w);
  const double kl_std_prior =
      0.5 * (toy.enc_noise_var + a2 * var_y - 1.0 - std::log(toy.enc_noise_var));
  r.L_IB_exact = r.H_x_given_w + beta * kl_std_prior;
  r.L_IB_marginal_prior = r.H_x_given_w + beta * r.I_wy;
  return r;
}

McEstimate gaussian_ib_monte_carlo(const GaussianToy& toy, double beta, int n, std::uint64_t seed) {
  toy.validate();
  if (n < 2) throw ConfigError("gaussian_ib_monte_carlo: n must be >= 2");
  const double a = toy.gain;
  const double var_w = a * a * (toy.var_x + toy.noise_var) + toy.enc_noise_var;
  const double var_x_given_w = toy.var_x - a * a * toy.var_x * toy.var_x / var_w;
  const double post_gain = a * toy.var_x / var_w;
  Rng rng(seed);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = std::sqrt(toy.var_x) * rng.normal();
    const double y = x + std::sqrt(toy.noise_var) * rng.normal();
    const double w = a * y + std::sqrt(toy.enc_noise_var) * rng.normal();
    const double r = x - post_gain * w;
    const double nll = 0.5 * std::log(2.0 * std::numbers::pi * var_x_given_w) + 0.5 * r * r / var_x_given_w;
    const double kl = 0.5 * (toy.enc_noise_var + a * a * y * y - 1.0 - std::log(toy.enc_noise_var));
    const double v = nll + beta * kl;
    sum += v;
    sq += v * v;
  }
  McEstimate out;
  out.mean = sum / n;
  const double var = (sq - n * out.mean * out.mean) / (n - 1);
  out.stderr_ = std::sqrt(std::max(var, 0.0) / n);
  return out;
}

std::vector<SweepPoint> gaussian_ib_sweep(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SweepPoint> out;
  for (int i = 0; i < n; ++i) {
    SweepPoint p;
    p.toy.var_x = rng.uniform(0.5, 2.0);
    p.toy.noise_var = std::exp(rng.uniform(std::log(0.01), std::log(4.0)));
    p.toy.gain = rng.uniform(0.01, 3.0);
    p.toy.enc_noise_var = std::exp(rng.uniform(std::log(0.01), std::log(4.0)));
    p.beta = std::exp(rng.uniform(std::log(0.01), std::log(100.0)));
    p.result = gaussian_ib_oracle(p.toy, p.beta);
    p.bound_holds = p.result.L_IB_exact >= p.result.loss_ib_exact;
    out.push_back(p);
  }
  return out;
}

Json to_json(const GapReport& r) {
  return Json{{"error_fn", r.error_fn}, {"val_error", r.val_error}, {"shifted_error", r.shifted_error},
              {"gap", r.gap},           {"n_val", r.n_val},         {"n_shifted", r.n_shifted},
              {"n_undefined", r.n_undefined}, {"note", r.note}};
}

Json to_json(const VariationReport& r) {
  return Json{{"order1", r.order1},
              {"order2", r.order2},
              {"order1_sigma_weighted", r.order1_sigma},
              {"order2_sigma_weighted", r.order2_sigma},
              {"order1_marginal_weighted", r.order1_marginal},
              {"order2_marginal_weighted", r.order2_marginal},
              {"n_probes", r.n_probes},
              {"n_excluded", r.n_excluded},
              {"h", r.h}};
}

Json to_json(const TaylorReport& r) {
  return Json{{"order0", r.order0},   {"order1", r.order1}, {"order2", r.order2}, {"mc_estimate", r.mc_estimate},
              {"residual", r.residual}, {"n_mc", r.n_mc},     {"h", r.h}};
}

}  // namespace vibrec::theory
