#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sphpr/kernels.hpp"
#include "sphpr/pr.hpp"
#include "sphpr/sphere.hpp"
#include "sphpr/structural_likelihood.hpp"

namespace sphpr {

struct GammaPrior {
  double shape = 2.0;
  double scale = 0.5;

  GammaPrior() = default;
  GammaPrior(double shape_in, double scale_in) : shape(shape_in), scale(scale_in) {
    if (!(shape > 0.0) || !(scale > 0.0)) {
      throw std::invalid_argument("GammaPrior: shape and scale must be positive");
    }
  }

  double log_pdf(double x) const {
    if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
    return (shape - 1.0) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale);
  }
};

enum class Verdict { FavorsH0, FavorsH1 };

inline std::string to_string(Verdict v) { return v == Verdict::FavorsH0 ? "FavorsH0" : "FavorsH1"; }

struct BayesFactorReport {
  KernelFamily family = KernelFamily::VonMisesFisher;
  double log10_bf = 0.0;
  double lambda_hat_h0 = 0.0;
  double lambda_hat_h1 = 0.0;
  double log_m0 = 0.0;
  double log_m1 = 0.0;
  /// Second derivatives of -log L at lambda_hat_h0 and lambda_hat_h1.
  double second_deriv_h0 = 0.0;
  double second_deriv_h1 = 0.0;
  bool boundary_h0 = false;
  bool boundary_h1 = false;
  Verdict verdict = Verdict::FavorsH0;
};

/// log L^{M,0}(lambda) = log[(4 pi)^{-1} int prod_i k(y_i | x) dsigma(x)],
/// evaluated by log-sum-exp over the nodes of a full-sphere grid.
inline double h0_marginal_loglik(std::span<const UnitVector> data, const KernelSpec& spec, const SphereGrid& grid) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(m);
  const Eigen::Map<const Eigen::ArrayXd> gx(grid.x().data(), m), gy(grid.y().data(), m), gz(grid.z().data(), m);
  const double n = static_cast<double>(data.size());
  if (spec.family() == KernelFamily::VonMisesFisher) {
    // sum_i log k(y_i | x) = n log C(kappa) + kappa x'(sum_i y_i)
    Eigen::Vector3d s = Eigen::Vector3d::Zero();
    for (const auto& y : data) s += y.vec();
    const double kappa = spec.lambda();
    acc = n * vmf_log_normalizer(kappa) + (kappa < detail::kSmallKappa ? 0.0 : kappa) * (gx * s[0] + gy * s[1] + gz * s[2]);
  } else {
    const double beta = spec.lambda();
    const double shrink = 1.0 - beta * beta;
    Eigen::ArrayXd t(m);
    for (const auto& y : data) {
      t = gx * y.x1() + gy * y.x2() + gz * y.x3();
      acc -= 1.5 * (1.0 - shrink * t.square()).log();
    }
    acc += n * std::log(beta / kFourPi);
  }
  const Eigen::Map<const Eigen::ArrayXd> w(grid.weights().data(), m);
  acc += w.log();
  const double top = acc.maxCoeff();
  if (!std::isfinite(top)) {
    throw NumericalError("h0_marginal_loglik: integrand underflows at every node; use a finer grid");
  }
  return top + std::log((acc - top).exp().sum()) - std::log(kFourPi);
}

/// Richardson-extrapolated central second difference,
/// (4 D(h0/2) - D(h0)) / 3 with D(h) = (f(x+h) - 2 f(x) + f(x-h)) / h^2.
template <typename F>
double richardson_second_derivative(F&& f, double x, double h0) {
  if (!(h0 > 0.0)) throw std::invalid_argument("richardson_second_derivative: step must be positive");
  const double fx = f(x);
  const auto diff = [&](double h) {
    const double up = f(x + h), down = f(x - h);
    if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(fx)) {
      throw NumericalError("richardson_second_derivative: non-finite function value near x = " + std::to_string(x));
    }
    return (up - 2.0 * fx + down) / (h * h);
  };
  const double coarse = diff(h0);
  const double fine = diff(h0 / 2.0);
  return (4.0 * fine - coarse) / 3.0;
}

/// Scalar Laplace approximation of log int L(lambda) g(lambda) dlambda:
/// log g + log L at the maximizer + 0.5 log(2 pi) - 0.5 log(curvature),
/// where curvature is (-log L)'' at the maximizer.
inline double laplace_log_marginal(double log_lik_at_hat, const GammaPrior& prior, double lambda_hat,
                                   double curvature) {
  if (!(curvature > 0.0) || !std::isfinite(curvature)) {
    throw NumericalError("laplace_log_marginal: no interior maximum (curvature " + std::to_string(curvature) + ")");
  }
  return prior.log_pdf(lambda_hat) + log_lik_at_hat + 0.5 * std::log(kTwoPi) - 0.5 * std::log(curvature);
}

template <typename F>
  requires std::invocable<F, double>
double laplace_log_marginal(F&& log_lik, const GammaPrior& prior, double lambda_hat, double curvature) {
  return laplace_log_marginal(log_lik(lambda_hat), prior, lambda_hat, curvature);
}

/// Variant with a flat unit prior, used where only the likelihood shape matters.
inline double laplace_log_marginal_flat(double log_lik_at_hat, double curvature) {
  if (!(curvature > 0.0) || !std::isfinite(curvature)) {
    throw NumericalError("laplace_log_marginal: no interior maximum");
  }
  return log_lik_at_hat + 0.5 * std::log(kTwoPi) - 0.5 * std::log(curvature);
}

inline double richardson_step(double lambda_hat) { return std::max(1e-2 * std::abs(lambda_hat), 1e-3); }

struct GofConfig {
  ParamRange range{};  // lo == hi == 0 selects the family default
  GridDims pr_grid{};  // zero selects the family default
  GridDims h0_grid{180, 360};
  std::size_t n_perms = 25;
  std::uint64_t seed = 1;
  double gamma = WeightSchedule::kDefaultGamma;
  SearchConfig search{};
  unsigned threads = 1;
};

/// Bayes factor m0 / m1 for a single kernel (H0) against a PR mixture of
/// kernels (H1), both integrated over lambda by Laplace approximation.
inline BayesFactorReport bayes_factor(std::span<const UnitVector> data, KernelFamily family,
                                      const GammaPrior& prior, const GofConfig& cfg = {}) {
  if (data.empty()) throw std::invalid_argument("bayes_factor: data must be nonempty");
  const ParamRange range = (cfg.range.lo == 0.0 && cfg.range.hi == 0.0) ? default_range(family) : cfg.range;
  const GridDims dims = cfg.pr_grid.n_theta == 0 ? default_grid_dims(family) : cfg.pr_grid;
  const SphereGrid support = support_grid(family, dims);
  const MixingDensityGrid psi0 = MixingDensityGrid::uniform(support);
  const WeightSchedule schedule(cfg.gamma);
  const SphereGrid h0_grid = build_grid(kPi, cfg.h0_grid.n_theta, cfg.h0_grid.n_phi);

  // Derivative probes may step slightly outside the search range.
  const auto probe_range = [&](double hat) {
    const double h = richardson_step(hat);
    return ParamRange{std::min(range.lo, hat - 1.5 * h), std::max(range.hi, hat + 1.5 * h)};
  };

  const auto log_l0 = [&](double lambda) { return h0_marginal_loglik(data, KernelSpec(family, lambda), h0_grid); };
  const auto log_l1_in = [&](ParamRange r) {
    return [&, r](double lambda) {
      return pr_marginal_loglik(data, KernelSpec(family, lambda, r), psi0, schedule, cfg.n_perms, cfg.seed,
                                cfg.threads);
    };
  };

  BayesFactorReport rep;
  rep.family = family;

  const auto curve0 = golden_section_maximize(log_l0, range, cfg.search);
  rep.lambda_hat_h0 = curve0.argmax;
  rep.boundary_h0 = curve0.boundary;
  rep.second_deriv_h0 = -richardson_second_derivative(log_l0, curve0.argmax, richardson_step(curve0.argmax));
  rep.log_m0 = laplace_log_marginal(curve0.argmax_log_lik, prior, curve0.argmax, rep.second_deriv_h0);

  const auto curve1 = golden_section_maximize(log_l1_in(range), range, cfg.search);
  rep.lambda_hat_h1 = curve1.argmax;
  rep.boundary_h1 = curve1.boundary;
  rep.second_deriv_h1 =
      -richardson_second_derivative(log_l1_in(probe_range(curve1.argmax)), curve1.argmax, richardson_step(curve1.argmax));
  rep.log_m1 = laplace_log_marginal(curve1.argmax_log_lik, prior, curve1.argmax, rep.second_deriv_h1);

  rep.log10_bf = (rep.log_m0 - rep.log_m1) / std::log(10.0);
  rep.verdict = rep.log10_bf >= 0.0 ? Verdict::FavorsH0 : Verdict::FavorsH1;
  return rep;
}

}  // namespace sphpr
