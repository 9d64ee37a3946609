#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "sphpr/kernels.hpp"
#include "sphpr/pr.hpp"

namespace sphpr {

/// Every objective evaluation made while maximizing over lambda.
struct MarginalLikelihoodCurve {
  std::vector<double> lambdas;
  std::vector<double> log_liks;
  double argmax = std::numeric_limits<double>::quiet_NaN();
  double argmax_log_lik = -std::numeric_limits<double>::infinity();
  /// The maximizer sits within tolerance of an end of the search range.
  bool boundary = false;
};

struct SearchConfig {
  /// Relative tolerance on lambda.
  double rel_tol = 1e-3;
  /// Maximum number of objective evaluations, scan included.
  int budget = 40;
  /// Log-spaced points evaluated (endpoints included) before golden-section
  /// refinement of the best bracket.
  int scan_points = 8;
};

/// Derivative-free bounded maximization of a scalar function. The search
/// runs in log(lambda) when the range is strictly positive, otherwise on
/// the raw scale. The returned argmax is the best point evaluated.
template <typename F>
MarginalLikelihoodCurve golden_section_maximize(F&& objective, ParamRange range, const SearchConfig& cfg = {}) {
  if (!(range.lo < range.hi)) {
    if (range.lo == range.hi) {
      MarginalLikelihoodCurve c;
      c.lambdas = {range.lo};
      c.log_liks = {objective(range.lo)};
      c.argmax = range.lo;
      c.argmax_log_lik = c.log_liks[0];
      c.boundary = true;
      return c;
    }
    throw std::invalid_argument("golden_section_maximize: empty range");
  }
  if (cfg.budget < 3 || cfg.scan_points < 3 || cfg.scan_points > cfg.budget) {
    throw std::invalid_argument("golden_section_maximize: budget must cover the initial scan");
  }
  const bool log_scale = range.lo > 0.0;
  const auto to_u = [&](double l) { return log_scale ? std::log(l) : l; };
  const auto from_u = [&](double u) { return log_scale ? std::exp(u) : u; };
  const double u_lo = to_u(range.lo), u_hi = to_u(range.hi);
  const double u_tol = log_scale ? std::log1p(cfg.rel_tol) : cfg.rel_tol * std::max(std::abs(range.hi), 1.0);

  MarginalLikelihoodCurve curve;
  const auto eval = [&](double u) {
    const double lambda = std::clamp(from_u(u), range.lo, range.hi);
    const double v = objective(lambda);
    curve.lambdas.push_back(lambda);
    curve.log_liks.push_back(v);
    if (v > curve.argmax_log_lik || std::isnan(curve.argmax)) {
      curve.argmax = lambda;
      curve.argmax_log_lik = v;
    }
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  };

  const int ns = cfg.scan_points;
  std::vector<double> us(ns), vs(ns);
  for (int i = 0; i < ns; ++i) {
    us[i] = u_lo + (u_hi - u_lo) * static_cast<double>(i) / static_cast<double>(ns - 1);
    vs[i] = eval(us[i]);
  }
  const int best = static_cast<int>(std::max_element(vs.begin(), vs.end()) - vs.begin());
  double a = us[std::max(best - 1, 0)];
  double b = us[std::min(best + 1, ns - 1)];

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  int used = ns;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = -std::numeric_limits<double>::infinity(), fd = fc;
  if (used < cfg.budget) { fc = eval(c); ++used; }
  if (used < cfg.budget) { fd = eval(d); ++used; }
  while (b - a > u_tol && used < cfg.budget) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(d);
    }
    ++used;
  }

  const double u_best = to_u(curve.argmax);
  curve.boundary = (u_best - u_lo) <= u_tol || (u_hi - u_best) <= u_tol;
  return curve;
}

/// log L_n^M(lambda): the log of the product of PR predictive densities
/// f_{i-1,lambda}(Y_i), averaged over n_perms seeded orderings.
inline double pr_marginal_loglik(std::span<const UnitVector> data, const KernelSpec& spec,
                                 const MixingDensityGrid& psi0, const WeightSchedule& schedule,
                                 std::size_t n_perms, std::uint64_t seed, unsigned threads = 1) {
  if (!spec.range().contains(spec.lambda())) {
    throw std::invalid_argument("pr_marginal_loglik: lambda outside its admissible range");
  }
  return permutation_average(data, spec, psi0, schedule, n_perms, seed, threads).log_marginal;
}

struct MarginalConfig {
  SearchConfig search;
  std::size_t n_perms = 1;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// Maximizes the PR marginal likelihood over spec.range(). The same seed is
/// used at every lambda so the objective is a deterministic function.
inline MarginalLikelihoodCurve maximize_marginal(std::span<const UnitVector> data, const KernelSpec& spec,
                                                 const MixingDensityGrid& psi0, const WeightSchedule& schedule,
                                                 const MarginalConfig& cfg = {}) {
  return golden_section_maximize(
      [&](double lambda) {
        return pr_marginal_loglik(data, spec.with_lambda(lambda), psi0, schedule, cfg.n_perms, cfg.seed,
                                  cfg.threads);
      },
      spec.range(), cfg.search);
}

}  // namespace sphpr
