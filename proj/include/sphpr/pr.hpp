#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphpr/kernels.hpp"
#include "sphpr/parallel.hpp"
#include "sphpr/sphere.hpp"

namespace sphpr {

/// w_i = (i + 1)^{-gamma} for i >= 1 and gamma in (1/2, 1].
inline double weight(std::size_t i, double gamma) {
  if (!(gamma > 0.5 && gamma <= 1.0)) {
    throw std::invalid_argument("weight: gamma must lie in (1/2, 1]");
  }
  if (i < 1) throw std::invalid_argument("weight: index starts at 1");
  return std::pow(static_cast<double>(i) + 1.0, -gamma);
}

class WeightSchedule {
 public:
  static constexpr double kDefaultGamma = 2.0 / 3.0;

  explicit WeightSchedule(double gamma = kDefaultGamma) : gamma_(gamma) { (void)weight(1, gamma); }

  double gamma() const { return gamma_; }
  double operator()(std::size_t i) const { return weight(i, gamma_); }

 private:
  double gamma_;
};

/// Cell counts of the mixing-support grid.
struct GridDims {
  std::size_t n_theta = 0;
  std::size_t n_phi = 0;
};

inline GridDims default_grid_dims(KernelFamily f) {
  return f == KernelFamily::VonMisesFisher ? GridDims{60, 120} : GridDims{30, 120};
}

/// Grid over the mixing support of the family: whole sphere for vMF,
/// upper hemisphere for Schladitz.
inline SphereGrid support_grid(KernelFamily f, GridDims dims) {
  return build_grid(KernelSpec::support_theta_max(f), dims.n_theta, dims.n_phi);
}
inline SphereGrid support_grid(KernelFamily f) { return support_grid(f, default_grid_dims(f)); }

struct PREstimate {
  MixingDensityGrid psi;
  KernelSpec kernel;
  /// sum_i log f_{i-1}(Y_i), averaged over permutations.
  double log_marginal = 0.0;
  std::size_t n = 0;
  std::size_t permutations = 1;
  /// log f_{i-1}(Y_i) indexed by the observation's position in the input,
  /// averaged over permutations.
  std::vector<double> predictive_log_densities;
};

namespace detail {
struct NoObserver {
  void operator()(std::size_t, std::span<const double>) const {}
};
}  // namespace detail

/// One predictive-recursion pass over data[order[0]], data[order[1]], ...
/// The observer is called after every update with (step, psi_step).
template <typename Observer = detail::NoObserver>
PREstimate pr_sweep_ordered(std::span<const UnitVector> data, std::span<const std::size_t> order,
                            const KernelSpec& spec, const MixingDensityGrid& psi0,
                            const WeightSchedule& schedule, Observer&& observer = {}) {
  if (order.size() != data.size()) throw std::invalid_argument("pr_sweep: order/data size mismatch");
  const SphereGrid& grid = psi0.grid();
  const std::size_t m = grid.size();
  const auto w = grid.weights();
  const KernelEvaluator kernel(spec);

  const auto n_nodes = static_cast<Eigen::Index>(m);
  Eigen::ArrayXd psi = Eigen::Map<const Eigen::ArrayXd>(psi0.values().data(), n_nodes);
  const Eigen::ArrayXd wv = Eigen::Map<const Eigen::ArrayXd>(w.data(), n_nodes);
  Eigen::ArrayXd row(n_nodes);
  const std::span<double> row_span(row.data(), m);
  std::vector<double> pred(data.size(), 0.0);
  double log_marginal = 0.0;

  for (std::size_t step = 0; step < order.size(); ++step) {
    const std::size_t idx = order[step];
    kernel.row(data[idx], grid, row_span);
    const double f = (row * psi * wv).sum();
    if (!(f > 0.0) || !std::isfinite(f)) {
      throw NumericalError("pr_sweep: predictive density f_{i-1}(Y_i) is " + std::to_string(f) +
                           " at step " + std::to_string(step + 1) + " (observation index " +
                           std::to_string(idx) + ")");
    }
    const double wi = schedule(step + 1);
    const double gain = wi / f;
    psi *= (1.0 - wi) + gain * row;
    psi /= (psi * wv).sum();

    pred[idx] = std::log(f);
    log_marginal += pred[idx];
    observer(step + 1, std::span<const double>(psi.data(), m));
  }

  return PREstimate{MixingDensityGrid(grid, std::vector<double>(psi.begin(), psi.end())), spec, log_marginal, data.size(), 1,
                    std::move(pred)};
}

/// Predictive recursion over the data in the given order.
template <typename Observer = detail::NoObserver>
PREstimate pr_sweep(std::span<const UnitVector> data, const KernelSpec& spec,
                    const MixingDensityGrid& psi0, const WeightSchedule& schedule,
                    Observer&& observer = {}) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return pr_sweep_ordered(data, order, spec, psi0, schedule, std::forward<Observer>(observer));
}

/// Processing order of permutation k: identity for k = 0, otherwise a
/// uniform shuffle seeded from (seed, k).
inline std::vector<std::size_t> permutation_order(std::size_t n, std::uint64_t seed, std::size_t k) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (k == 0) return order;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Pointwise mean of PR estimates over n_perms orderings of the data.
/// Permutations may run on several threads; averaging is in index order.
inline PREstimate permutation_average(std::span<const UnitVector> data, const KernelSpec& spec,
                                      const MixingDensityGrid& psi0, const WeightSchedule& schedule,
                                      std::size_t n_perms, std::uint64_t seed, unsigned threads = 1) {
  if (n_perms < 1) throw std::invalid_argument("permutation_average: n_perms must be >= 1");
  if (n_perms == 1) return pr_sweep(data, spec, psi0, schedule);

  std::vector<std::vector<double>> psis(n_perms);
  std::vector<std::vector<double>> preds(n_perms);
  std::vector<double> log_marginals(n_perms);
  parallel_for(n_perms, threads, [&](std::size_t k) {
    const auto order = permutation_order(data.size(), seed, k);
    PREstimate est = pr_sweep_ordered(data, order, spec, psi0, schedule);
    psis[k].assign(est.psi.values().begin(), est.psi.values().end());
    preds[k] = std::move(est.predictive_log_densities);
    log_marginals[k] = est.log_marginal;
  });

  const std::size_t m = psi0.grid().size();
  std::vector<double> mean(m, 0.0);
  std::vector<double> pred(data.size(), 0.0);
  double log_marginal = 0.0;
  const double scale = 1.0 / static_cast<double>(n_perms);
  for (std::size_t k = 0; k < n_perms; ++k) {
    for (std::size_t j = 0; j < m; ++j) mean[j] += psis[k][j];
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += preds[k][i];
    log_marginal += log_marginals[k];
  }
  for (double& v : mean) v *= scale;
  for (double& v : pred) v *= scale;
  return PREstimate{MixingDensityGrid::normalized(psi0.grid(), std::move(mean)), spec,
                    log_marginal * scale, data.size(), n_perms, std::move(pred)};
}

/// f(y) = integral of k(y | x) psi(x) over the grid.
inline double mixture_density(const MixingDensityGrid& psi, const KernelSpec& spec, const UnitVector& y) {
  const SphereGrid& grid = psi.grid();
  const KernelEvaluator kernel(spec);
  const auto gx = grid.x(), gy = grid.y(), gz = grid.z(), w = grid.weights();
  const auto v = psi.values();
  double f = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    f += kernel(gx[j] * y.x1() + gy[j] * y.x2() + gz[j] * y.x3()) * v[j] * w[j];
  }
  return f;
}

/// Mixture density evaluated at every node of `at`.
inline std::vector<double> mixture_density_on(const MixingDensityGrid& psi, const KernelSpec& spec,
                                              const SphereGrid& at, unsigned threads = 1) {
  const SphereGrid& grid = psi.grid();
  const KernelEvaluator kernel(spec);
  std::vector<double> mass(grid.size());
  for (std::size_t j = 0; j < mass.size(); ++j) mass[j] = psi[j] * grid.weights()[j];
  std::vector<double> out(at.size());
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(threads, at.size()));
  parallel_for(chunks, threads, [&](std::size_t c) {
    Eigen::ArrayXd row(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = c; i < at.size(); i += chunks) {
      kernel.row(at.node(i), grid, std::span<double>(row.data(), grid.size()));
      double f = 0.0;
      for (std::size_t j = 0; j < grid.size(); ++j) f += row[j] * mass[j];
      out[i] = f;
    }
  });
  return out;
}

}  // namespace sphpr
