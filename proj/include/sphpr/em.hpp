#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "sphpr/kernels.hpp"
#include "sphpr/parallel.hpp"
#include "sphpr/sphere.hpp"

namespace sphpr {

struct FiniteMixture {
  KernelFamily family = KernelFamily::VonMisesFisher;
  std::vector<UnitVector> mus;
  std::vector<double> weights;
  /// Shared structural parameter.
  double lambda = 0.0;
  double log_lik = -std::numeric_limits<double>::infinity();
  double bic = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
  /// Observed-data log-likelihood after initialization and after every M-step.
  std::vector<double> log_lik_trace;
  std::vector<std::string> warnings;

  std::size_t components() const { return mus.size(); }
  KernelSpec kernel() const { return KernelSpec(family, lambda, ParamRange{lambda, lambda}); }
};

struct EmConfig {
  std::size_t max_iter = 500;
  /// Stop once an iteration raises the log-likelihood by less than this.
  double tol = 1e-8;
  ParamRange range{};  // lo == hi == 0 selects the family default
  /// Components whose responsibility mass drops below this are removed.
  double prune_mass = 1e-8;
};

inline double bic_value(double log_lik, std::size_t components, std::size_t n) {
  return -2.0 * log_lik + 3.0 * static_cast<double>(components) * std::log(static_cast<double>(n));
}

/// Schladitz axes are identified with their antipodes; report the
/// representative in the upper hemisphere.
inline UnitVector canonical_axis(const UnitVector& mu) { return mu.x3() < 0.0 ? -mu : mu; }

/// Inverse of A(kappa) = coth(kappa) - 1/kappa on the given range.
inline double vmf_inverse_a(double rbar, ParamRange range) {
  const auto a = [](double k) { return k < 1e-4 ? k / 3.0 : 1.0 / std::tanh(k) - 1.0 / k; };
  if (!(rbar > a(range.lo))) return range.lo;
  if (!(rbar < a(range.hi))) return range.hi;
  double lo = range.lo, hi = range.hi;
  double k = std::clamp(rbar * (3.0 - rbar * rbar) / (1.0 - rbar * rbar), lo, hi);
  for (int it = 0; it < 100; ++it) {
    const double g = a(k) - rbar;
    if (g > 0.0) hi = k; else lo = k;
    const double s = std::sinh(k);
    const double deriv = 1.0 / (k * k) - (std::isfinite(s) ? 1.0 / (s * s) : 0.0);
    double next = k - g / deriv;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - k) <= 1e-14 * k) return next;
    k = next;
  }
  return k;
}

namespace detail {

inline double log_kernel_from_cos(KernelFamily f, double lambda, double t) {
  if (f == KernelFamily::VonMisesFisher) {
    return lambda < kSmallKappa ? -std::log(kFourPi) : vmf_log_normalizer(lambda) + lambda * t;
  }
  return std::log(lambda / kFourPi) - 1.5 * std::log(schladitz_quadratic_form(t, lambda));
}

/// n x 3 matrix with one observation per row.
inline Eigen::MatrixXd data_matrix(std::span<const UnitVector> data) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(data.size()), 3);
  for (std::size_t i = 0; i < data.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = data[i].vec().transpose();
  return y;
}

inline Eigen::MatrixXd mean_matrix(const FiniteMixture& m) {
  Eigen::MatrixXd mu(3, static_cast<Eigen::Index>(m.components()));
  for (std::size_t j = 0; j < m.components(); ++j) mu.col(static_cast<Eigen::Index>(j)) = m.mus[j].vec();
  return mu;
}

/// Buffers reused across EM iterations.
struct Workspace {
  Eigen::MatrixXd y;  // n x 3
  Eigen::MatrixXd r;  // responsibilities, n x J
  Eigen::ArrayXXd t;  // cosines mu_j'y_i, later their squares
  Eigen::ArrayXXd q;  // Schladitz quadratic forms
  Eigen::ArrayXd s, top;
};

inline void cosines(Workspace& ws, const FiniteMixture& m) {
  ws.t.resize(ws.y.rows(), static_cast<Eigen::Index>(m.components()));
  ws.t.matrix().noalias() = ws.y * mean_matrix(m);
}

/// Fills ws.r with responsibilities, returns the log-likelihood. For
/// Schladitz the quadratic forms are left in ws.q.
inline double e_step(Workspace& ws, const FiniteMixture& m) {
  const auto J = static_cast<Eigen::Index>(m.components());
  Eigen::RowVectorXd c(J);
  cosines(ws, m);
  if (m.family == KernelFamily::Schladitz) {
    // q lies in [beta^2, 1], so q^-1.5 needs no log-sum-exp.
    for (Eigen::Index j = 0; j < J; ++j) c[j] = m.weights[static_cast<std::size_t>(j)];
    ws.q = 1.0 - (1.0 - m.lambda * m.lambda) * ws.t.square();
    ws.r = ((ws.q * ws.q.sqrt()).inverse().rowwise() * c.array()).matrix();
    ws.s = ws.r.rowwise().sum().array();
    if (!(ws.s > 0.0).all() || !ws.s.allFinite()) throw NumericalError("em_fit: non-finite log-likelihood contribution");
    ws.r.array().colwise() /= ws.s;
    return ws.s.log().sum() + static_cast<double>(ws.y.rows()) * std::log(m.lambda / kFourPi);
  }
  const bool flat = m.lambda < kSmallKappa;
  const double lc = flat ? -std::log(kFourPi) : vmf_log_normalizer(m.lambda);
  for (Eigen::Index j = 0; j < J; ++j) c[j] = std::log(m.weights[static_cast<std::size_t>(j)]) + lc;
  if (flat) ws.t.setZero();
  ws.t = (m.lambda * ws.t).rowwise() + c.array();
  ws.top = ws.t.rowwise().maxCoeff();
  ws.r = (ws.t.colwise() - ws.top).exp().matrix();
  ws.s = ws.r.rowwise().sum().array();
  ws.r.array().colwise() /= ws.s;
  ws.s = ws.top + ws.s.log();
  if (!ws.s.allFinite()) throw NumericalError("em_fit: non-finite log-likelihood contribution");
  return ws.s.sum();
}

/// Maximizes sum_ij r_ij log k(y_i | mu_j; beta) over beta in the range by
/// projected Newton in log(beta); the objective is concave there.
inline double schladitz_beta_step(const Eigen::MatrixXd& r, const Eigen::ArrayXXd& t2, double beta, ParamRange range) {
  const double total = r.sum();
  const double u_lo = std::log(range.lo), u_hi = std::log(range.hi);
  struct Point {
    double u, f, d1, d2;
  };
  const auto eval = [&](double u) {
    const double b2 = std::exp(2.0 * u), a = 1.0 - b2;
    const auto q = 1.0 - a * t2;
    const auto rr = r.array();
    return Point{u, total * u - 1.5 * (rr * q.log()).sum(), total - 3.0 * b2 * (rr * t2 / q).sum(),
                 -6.0 * b2 * (rr * t2 * (1.0 - t2) / q.square()).sum()};
  };
  Point cur = eval(std::clamp(std::log(beta), u_lo, u_hi));
  for (int it = 0; it < 60; ++it) {
    double step = cur.d2 < 0.0 ? -cur.d1 / cur.d2 : (cur.d1 > 0.0 ? 1.0 : -1.0);
    Point next = eval(std::clamp(cur.u + step, u_lo, u_hi));
    while (next.f < cur.f && std::abs(next.u - cur.u) > 1e-15) {
      step *= 0.5;
      next = eval(std::clamp(cur.u + step, u_lo, u_hi));
    }
    if (next.f < cur.f) break;
    const double moved = std::abs(next.u - cur.u);
    cur = next;
    if (moved < 1e-8) break;
  }
  return std::exp(cur.u);
}

/// ws.q holds the Schladitz quadratic forms at the current axes and beta.
inline void m_step(Workspace& ws, FiniteMixture& m, ParamRange range) {
  const Eigen::Index J = ws.r.cols();
  const double nd = static_cast<double>(ws.y.rows());
  const Eigen::RowVectorXd mass = ws.r.colwise().sum();
  for (Eigen::Index j = 0; j < J; ++j) m.weights[static_cast<std::size_t>(j)] = mass[j] / nd;

  if (m.family == KernelFamily::VonMisesFisher) {
    const Eigen::MatrixXd s = ws.y.transpose() * ws.r;
    double resultant = 0.0;
    for (Eigen::Index j = 0; j < J; ++j) {
      const double len = s.col(j).norm();
      resultant += len;
      if (len > 0.0) m.mus[static_cast<std::size_t>(j)] = UnitVector(Eigen::Vector3d(s.col(j)));
    }
    m.lambda = vmf_inverse_a(std::min(resultant / nd, 1.0), range);
    return;
  }

  // Axis update: the dominant eigenvector of the weighted scatter
  // sum_i r_ij y_i y_i' / q_ij increases the expected log-likelihood.
  for (Eigen::Index j = 0; j < J; ++j) {
    const Eigen::Matrix3d s = ws.y.transpose() * (ws.r.col(j).array() / ws.q.col(j)).matrix().asDiagonal() * ws.y;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(s);
    if (eig.info() == Eigen::Success && eig.eigenvalues()[2] > 0.0) {
      m.mus[static_cast<std::size_t>(j)] = canonical_axis(UnitVector(Eigen::Vector3d(eig.eigenvectors().col(2))));
    }
  }
  cosines(ws, m);
  ws.t = ws.t.square();
  m.lambda = schladitz_beta_step(ws.r, ws.t, m.lambda, range);
}

inline void prune(FiniteMixture& m, Eigen::MatrixXd& r, double threshold, std::size_t iteration) {
  for (std::size_t j = m.components(); j-- > 0;) {
    if (m.components() > 1 && m.weights[j] < threshold) {
      m.warnings.push_back("component " + std::to_string(j) + " removed at iteration " + std::to_string(iteration) +
                           " (mass " + std::to_string(m.weights[j]) + ")");
      m.mus.erase(m.mus.begin() + static_cast<std::ptrdiff_t>(j));
      m.weights.erase(m.weights.begin() + static_cast<std::ptrdiff_t>(j));
      const auto cols = r.cols();
      if (static_cast<Eigen::Index>(j) + 1 < cols) {
        r.middleCols(j, cols - j - 1) = r.rightCols(cols - j - 1).eval();
      }
      r.conservativeResize(Eigen::NoChange, cols - 1);
    }
  }
  const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
  for (double& w : m.weights) w /= total;
}

}  // namespace detail

/// Angular dissimilarity used for seeding: 1 - mu'y, or 1 - |mu'y| for
/// axial kernels.
inline double seed_distance(KernelFamily f, const UnitVector& mu, const UnitVector& y) {
  const double t = mu.dot(y);
  return 1.0 - (f == KernelFamily::Schladitz ? std::abs(t) : t);
}

/// k-means++ seeding on the sphere.
template <typename Rng>
std::vector<UnitVector> kmeanspp_seeds(std::span<const UnitVector> data, KernelFamily f, std::size_t J, Rng& rng) {
  if (data.empty() || J == 0) throw std::invalid_argument("kmeanspp_seeds: need data and J >= 1");
  std::vector<UnitVector> seeds;
  std::uniform_int_distribution<std::size_t> first(0, data.size() - 1);
  seeds.push_back(data[first(rng)]);
  std::vector<double> d2(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) d2[i] = std::pow(seed_distance(f, seeds[0], data[i]), 2);
  while (seeds.size() < J) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      std::discrete_distribution<std::size_t> dist(d2.begin(), d2.end());
      pick = dist(rng);
    } else {
      pick = first(rng);
    }
    seeds.push_back(data[pick]);
    for (std::size_t i = 0; i < data.size(); ++i) {
      d2[i] = std::min(d2[i], std::pow(seed_distance(f, seeds.back(), data[i]), 2));
    }
  }
  if (f == KernelFamily::Schladitz) {
    for (auto& s : seeds) s = canonical_axis(s);
  }
  return seeds;
}

/// EM for a J-component mixture with shared lambda, started from the given
/// centres. Initial weights and lambda come from a hard nearest-centre
/// assignment. vMF M-steps are exact; Schladitz uses one minorize-maximize
/// axis step and an exact beta step per iteration.
inline FiniteMixture em_fit(std::span<const UnitVector> data, KernelFamily family, std::span<const UnitVector> init,
                            const EmConfig& cfg = {}) {
  if (data.empty()) throw std::invalid_argument("em_fit: data must be nonempty");
  if (init.empty()) throw std::invalid_argument("em_fit: need at least one initial centre");
  const ParamRange range = (cfg.range.lo == 0.0 && cfg.range.hi == 0.0) ? default_range(family) : cfg.range;
  const std::size_t n = data.size();
  const std::size_t J = init.size();

  FiniteMixture m;
  m.family = family;
  m.mus.assign(init.begin(), init.end());
  m.weights.assign(J, 0.0);
  m.lambda = family == KernelFamily::VonMisesFisher ? std::clamp(1.0, range.lo, range.hi)
                                                    : std::clamp(0.5, range.lo, range.hi);

  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(J));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < J; ++j) {
      const double d = seed_distance(family, m.mus[j], data[i]);
      if (d < bd) { bd = d; best = j; }
    }
    r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(best)) = 1.0;
  }
  // Empty clusters keep a small share so they are not dropped before EM starts.
  r.array() = r.array() * (1.0 - 1e-6) + 1e-6 / static_cast<double>(J);
  detail::Workspace ws;
  ws.y = detail::data_matrix(data);
  ws.r = std::move(r);
  ws.q = Eigen::ArrayXXd::Ones(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(J));
  detail::m_step(ws, m, range);
  if (family == KernelFamily::Schladitz) {
    for (int k = 0; k < 3; ++k) {
      detail::cosines(ws, m);
      ws.q = 1.0 - (1.0 - m.lambda * m.lambda) * ws.t.square();
      detail::m_step(ws, m, range);
    }
  }

  double ll = detail::e_step(ws, m);
  m.log_lik_trace.push_back(ll);
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    detail::m_step(ws, m, range);
    m.iterations = it;
    const std::size_t before = m.components();
    detail::prune(m, ws.r, cfg.prune_mass, it);
    const double next = detail::e_step(ws, m);
    m.log_lik_trace.push_back(next);
    if (m.components() == before && next - ll < -1e-9 * std::max(1.0, std::abs(ll))) {
      m.warnings.push_back("log-likelihood decreased at iteration " + std::to_string(it));
    }
    const bool small = std::abs(next - ll) < cfg.tol;
    ll = next;
    if (small && m.components() == before) {
      m.converged = true;
      break;
    }
  }
  if (!m.converged) m.warnings.push_back("EM stopped at max_iter without meeting the tolerance");
  m.log_lik = ll;
  m.bic = bic_value(ll, m.components(), n);
  return m;
}

struct BicCell {
  std::size_t J = 0;
  std::size_t restart = 0;
  double bic = std::numeric_limits<double>::infinity();
  double log_lik = -std::numeric_limits<double>::infinity();
  bool ok = false;
  /// No log-likelihood decrease beyond 1e-9 relative slack, pruning steps aside.
  bool ascent = false;
  std::size_t iterations = 0;
  std::string error;
};

struct BicSelection {
  FiniteMixture best;
  std::vector<BicCell> cells;
};

struct BicConfig {
  std::size_t j_max = 10;
  std::size_t restarts = 5;
  std::uint64_t seed = 1;
  EmConfig em{};
  unsigned threads = 1;
};

/// Fits J = 1..j_max with several k-means++ restarts each and keeps the
/// fit with the smallest BIC. Failed fits are recorded and skipped.
inline BicSelection select_bic_detailed(std::span<const UnitVector> data, KernelFamily family,
                                        const BicConfig& cfg = {}) {
  if (cfg.j_max < 1 || cfg.restarts < 1) throw std::invalid_argument("select_bic: j_max and restarts must be >= 1");
  const std::size_t total = cfg.j_max * cfg.restarts;
  std::vector<FiniteMixture> fits(total);
  std::vector<BicCell> cells(total);
  parallel_for(total, cfg.threads, [&](std::size_t c) {
    const std::size_t J = c / cfg.restarts + 1, rs = c % cfg.restarts;
    cells[c].J = J;
    cells[c].restart = rs;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(J), static_cast<std::uint32_t>(rs), 0x454dU};
    std::mt19937_64 rng(seq);
    try {
      const auto seeds = kmeanspp_seeds(data, family, std::min(J, data.size()), rng);
      fits[c] = em_fit(data, family, seeds, cfg.em);
      cells[c].bic = fits[c].bic;
      cells[c].log_lik = fits[c].log_lik;
      cells[c].ok = std::isfinite(fits[c].bic);
      cells[c].iterations = fits[c].iterations;
      cells[c].ascent = std::none_of(fits[c].warnings.begin(), fits[c].warnings.end(),
                                     [](const std::string& w) { return w.starts_with("log-likelihood decreased"); });
    } catch (const std::exception& e) {
      cells[c].error = e.what();
    }
  });
  std::size_t best = total;
  for (std::size_t c = 0; c < total; ++c) {
    if (cells[c].ok && (best == total || cells[c].bic < cells[best].bic)) best = c;
  }
  if (best == total) throw NumericalError("select_bic: every EM fit failed");
  return BicSelection{std::move(fits[best]), std::move(cells)};
}

inline FiniteMixture select_bic(std::span<const UnitVector> data, KernelFamily family, std::size_t j_max,
                                std::size_t restarts, std::uint64_t seed, const EmConfig& em = {},
                                unsigned threads = 1) {
  return select_bic_detailed(data, family, BicConfig{j_max, restarts, seed, em, threads}).best;
}

inline double finite_mixture_density(const FiniteMixture& m, const UnitVector& y) {
  double f = 0.0;
  for (std::size_t j = 0; j < m.components(); ++j) {
    f += m.weights[j] * std::exp(detail::log_kernel_from_cos(m.family, m.lambda, m.mus[j].dot(y)));
  }
  return f;
}

}  // namespace sphpr
