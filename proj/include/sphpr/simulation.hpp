#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <boost/math/distributions/beta.hpp>

#include "sphpr/em.hpp"
#include "sphpr/kernels.hpp"
#include "sphpr/parallel.hpp"
#include "sphpr/pr.hpp"
#include "sphpr/sphere.hpp"
#include "sphpr/structural_likelihood.hpp"

namespace sphpr {

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t tag = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(tag)};
  return Rng(seq);
}

// ---------------------------------------------------------------- samplers

/// Wood's rejection sampler for the vMF cosine, specialised to S^2.
template <typename R>
std::vector<UnitVector> sample_vmf(const UnitVector& mu, double kappa, std::size_t n, R& rng) {
  KernelSpec::check_lambda(KernelFamily::VonMisesFisher, kappa);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::Matrix3d q = rotation_to(mu);
  const double b = 1.0 / (kappa + std::sqrt(kappa * kappa + 1.0));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + 2.0 * std::log(1.0 - x0 * x0);
  std::vector<UnitVector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double w = 0.0;
    if (kappa < detail::kSmallKappa) {
      w = 2.0 * unif(rng) - 1.0;
    } else {
      for (;;) {
        const double z = unif(rng);
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        const double u = unif(rng);
        if (kappa * w + 2.0 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
      }
    }
    const double ang = kTwoPi * unif(rng);
    const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
    out.emplace_back(Eigen::Vector3d(q * Eigen::Vector3d(s * std::cos(ang), s * std::sin(ang), w)));
  }
  return out;
}

/// Angular central Gaussian draws: normalize z ~ N(0, Q diag(1, 1, beta^-2) Q').
template <typename R>
std::vector<UnitVector> sample_schladitz(const UnitVector& mu, double beta, std::size_t n, R& rng) {
  KernelSpec::check_lambda(KernelFamily::Schladitz, beta);
  std::normal_distribution<double> norm(0.0, 1.0);
  const Eigen::Matrix3d q = rotation_to(mu);
  std::vector<UnitVector> out;
  out.reserve(n);
  while (out.size() < n) {
    const Eigen::Vector3d z(norm(rng), norm(rng), norm(rng) / beta);
    if (z.squaredNorm() == 0.0) continue;
    out.emplace_back(Eigen::Vector3d(q * z));
  }
  return out;
}

template <typename R>
std::vector<UnitVector> sample_kernel(const KernelSpec& spec, const UnitVector& mu, std::size_t n, R& rng) {
  return spec.family() == KernelFamily::VonMisesFisher ? sample_vmf(mu, spec.lambda(), n, rng)
                                                       : sample_schladitz(mu, spec.lambda(), n, rng);
}

// ---------------------------------------------------------- mixing specs

struct RectBounds {
  double theta_lo = 0.0;
  double theta_hi = kPi;
  double phi_lo = 0.0;
  double phi_hi = kTwoPi;

  bool contains(double theta, double phi) const {
    return theta >= theta_lo && theta <= theta_hi && phi >= phi_lo && phi <= phi_hi;
  }
};

/// weight * delta(first) + (1 - weight) * delta(second).
struct TwoPointDiscrete {
  SphericalCoord first;
  SphericalCoord second;
  double weight = 0.5;
};

/// Bivariate normal in (theta, phi) restricted to the bounds and renormalized.
struct TruncatedNormal2 {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  RectBounds bounds{};
};

/// Independent scaled Beta laws on theta and phi; (1, 1) is uniform.
struct BetaProduct {
  double theta_a = 1.0, theta_b = 1.0;
  double phi_a = 1.0, phi_b = 1.0;
  RectBounds bounds{};
};

/// weight * first + (1 - weight) * second, each normalized on its own bounds.
struct Bimodal {
  TruncatedNormal2 first;
  TruncatedNormal2 second;
  double weight = 0.5;
};

using MixingSpec = std::variant<TwoPointDiscrete, TruncatedNormal2, BetaProduct, Bimodal>;

inline BetaProduct beta_uniform(double a, double b, RectBounds bounds) { return BetaProduct{a, b, 1.0, 1.0, bounds}; }
inline BetaProduct uniform_beta(double a, double b, RectBounds bounds) { return BetaProduct{1.0, 1.0, a, b, bounds}; }

inline bool is_discrete(const MixingSpec& s) { return std::holds_alternative<TwoPointDiscrete>(s); }

namespace detail {

inline void validate_bounds(const RectBounds& b) {
  if (!(b.theta_lo >= 0.0 && b.theta_lo < b.theta_hi && b.theta_hi <= kPi && b.phi_lo >= 0.0 &&
        b.phi_lo < b.phi_hi && b.phi_hi <= kTwoPi)) {
    throw std::invalid_argument("MixingSpec: bounds must be a nonempty rectangle in [0,pi] x [0,2pi]");
  }
}

inline void validate_normal(const TruncatedNormal2& t) {
  validate_bounds(t.bounds);
  if (!t.mean.allFinite()) throw std::invalid_argument("TruncatedNormal2: mean must be finite");
  if (std::abs(t.cov(0, 1) - t.cov(1, 0)) > 1e-12 * std::max(1.0, t.cov.cwiseAbs().maxCoeff()) ||
      Eigen::LLT<Eigen::Matrix2d>(t.cov).info() != Eigen::Success) {
    throw std::invalid_argument("TruncatedNormal2: covariance must be symmetric positive definite");
  }
}

inline double normal2_pdf(const TruncatedNormal2& t, double theta, double phi) {
  const Eigen::Vector2d d(theta - t.mean[0], phi - t.mean[1]);
  const double det = t.cov.determinant();
  return std::exp(-0.5 * d.dot(t.cov.inverse() * d)) / (kTwoPi * std::sqrt(det));
}

/// Untruncated normal mass inside the bounds, by midpoint quadrature.
inline double normal2_mass(const TruncatedNormal2& t, std::size_t n = 512) {
  const auto& b = t.bounds;
  const double dt = (b.theta_hi - b.theta_lo) / static_cast<double>(n);
  const double dp = (b.phi_hi - b.phi_lo) / static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      s += normal2_pdf(t, b.theta_lo + (static_cast<double>(i) + 0.5) * dt, b.phi_lo + (static_cast<double>(j) + 0.5) * dp);
    }
  }
  return s * dt * dp;
}

struct AcceptCounter {
  std::size_t tries = 0;
  std::size_t accepted = 0;
};

template <typename R>
SphericalCoord sample_truncated(const TruncatedNormal2& t, const Eigen::Matrix2d& chol, R& rng, AcceptCounter& count) {
  std::normal_distribution<double> norm(0.0, 1.0);
  for (;;) {
    const Eigen::Vector2d z = t.mean + chol * Eigen::Vector2d(norm(rng), norm(rng));
    ++count.tries;
    if (t.bounds.contains(z[0], z[1])) {
      ++count.accepted;
      return SphericalCoord(z[0], z[1]);
    }
    if (count.tries >= 10000 && static_cast<double>(count.accepted) < 1e-3 * static_cast<double>(count.tries)) {
      throw std::invalid_argument("sample_mixing: truncated-normal acceptance rate below 1e-3");
    }
  }
}

}  // namespace detail

inline void validate(const MixingSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TwoPointDiscrete>) {
          if (!(s.weight >= 0.0 && s.weight <= 1.0)) throw std::invalid_argument("TwoPointDiscrete: weight in [0,1]");
        } else if constexpr (std::is_same_v<T, TruncatedNormal2>) {
          detail::validate_normal(s);
        } else if constexpr (std::is_same_v<T, BetaProduct>) {
          detail::validate_bounds(s.bounds);
          if (!(s.theta_a > 0.0 && s.theta_b > 0.0 && s.phi_a > 0.0 && s.phi_b > 0.0)) {
            throw std::invalid_argument("BetaProduct: Beta parameters must be positive");
          }
        } else {
          detail::validate_normal(s.first);
          detail::validate_normal(s.second);
          if (!(s.weight >= 0.0 && s.weight <= 1.0)) throw std::invalid_argument("Bimodal: weight in [0,1]");
        }
      },
      spec);
}

/// n draws of mixing locations.
template <typename R>
std::vector<SphericalCoord> sample_mixing(const MixingSpec& spec, std::size_t n, R& rng) {
  validate(spec);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<SphericalCoord> out;
  out.reserve(n);
  detail::AcceptCounter count;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TwoPointDiscrete>) {
          for (std::size_t i = 0; i < n; ++i) out.push_back(unif(rng) < s.weight ? s.first : s.second);
        } else if constexpr (std::is_same_v<T, TruncatedNormal2>) {
          const Eigen::Matrix2d l = Eigen::LLT<Eigen::Matrix2d>(s.cov).matrixL();
          for (std::size_t i = 0; i < n; ++i) out.push_back(detail::sample_truncated(s, l, rng, count));
        } else if constexpr (std::is_same_v<T, BetaProduct>) {
          const boost::math::beta_distribution<double> bt(s.theta_a, s.theta_b), bp(s.phi_a, s.phi_b);
          const auto& b = s.bounds;
          for (std::size_t i = 0; i < n; ++i) {
            const double qt = boost::math::quantile(bt, unif(rng));
            const double qp = boost::math::quantile(bp, unif(rng));
            out.emplace_back(b.theta_lo + (b.theta_hi - b.theta_lo) * qt, b.phi_lo + (b.phi_hi - b.phi_lo) * qp);
          }
        } else {
          const Eigen::Matrix2d l1 = Eigen::LLT<Eigen::Matrix2d>(s.first.cov).matrixL();
          const Eigen::Matrix2d l2 = Eigen::LLT<Eigen::Matrix2d>(s.second.cov).matrixL();
          for (std::size_t i = 0; i < n; ++i) {
            out.push_back(unif(rng) < s.weight ? detail::sample_truncated(s.first, l1, rng, count)
                                               : detail::sample_truncated(s.second, l2, rng, count));
          }
        }
      },
      spec);
  return out;
}

/// Mixing locations first, then one kernel draw around each.
template <typename R>
std::vector<UnitVector> sample_mixture(const KernelSpec& spec, const MixingSpec& mixing, std::size_t n, R& rng) {
  const auto locs = sample_mixing(mixing, n, rng);
  std::vector<UnitVector> out;
  out.reserve(n);
  for (const auto& c : locs) out.push_back(sample_kernel(spec, spherical_to_cartesian(c), 1, rng).front());
  return out;
}

/// Density of a continuous mixing spec with respect to d theta d phi.
class RectangleDensity {
 public:
  explicit RectangleDensity(const MixingSpec& spec) : spec_(spec) {
    validate(spec_);
    if (is_discrete(spec_)) throw std::invalid_argument("RectangleDensity: discrete spec has no density");
    if (const auto* t = std::get_if<TruncatedNormal2>(&spec_)) z1_ = detail::normal2_mass(*t);
    if (const auto* b = std::get_if<Bimodal>(&spec_)) {
      z1_ = detail::normal2_mass(b->first);
      z2_ = detail::normal2_mass(b->second);
    }
  }

  double operator()(double theta, double phi) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, TruncatedNormal2>) {
            return s.bounds.contains(theta, phi) ? detail::normal2_pdf(s, theta, phi) / z1_ : 0.0;
          } else if constexpr (std::is_same_v<T, BetaProduct>) {
            const auto& b = s.bounds;
            if (!b.contains(theta, phi)) return 0.0;
            const double wt = b.theta_hi - b.theta_lo, wp = b.phi_hi - b.phi_lo;
            const double ut = std::clamp((theta - b.theta_lo) / wt, 0.0, 1.0);
            const double up = std::clamp((phi - b.phi_lo) / wp, 0.0, 1.0);
            return beta_pdf(s.theta_a, s.theta_b, ut) / wt * beta_pdf(s.phi_a, s.phi_b, up) / wp;
          } else if constexpr (std::is_same_v<T, Bimodal>) {
            const double a = s.first.bounds.contains(theta, phi) ? detail::normal2_pdf(s.first, theta, phi) / z1_ : 0.0;
            const double c = s.second.bounds.contains(theta, phi) ? detail::normal2_pdf(s.second, theta, phi) / z2_ : 0.0;
            return s.weight * a + (1.0 - s.weight) * c;
          } else {
            return 0.0;
          }
        },
        spec_);
  }

 private:
  static double beta_pdf(double a, double b, double u) {
    if ((u == 0.0 && a < 1.0) || (u == 1.0 && b < 1.0)) return std::numeric_limits<double>::infinity();
    return boost::math::pdf(boost::math::beta_distribution<double>(a, b), u);
  }

  MixingSpec spec_;
  double z1_ = 1.0, z2_ = 1.0;
};

// --------------------------------------------------------------- partition

/// Cell layout for the L1 mixing distance: n_theta bands of equal height
/// and n_phi sectors, boundaries shifted by the given fractions of a cell.
/// The band touching a pole is one cell. With axial symmetry the band at
/// the equator identifies sector c with sector c + n_phi / 2.
struct PartitionSpec {
  std::size_t n_theta = 10;
  std::size_t n_phi = 10;
  double theta_offset = 0.0;
  double phi_offset = 0.0;
};

class Partition {
 public:
  Partition(KernelFamily family, PartitionSpec spec)
      : spec_(spec), axial_(family == KernelFamily::Schladitz), theta_max_(KernelSpec::support_theta_max(family)) {
    if (spec_.n_theta < 1 || spec_.n_phi < 1) throw std::invalid_argument("Partition: counts must be >= 1");
    if (!(spec_.theta_offset >= 0.0 && spec_.theta_offset < 1.0 && spec_.phi_offset >= 0.0 && spec_.phi_offset < 1.0)) {
      throw std::invalid_argument("Partition: offsets must lie in [0, 1)");
    }
    for (std::size_t band = 0; band < spec_.n_theta; ++band) {
      for (std::size_t c = 0; c < spec_.n_phi; ++c) {
        const auto key = canonical(band, c);
        if (!ids_.count(key)) ids_.emplace(key, ids_.size());
      }
    }
  }

  std::size_t size() const { return ids_.size(); }
  const PartitionSpec& spec() const { return spec_; }

  std::size_t cell(const UnitVector& y) const {
    const UnitVector v = axial_ && y.x3() < 0.0 ? -y : y;
    const SphericalCoord c = cartesian_to_spherical(v);
    const double dt = theta_max_ / static_cast<double>(spec_.n_theta);
    const double dp = kTwoPi / static_cast<double>(spec_.n_phi);
    const auto band = static_cast<std::size_t>(
        std::clamp(std::floor(c.theta / dt + spec_.theta_offset), 0.0, static_cast<double>(spec_.n_theta - 1)));
    auto sector = static_cast<long long>(std::floor(c.phi / dp + spec_.phi_offset));
    sector %= static_cast<long long>(spec_.n_phi);
    return ids_.at(canonical(band, static_cast<std::size_t>(sector)));
  }

  std::vector<double> masses_from_grid(const MixingDensityGrid& psi) const {
    std::vector<double> m(size(), 0.0);
    const SphereGrid& g = psi.grid();
    for (std::size_t i = 0; i < g.size(); ++i) m[cell(g.node(i))] += psi[i] * g.weights()[i];
    return m;
  }

  std::vector<double> masses_from_atoms(std::span<const UnitVector> atoms, std::span<const double> weights) const {
    if (atoms.size() != weights.size()) throw std::invalid_argument("masses_from_atoms: size mismatch");
    std::vector<double> m(size(), 0.0);
    for (std::size_t j = 0; j < atoms.size(); ++j) m[cell(atoms[j])] += weights[j];
    return m;
  }

  std::vector<double> masses_from_mixture(const FiniteMixture& fit) const {
    return masses_from_atoms(fit.mus, fit.weights);
  }

  /// Cell masses of a (theta, phi) density by fine midpoint quadrature over
  /// the support, renormalized to 1.
  template <typename D>
  std::vector<double> masses_from_density(D&& density, std::size_t fine_theta = 600, std::size_t fine_phi = 1200) const {
    std::vector<double> m(size(), 0.0);
    const double dt = theta_max_ / static_cast<double>(fine_theta), dp = kTwoPi / static_cast<double>(fine_phi);
    for (std::size_t i = 0; i < fine_theta; ++i) {
      const double th = (static_cast<double>(i) + 0.5) * dt;
      for (std::size_t j = 0; j < fine_phi; ++j) {
        const double ph = (static_cast<double>(j) + 0.5) * dp;
        m[cell(spherical_to_cartesian(SphericalCoord(th, ph)))] += density(th, ph) * dt * dp;
      }
    }
    const double total = std::accumulate(m.begin(), m.end(), 0.0);
    if (!(total > 0.0)) throw NumericalError("masses_from_density: density has zero mass on the support");
    for (double& v : m) v /= total;
    return m;
  }

 private:
  std::pair<std::size_t, std::size_t> canonical(std::size_t band, std::size_t sector) const {
    if (band == 0) return {0, 0};
    if (band == spec_.n_theta - 1) {
      if (!axial_) return {band, 0};
      if (spec_.n_phi % 2 == 0) return {band, sector % (spec_.n_phi / 2)};
    }
    return {band, sector};
  }

  PartitionSpec spec_;
  bool axial_;
  double theta_max_;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> ids_;
};

/// sum_k |a_k - b_k| over partition cells.
inline double mixing_l1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mixing_l1_distance: partitions differ");
  const double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
  if (std::abs(sa - 1.0) > 1e-6 || std::abs(sb - 1.0) > 1e-6) {
    throw std::invalid_argument("mixing_l1_distance: cell masses must sum to 1 within 1e-6");
  }
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += std::abs(a[k] - b[k]);
  return d;
}

// ----------------------------------------------------------------- metrics

/// Quadrature of f_true log(f_true / f_hat) over the grid.
inline double kl_mixture(std::span<const double> f_true, std::span<const double> f_hat, const SphereGrid& grid) {
  if (f_true.size() != grid.size() || f_hat.size() != grid.size()) {
    throw std::invalid_argument("kl_mixture: values do not match the grid");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(f_hat[i] > 0.0)) throw NumericalError("kl_mixture: estimated density is not positive at node " + std::to_string(i));
    if (f_true[i] <= 0.0) continue;
    s += grid.weights()[i] * f_true[i] * std::log(std::max(f_true[i] / f_hat[i], 1e-300));
  }
  return s;
}

/// K_n = (1/n) sum_i [log f*(Y_i) - log f_{i-1}(Y_i)].
inline double empirical_kl_diagnostic(std::span<const double> log_f_true, std::span<const double> predictive_log) {
  if (log_f_true.size() != predictive_log.size() || log_f_true.empty()) {
    throw std::invalid_argument("empirical_kl_diagnostic: need matching nonempty inputs");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < log_f_true.size(); ++i) s += log_f_true[i] - predictive_log[i];
  return s / static_cast<double>(log_f_true.size());
}

/// The data-generating mixture: kernel plus mixing law, with the true
/// mixture density available at arbitrary points.
class TruthModel {
 public:
  TruthModel(const KernelSpec& kernel, const MixingSpec& mixing, GridDims truth_grid = {})
      : kernel_(kernel), mixing_(mixing) {
    validate(mixing_);
    if (const auto* tp = std::get_if<TwoPointDiscrete>(&mixing_)) {
      atoms_ = {spherical_to_cartesian(tp->first), spherical_to_cartesian(tp->second)};
      weights_ = {tp->weight, 1.0 - tp->weight};
      return;
    }
    GridDims dims = truth_grid;
    if (dims.n_theta == 0) {
      dims = default_grid_dims(kernel.family());
      dims.n_theta *= 2;
      dims.n_phi *= 2;
    }
    const RectangleDensity rect(mixing_);
    const double tmax = kernel.support_theta_max();
    // Nodes are rectangle midpoints, so the rectangle density covers the
    // whole theta range the mixing law lives on.
    const SphereGrid g = build_grid(tmax, dims.n_theta, dims.n_phi);
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) v[i] = rect(g.theta()[i], g.phi()[i]) / std::sin(g.theta()[i]);
    psi_.emplace(MixingDensityGrid::normalized(g, std::move(v)));
  }

  const KernelSpec& kernel() const { return kernel_; }
  const MixingSpec& mixing() const { return mixing_; }
  bool discrete() const { return !psi_.has_value(); }

  double density(const UnitVector& y) const {
    if (psi_) return mixture_density(*psi_, kernel_, y);
    double f = 0.0;
    for (std::size_t j = 0; j < atoms_.size(); ++j) f += weights_[j] * kernel_density(kernel_, y, atoms_[j]);
    return f;
  }

  std::vector<double> density_on(const SphereGrid& at, unsigned threads = 1) const {
    if (psi_) return mixture_density_on(*psi_, kernel_, at, threads);
    std::vector<double> out(at.size());
    for (std::size_t i = 0; i < at.size(); ++i) out[i] = density(at.node(i));
    return out;
  }

  std::vector<double> cell_masses(const Partition& p) const {
    if (!psi_) return p.masses_from_atoms(atoms_, weights_);
    return p.masses_from_density(RectangleDensity(mixing_));
  }

 private:
  KernelSpec kernel_;
  MixingSpec mixing_;
  std::vector<UnitVector> atoms_;
  std::vector<double> weights_;
  std::optional<MixingDensityGrid> psi_;
};

// -------------------------------------------------------------- experiments

struct ExperimentConfig {
  std::string name = "experiment";
  KernelFamily family = KernelFamily::VonMisesFisher;
  double true_lambda = 10.0;
  MixingSpec mixing = TwoPointDiscrete{};
  std::size_t n = 2000;
  std::size_t replications = 10;
  std::size_t n_perms = 10;
  std::uint64_t seed = 1;
  double gamma = WeightSchedule::kDefaultGamma;
  GridDims pr_grid{};  // zero selects the family default
  GridDims kl_grid{60, 120};
  GridDims truth_grid{};
  PartitionSpec partition{};
  ParamRange range{};  // lo == hi == 0 selects the family default
  SearchConfig search{};
  /// Permutations per marginal-likelihood evaluation during the lambda search.
  std::size_t objective_perms = 1;
  BicConfig em{};
  unsigned threads = 1;
};

struct ReplicationResult {
  bool ok = false;
  std::string error;
  double kl_pr = 0.0, kl_ml = 0.0, d_pr = 0.0, d_ml = 0.0;
  double lambda_hat = 0.0;
  double em_lambda = 0.0;
  std::size_t em_components = 0;
  bool lambda_boundary = false;
};

struct Summary {
  double mean = 0.0;
  double se = 0.0;
};

inline Summary summarize(std::span<const double> v) {
  Summary s;
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return s;
}

struct ExperimentRow {
  std::string name;
  KernelFamily family = KernelFamily::VonMisesFisher;
  std::size_t n = 0;
  std::size_t replications = 0;
  std::size_t failures = 0;
  Summary kl_pr, kl_ml, d_pr, d_ml, lambda_hat, em_components;
  std::vector<ReplicationResult> reps;
};

inline ParamRange effective_range(const ExperimentConfig& cfg) {
  return (cfg.range.lo == 0.0 && cfg.range.hi == 0.0) ? default_range(cfg.family) : cfg.range;
}

inline GridDims effective_pr_grid(const ExperimentConfig& cfg) {
  return cfg.pr_grid.n_theta == 0 ? default_grid_dims(cfg.family) : cfg.pr_grid;
}

/// Shared per-experiment state: the truth and its evaluations.
struct ExperimentContext {
  TruthModel truth;
  SphereGrid kl_grid;
  std::vector<double> f_true;
  Partition partition;
  std::vector<double> truth_masses;

  explicit ExperimentContext(const ExperimentConfig& cfg)
      : truth(KernelSpec(cfg.family, cfg.true_lambda), cfg.mixing, cfg.truth_grid),
        kl_grid(build_grid(kPi, cfg.kl_grid.n_theta, cfg.kl_grid.n_phi)),
        f_true(truth.density_on(kl_grid, cfg.threads)),
        partition(cfg.family, cfg.partition),
        truth_masses(truth.cell_masses(partition)) {}
};

inline std::vector<UnitVector> replication_data(const ExperimentConfig& cfg, std::size_t rep) {
  Rng rng = make_rng(cfg.seed, rep, 0x44415441U);
  return sample_mixture(KernelSpec(cfg.family, cfg.true_lambda), cfg.mixing, cfg.n, rng);
}

inline ReplicationResult run_replication(const ExperimentConfig& cfg, const ExperimentContext& ctx, std::size_t rep) {
  ReplicationResult r;
  try {
    const auto data = replication_data(cfg, rep);
    const std::uint64_t rep_seed = make_rng(cfg.seed, rep, 0x5345U)();
    const ParamRange range = effective_range(cfg);
    const SphereGrid support = support_grid(cfg.family, effective_pr_grid(cfg));
    const MixingDensityGrid psi0 = MixingDensityGrid::uniform(support);
    const WeightSchedule schedule(cfg.gamma);

    const KernelSpec start(cfg.family, std::sqrt(range.lo * range.hi), range);
    const auto curve = maximize_marginal(data, start, psi0, schedule, MarginalConfig{cfg.search, cfg.objective_perms, rep_seed, 1});
    r.lambda_hat = curve.argmax;
    r.lambda_boundary = curve.boundary;
    const KernelSpec fitted = start.with_lambda(curve.argmax);
    const PREstimate est = permutation_average(data, fitted, psi0, schedule, cfg.n_perms, rep_seed, 1);
    const auto f_pr = mixture_density_on(est.psi, fitted, ctx.kl_grid, 1);
    r.kl_pr = kl_mixture(ctx.f_true, f_pr, ctx.kl_grid);
    r.d_pr = mixing_l1_distance(ctx.partition.masses_from_grid(est.psi), ctx.truth_masses);

    BicConfig em = cfg.em;
    em.seed = rep_seed;
    em.threads = 1;
    em.em.range = range;
    const FiniteMixture fit = select_bic_detailed(data, cfg.family, em).best;
    std::vector<double> f_ml(ctx.kl_grid.size());
    for (std::size_t i = 0; i < f_ml.size(); ++i) f_ml[i] = finite_mixture_density(fit, ctx.kl_grid.node(i));
    r.kl_ml = kl_mixture(ctx.f_true, f_ml, ctx.kl_grid);
    r.d_ml = mixing_l1_distance(ctx.partition.masses_from_mixture(fit), ctx.truth_masses);
    r.em_lambda = fit.lambda;
    r.em_components = fit.components();
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

/// Runs all replications (in parallel when threads > 1) and aggregates in
/// replication order.
inline ExperimentRow run_experiment(const ExperimentConfig& cfg) {
  if (cfg.n < 1 || cfg.replications < 1) throw std::invalid_argument("run_experiment: n and replications must be >= 1");
  validate(cfg.mixing);
  const ExperimentContext ctx(cfg);
  ExperimentRow row;
  row.name = cfg.name;
  row.family = cfg.family;
  row.n = cfg.n;
  row.replications = cfg.replications;
  row.reps.resize(cfg.replications);
  parallel_for(cfg.replications, cfg.threads, [&](std::size_t k) { row.reps[k] = run_replication(cfg, ctx, k); });

  std::vector<double> kp, km, dp, dm, lh, ec;
  for (const auto& r : row.reps) {
    if (!r.ok) {
      ++row.failures;
      continue;
    }
    kp.push_back(r.kl_pr);
    km.push_back(r.kl_ml);
    dp.push_back(r.d_pr);
    dm.push_back(r.d_ml);
    lh.push_back(r.lambda_hat);
    ec.push_back(static_cast<double>(r.em_components));
  }
  row.kl_pr = summarize(kp);
  row.kl_ml = summarize(km);
  row.d_pr = summarize(dp);
  row.d_ml = summarize(dm);
  row.lambda_hat = summarize(lh);
  row.em_components = summarize(ec);
  return row;
}

// ------------------------------------------------------------------ presets

namespace presets {

/// Partition used for the table presets: cells shifted so that the
/// two-point atoms sit inside cells rather than on boundaries.
inline PartitionSpec table_partition() { return PartitionSpec{10, 10, 0.5, 0.25}; }

inline TruncatedNormal2 tr_normal(double m_theta, double m_phi, Eigen::Matrix2d cov, double theta_max) {
  return TruncatedNormal2{Eigen::Vector2d(m_theta, m_phi), cov, RectBounds{0.0, theta_max, 0.0, kTwoPi}};
}

inline Eigen::Matrix2d case2_cov() {
  const double a = (kPi / 12.0) * (kPi / 12.0);
  Eigen::Matrix2d c;
  c << a, a, a, (kPi / 3.0) * (kPi / 3.0);
  return c;
}

inline Eigen::Matrix2d bimodal_cov() {
  Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
  c(0, 0) = (kPi / 12.0) * (kPi / 12.0);
  c(1, 1) = (kPi / 6.0) * (kPi / 6.0);
  return c;
}

inline ExperimentConfig base(std::string name, KernelFamily f, double lambda, MixingSpec m) {
  ExperimentConfig c;
  c.name = std::move(name);
  c.family = f;
  c.true_lambda = lambda;
  c.mixing = std::move(m);
  c.partition = table_partition();
  return c;
}

/// vMF designs with kappa = 10.
inline std::vector<ExperimentConfig> vmf_cases() {
  const auto F = KernelFamily::VonMisesFisher;
  const RectBounds full{0.0, kPi, 0.0, kTwoPi};
  std::vector<ExperimentConfig> v;
  v.push_back(base("1", F, 10.0, TwoPointDiscrete{SphericalCoord(kPi / 2, 0.0), SphericalCoord(kPi / 2, kPi / 2), 0.5}));
  v.push_back(base("2", F, 10.0, tr_normal(kPi / 4, kPi, case2_cov(), kPi)));
  v.push_back(base("3", F, 10.0, BetaProduct{2.0, 5.0, 2.0, 2.0, full}));
  v.push_back(base("4", F, 10.0,
                   Bimodal{tr_normal(kPi / 4, kPi / 2, bimodal_cov(), kPi), tr_normal(kPi / 4, 5 * kPi / 4, bimodal_cov(), kPi), 0.5}));
  v.push_back(base("5a", F, 10.0, beta_uniform(4.0, 4.0, full)));
  v.push_back(base("5b", F, 10.0, uniform_beta(4.0, 4.0, full)));
  return v;
}

/// Schladitz designs with beta = 0.1 on the upper hemisphere.
inline std::vector<ExperimentConfig> schladitz_cases() {
  const auto F = KernelFamily::Schladitz;
  const RectBounds half{0.0, kPi / 2, 0.0, kTwoPi};
  std::vector<ExperimentConfig> v;
  const std::pair<const char*, double> two_point[] = {{"1a", 0.5}, {"1b", 0.25}, {"1c", 0.2}, {"1d", 0.1}};
  for (const auto& [name, w] : two_point) {
    v.push_back(base(name, F, 0.1, TwoPointDiscrete{SphericalCoord(kPi / 2, 0.0), SphericalCoord(0.0, 0.0), w}));
  }
  v.push_back(base("2", F, 0.1, tr_normal(kPi / 4, kPi, case2_cov(), kPi / 2)));
  v.push_back(base("3", F, 0.1, BetaProduct{2.0, 5.0, 2.0, 2.0, half}));
  v.push_back(base("4", F, 0.1,
                   Bimodal{tr_normal(kPi / 4, kPi / 2, bimodal_cov(), kPi / 2),
                           tr_normal(kPi / 4, 5 * kPi / 4, bimodal_cov(), kPi / 2), 0.5}));
  return v;
}

inline ExperimentConfig find(const std::string& family, const std::string& name) {
  const auto cases = parse_family(family) == KernelFamily::VonMisesFisher ? vmf_cases() : schladitz_cases();
  for (const auto& c : cases) {
    if (c.name == name) return c;
  }
  throw std::invalid_argument("unknown preset case '" + name + "' for family " + family);
}

}  // namespace presets

}  // namespace sphpr
