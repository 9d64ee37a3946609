#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "sphpr/sphere.hpp"

namespace sphpr {

enum class KernelFamily { VonMisesFisher, Schladitz };

inline std::string to_string(KernelFamily f) {
  return f == KernelFamily::VonMisesFisher ? "vmf" : "schladitz";
}

inline KernelFamily parse_family(std::string_view s) {
  if (s == "vmf" || s == "VonMisesFisher") return KernelFamily::VonMisesFisher;
  if (s == "schladitz" || s == "Schladitz") return KernelFamily::Schladitz;
  throw std::invalid_argument("unknown kernel family '" + std::string(s) + "' (expected vmf or schladitz)");
}

/// Closed interval of admissible structural-parameter values.
struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

inline ParamRange default_range(KernelFamily f) {
  return f == KernelFamily::VonMisesFisher ? ParamRange{0.1, 500.0} : ParamRange{0.01, 0.99};
}

/// Kernel family plus its structural parameter: kappa for vMF, beta for Schladitz.
class KernelSpec {
 public:
  KernelSpec(KernelFamily family, double lambda) : KernelSpec(family, lambda, default_range(family)) {}
  KernelSpec(KernelFamily family, double lambda, ParamRange range)
      : family_(family), lambda_(lambda), range_(range) {
    check_lambda(family_, lambda_);
    if (!(range_.lo <= range_.hi) || !std::isfinite(range_.lo) || !std::isfinite(range_.hi)) {
      throw std::invalid_argument("KernelSpec: invalid lambda range");
    }
    if (family_ == KernelFamily::VonMisesFisher ? range_.lo < 0.0 : range_.lo <= 0.0) {
      throw std::invalid_argument("KernelSpec: lambda range leaves the admissible domain");
    }
  }

  KernelFamily family() const { return family_; }
  double lambda() const { return lambda_; }
  ParamRange range() const { return range_; }
  KernelSpec with_lambda(double lambda) const { return KernelSpec(family_, lambda, range_); }

  /// vMF mixes over the whole sphere; the axial Schladitz kernel over the
  /// upper hemisphere.
  double support_theta_max() const { return support_theta_max(family_); }
  static double support_theta_max(KernelFamily f) {
    return f == KernelFamily::VonMisesFisher ? kPi : kPi / 2.0;
  }

  static void check_lambda(KernelFamily f, double lambda) {
    if (!std::isfinite(lambda)) throw std::invalid_argument("kernel parameter must be finite");
    if (f == KernelFamily::VonMisesFisher && lambda < 0.0) {
      throw std::invalid_argument("vMF concentration kappa must be >= 0");
    }
    if (f == KernelFamily::Schladitz && lambda <= 0.0) {
      throw std::invalid_argument("Schladitz parameter beta must be > 0");
    }
  }

 private:
  KernelFamily family_;
  double lambda_;
  ParamRange range_;
};

namespace detail {
inline constexpr double kSmallKappa = 1e-8;
}

/// log C(kappa) where C(kappa) = kappa / (4 pi sinh kappa), written so that
/// large kappa does not overflow.
inline double vmf_log_normalizer(double kappa) {
  if (kappa < detail::kSmallKappa) return -std::log(kFourPi);
  return std::log(kappa) - std::log(kTwoPi) - kappa - std::log1p(-std::exp(-2.0 * kappa));
}

inline double vmf_log_density(const UnitVector& y, const UnitVector& mu, double kappa) {
  KernelSpec::check_lambda(KernelFamily::VonMisesFisher, kappa);
  if (kappa < detail::kSmallKappa) return -std::log(kFourPi);
  return vmf_log_normalizer(kappa) + kappa * mu.dot(y);
}

inline double vmf_density(const UnitVector& y, const UnitVector& mu, double kappa) {
  return std::exp(vmf_log_density(y, mu, kappa));
}

/// y' Sigma^{-1} y for the Schladitz scatter with axis mu. Sigma^{-1} has
/// eigenvalue beta^2 along mu and 1 orthogonal to it, which reduces to
/// 1 - (1 - beta^2) (mu'y)^2.
inline double schladitz_quadratic_form(double cos_angle, double beta) {
  return 1.0 - (1.0 - beta * beta) * cos_angle * cos_angle;
}

/// The inverse scatter matrix assembled from the rotation taking e3 to mu.
inline Eigen::Matrix3d schladitz_inverse_scatter(const UnitVector& mu, double beta) {
  const Eigen::Matrix3d q = rotation_to(mu);
  return q * Eigen::Vector3d(1.0, 1.0, beta * beta).asDiagonal() * q.transpose();
}

inline double schladitz_log_density(const UnitVector& y, const UnitVector& mu, double beta) {
  KernelSpec::check_lambda(KernelFamily::Schladitz, beta);
  const double q = schladitz_quadratic_form(mu.dot(y), beta);
  return std::log(beta / kFourPi) - 1.5 * std::log(q);
}

inline double schladitz_density(const UnitVector& y, const UnitVector& mu, double beta) {
  KernelSpec::check_lambda(KernelFamily::Schladitz, beta);
  const double q = schladitz_quadratic_form(mu.dot(y), beta);
  return beta / (kFourPi * q * std::sqrt(q));
}

inline double kernel_density(const KernelSpec& spec, const UnitVector& y, const UnitVector& mu) {
  return spec.family() == KernelFamily::VonMisesFisher ? vmf_density(y, mu, spec.lambda())
                                                       : schladitz_density(y, mu, spec.lambda());
}

inline double kernel_log_density(const KernelSpec& spec, const UnitVector& y, const UnitVector& mu) {
  return spec.family() == KernelFamily::VonMisesFisher ? vmf_log_density(y, mu, spec.lambda())
                                                       : schladitz_log_density(y, mu, spec.lambda());
}

/// Precomputed constants for evaluating k(y | x) as a function of the
/// cosine t = x'y. Used by the inner loops.
class KernelEvaluator {
 public:
  explicit KernelEvaluator(const KernelSpec& spec) : family_(spec.family()), lambda_(spec.lambda()) {
    if (family_ == KernelFamily::VonMisesFisher) {
      uniform_ = lambda_ < detail::kSmallKappa;
      // C(kappa) exp(kappa t) = scale * exp(kappa (t - 1))
      scale_ = uniform_ ? 1.0 / kFourPi : lambda_ / (kTwoPi * -std::expm1(-2.0 * lambda_));
    } else {
      scale_ = lambda_ / kFourPi;
      shrink_ = 1.0 - lambda_ * lambda_;
    }
  }

  double operator()(double t) const {
    if (family_ == KernelFamily::VonMisesFisher) {
      return uniform_ ? scale_ : scale_ * std::exp(lambda_ * (t - 1.0));
    }
    const double q = 1.0 - shrink_ * t * t;
    return scale_ / (q * std::sqrt(q));
  }

  /// out[i] = k(y | node i). Use a buffer from aligned storage (e.g.
  /// Eigen::ArrayXd) so results do not depend on the allocation.
  void row(const UnitVector& y, const SphereGrid& grid, std::span<double> out) const {
    using Arr = Eigen::Map<const Eigen::ArrayXd>;
    const auto n = static_cast<Eigen::Index>(grid.size());
    const Arr gx(grid.x().data(), n), gy(grid.y().data(), n), gz(grid.z().data(), n);
    Eigen::Map<Eigen::ArrayXd> o(out.data(), n);
    if (family_ == KernelFamily::VonMisesFisher) {
      if (uniform_) {
        o.setConstant(scale_);
        return;
      }
      o = lambda_ * (gx * y.x1() + gy * y.x2() + gz * y.x3() - 1.0);
      // the vectorized exp saturates near the smallest normal instead of
      // returning 0
      o = (o < kExpFloor).select(0.0, scale_ * o.exp());
    } else {
      o = gx * y.x1() + gy * y.x2() + gz * y.x3();
      o = 1.0 - shrink_ * o.square();
      o = scale_ / (o * o.sqrt());
    }
  }

 private:
  static constexpr double kExpFloor = -708.0;

  KernelFamily family_;
  double lambda_;
  double scale_ = 0.0;
  double shrink_ = 0.0;
  bool uniform_ = false;
};

/// Element i is k(y | x_i) with x_i the i-th grid node.
inline std::vector<double> kernel_row(const KernelSpec& spec, const UnitVector& y, const SphereGrid& grid) {
  Eigen::ArrayXd buf(static_cast<Eigen::Index>(grid.size()));
  KernelEvaluator(spec).row(y, grid, std::span<double>(buf.data(), grid.size()));
  return std::vector<double>(buf.begin(), buf.end());
}

/// Upper bound on {k(y|x1)/k(y|x2)}^2 over all y, x1, x2 for a fixed
/// structural parameter: exp(4 kappa) for vMF, max(beta, 1/beta)^6 for
/// Schladitz.
inline double squared_ratio_bound(const KernelSpec& spec) {
  if (spec.family() == KernelFamily::VonMisesFisher) return std::exp(4.0 * spec.lambda());
  const double b = spec.lambda() < 1.0 ? 1.0 / spec.lambda() : spec.lambda();
  return std::pow(b, 6.0);
}

}  // namespace sphpr
