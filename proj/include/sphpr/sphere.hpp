#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sphpr {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kFourPi = 4.0 * std::numbers::pi;

/// Raised when a numerical procedure cannot produce a meaningful value
/// (collapsed density, underflow, no interior maximum).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point on the unit sphere S^2. Construction normalizes the input, so
/// the stored components always have unit norm to rounding.
class UnitVector {
 public:
  UnitVector() : v_(0.0, 0.0, 1.0) {}
  UnitVector(double x1, double x2, double x3) : UnitVector(Eigen::Vector3d(x1, x2, x3)) {}
  explicit UnitVector(const Eigen::Vector3d& v) {
    const double norm = v.norm();
    if (!std::isfinite(norm) || norm == 0.0) {
      throw std::invalid_argument("UnitVector: vector must be finite and nonzero");
    }
    v_ = v / norm;
  }

  double x1() const { return v_[0]; }
  double x2() const { return v_[1]; }
  double x3() const { return v_[2]; }
  const Eigen::Vector3d& vec() const { return v_; }

  double dot(const UnitVector& other) const { return v_.dot(other.v_); }
  UnitVector operator-() const { return UnitVector(Unchecked{}, -v_); }

  friend bool operator==(const UnitVector& a, const UnitVector& b) { return a.v_ == b.v_; }

 private:
  struct Unchecked {};
  UnitVector(Unchecked, const Eigen::Vector3d& v) : v_(v) {}

  Eigen::Vector3d v_;
};

/// Polar angle theta in [0, pi] and azimuth phi in [0, 2 pi), ISO convention.
struct SphericalCoord {
  double theta = 0.0;
  double phi = 0.0;

  SphericalCoord() = default;
  SphericalCoord(double theta_in, double phi_in) : theta(theta_in), phi(phi_in) {
    if (!(theta >= 0.0 && theta <= kPi)) {
      throw std::invalid_argument("SphericalCoord: theta must lie in [0, pi]");
    }
    if (!std::isfinite(phi)) throw std::invalid_argument("SphericalCoord: phi must be finite");
    phi = std::fmod(phi, kTwoPi);
    if (phi < 0.0) phi += kTwoPi;
    if (phi >= kTwoPi) phi = 0.0;
  }
};

inline UnitVector spherical_to_cartesian(const SphericalCoord& c) {
  const double st = std::sin(c.theta);
  return UnitVector(st * std::cos(c.phi), st * std::sin(c.phi), std::cos(c.theta));
}

/// Inverse of spherical_to_cartesian. At the poles phi is reported as 0.
inline SphericalCoord cartesian_to_spherical(const UnitVector& v) {
  const double x3 = std::clamp(v.x3(), -1.0, 1.0);
  const double theta = std::acos(x3);
  if (v.x1() == 0.0 && v.x2() == 0.0) return SphericalCoord(theta, 0.0);
  double phi = std::atan2(v.x2(), v.x1());
  if (phi < 0.0) phi += kTwoPi;
  return SphericalCoord(theta, phi);
}

/// Rotation matrix taking (0,0,1) onto mu, built from the spherical
/// coordinates (theta0, phi0) of mu.
inline Eigen::Matrix3d rotation_to(const UnitVector& mu) {
  const SphericalCoord c = cartesian_to_spherical(mu);
  const double ct = std::cos(c.theta), st = std::sin(c.theta);
  const double cp = std::cos(c.phi), sp = std::sin(c.phi);
  Eigen::Matrix3d q;
  q << ct * cp, -sp, st * cp,
       ct * sp, cp, st * sp,
       -st, 0.0, ct;
  return q;
}

/// Midpoint-rule latitude/longitude grid over [0, theta_max] x [0, 2 pi).
/// Node i = it * n_phi + ip sits at the cell centre; its weight is
/// sin(theta) * dtheta * dphi. Copies share the immutable node storage.
class SphereGrid {
 public:
  SphereGrid(double theta_max, std::size_t n_theta, std::size_t n_phi) {
    if (n_theta < 1 || n_phi < 1) {
      throw std::invalid_argument("SphereGrid: cell counts must be positive");
    }
    if (!(theta_max > 0.0 && theta_max <= kPi)) {
      throw std::invalid_argument("SphereGrid: theta_max must lie in (0, pi]");
    }
    auto d = std::make_shared<Data>();
    d->theta_max = theta_max;
    d->n_theta = n_theta;
    d->n_phi = n_phi;
    d->dtheta = theta_max / static_cast<double>(n_theta);
    d->dphi = kTwoPi / static_cast<double>(n_phi);
    const std::size_t n = n_theta * n_phi;
    d->theta.resize(n);
    d->phi.resize(n);
    d->weight.resize(n);
    d->x.resize(n);
    d->y.resize(n);
    d->z.resize(n);
    for (std::size_t it = 0; it < n_theta; ++it) {
      const double th = (static_cast<double>(it) + 0.5) * d->dtheta;
      const double st = std::sin(th), ct = std::cos(th);
      for (std::size_t ip = 0; ip < n_phi; ++ip) {
        const double ph = (static_cast<double>(ip) + 0.5) * d->dphi;
        const std::size_t i = it * n_phi + ip;
        d->theta[i] = th;
        d->phi[i] = ph;
        d->weight[i] = st * d->dtheta * d->dphi;
        d->x[i] = st * std::cos(ph);
        d->y[i] = st * std::sin(ph);
        d->z[i] = ct;
      }
    }
    data_ = std::move(d);
  }

  double theta_max() const { return data_->theta_max; }
  std::size_t n_theta() const { return data_->n_theta; }
  std::size_t n_phi() const { return data_->n_phi; }
  std::size_t size() const { return data_->theta.size(); }
  double dtheta() const { return data_->dtheta; }
  double dphi() const { return data_->dphi; }

  std::span<const double> theta() const { return data_->theta; }
  std::span<const double> phi() const { return data_->phi; }
  std::span<const double> weights() const { return data_->weight; }
  std::span<const double> x() const { return data_->x; }
  std::span<const double> y() const { return data_->y; }
  std::span<const double> z() const { return data_->z; }

  UnitVector node(std::size_t i) const { return UnitVector(data_->x[i], data_->y[i], data_->z[i]); }
  SphericalCoord node_coord(std::size_t i) const { return SphericalCoord(data_->theta[i], data_->phi[i]); }

  /// Analytic area of the covered (theta, phi) region.
  double area() const { return kTwoPi * (1.0 - std::cos(data_->theta_max)); }

  bool same_layout(const SphereGrid& o) const {
    return data_ == o.data_ || (theta_max() == o.theta_max() && n_theta() == o.n_theta() &&
                                n_phi() == o.n_phi());
  }

 private:
  struct Data {
    double theta_max = kPi;
    std::size_t n_theta = 0, n_phi = 0;
    double dtheta = 0.0, dphi = 0.0;
    std::vector<double> theta, phi, weight, x, y, z;
  };
  std::shared_ptr<const Data> data_;
};

inline SphereGrid build_grid(double theta_max, std::size_t n_theta, std::size_t n_phi) {
  if (n_theta < 2 || n_phi < 2) {
    throw std::invalid_argument("build_grid: n_theta and n_phi must be at least 2");
  }
  return SphereGrid(theta_max, n_theta, n_phi);
}

/// Sum of values[i] * weight[i].
inline double quadrature(const SphereGrid& grid, std::span<const double> values) {
  if (values.size() != grid.size()) {
    throw std::invalid_argument("quadrature: expected " + std::to_string(grid.size()) +
                                " values, got " + std::to_string(values.size()));
  }
  const auto w = grid.weights();
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * w[i];
  return s;
}

/// Density (with respect to surface measure) tabulated at the nodes of a
/// grid and normalized under that grid's quadrature rule.
class MixingDensityGrid {
 public:
  static constexpr double kNormTolerance = 1e-9;

  MixingDensityGrid(SphereGrid grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
      throw std::invalid_argument("MixingDensityGrid: value count does not match grid");
    }
    for (double v : values_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("MixingDensityGrid: values must be finite and nonnegative");
      }
    }
    const double mass = quadrature(grid_, values_);
    if (std::abs(mass - 1.0) > kNormTolerance) {
      throw std::invalid_argument("MixingDensityGrid: density integrates to " +
                                  std::to_string(mass) + ", expected 1");
    }
  }

  /// Rescales arbitrary nonnegative values to unit mass first.
  static MixingDensityGrid normalized(SphereGrid grid, std::vector<double> values) {
    const double mass = quadrature(grid, values);
    if (!(mass > 0.0) || !std::isfinite(mass)) {
      throw NumericalError("MixingDensityGrid: cannot normalize a density with zero mass");
    }
    for (double& v : values) v /= mass;
    return MixingDensityGrid(std::move(grid), std::move(values));
  }

  static MixingDensityGrid uniform(const SphereGrid& grid) {
    return MixingDensityGrid(grid, std::vector<double>(grid.size(), 1.0 / quadrature_of_one(grid)));
  }

  const SphereGrid& grid() const { return grid_; }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Density on the (theta, phi) rectangle: psi(x) * sin(theta).
  std::vector<double> rectangle_density() const {
    std::vector<double> out(values_.size());
    const auto th = grid_.theta();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = values_[i] * std::sin(th[i]);
    return out;
  }

 private:
  static double quadrature_of_one(const SphereGrid& grid) {
    double s = 0.0;
    for (double w : grid.weights()) s += w;
    return s;
  }

  SphereGrid grid_;
  std::vector<double> values_;
};

/// CSV with columns theta,phi,weight,value; one row per node.
inline void write_grid_csv(std::ostream& os, const SphereGrid& grid, std::span<const double> values) {
  if (values.size() != grid.size()) throw std::invalid_argument("write_grid_csv: size mismatch");
  os << "theta,phi,weight,value\n";
  os.precision(17);
  const auto th = grid.theta(), ph = grid.phi(), w = grid.weights();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    os << th[i] << ',' << ph[i] << ',' << w[i] << ',' << values[i] << '\n';
  }
}

}  // namespace sphpr
