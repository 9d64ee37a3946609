#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "sphpr/simulation.hpp"

using namespace sphpr;

namespace {

Eigen::Vector3d resultant(const std::vector<UnitVector>& v) {
  Eigen::Vector3d s = Eigen::Vector3d::Zero();
  for (const auto& y : v) s += y.vec();
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(SampleVmf, NearUniformAtSmallKappa) {
  Rng rng(1);
  const auto v = sample_vmf(UnitVector(0, 0, 1), 1e-9, 20000, rng);
  EXPECT_LT(resultant(v).norm(), 0.03);
}

TEST(SampleVmf, MeanDirectionAndCosine) {
  Rng rng(2);
  const UnitVector mu(-0.3, 0.5, 0.2);
  const auto v = sample_vmf(mu, 10.0, 20000, rng);
  const Eigen::Vector3d r = resultant(v);
  EXPECT_LT(std::acos(r.normalized().dot(mu.vec())) * 180.0 / kPi, 2.0);
  // E[mu'Y] = coth(kappa) - 1/kappa
  EXPECT_NEAR(r.dot(mu.vec()), 1.0 / std::tanh(10.0) - 0.1, 0.01);
}

TEST(SampleSchladitz, UniformAtBetaOne) {
  Rng rng(3);
  const auto v = sample_schladitz(UnitVector(0, 0, 1), 1.0 - 1e-12, 20000, rng);
  double z2 = 0.0;
  for (const auto& y : v) z2 += y.x3() * y.x3();
  EXPECT_LT(resultant(v).norm(), 0.03);
  EXPECT_NEAR(z2 / 20000.0, 1.0 / 3.0, 0.01);
}

TEST(SampleSchladitz, ConcentratesNearAxisForSmallBeta) {
  Rng rng(4);
  const UnitVector mu(0, 1, 0);
  const auto v = sample_schladitz(mu, 0.1, 20000, rng);
  double mean_t2 = 0.0;
  for (const auto& y : v) mean_t2 += std::pow(mu.dot(y), 2);
  mean_t2 /= 20000.0;
  // Monte Carlo oracle from the density itself.
  const SphereGrid g = build_grid(kPi, 400, 2);
  double num = 0.0, den = 0.0;
  const KernelSpec k(KernelFamily::Schladitz, 0.1);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = std::cos(g.theta()[i]);
    const double f = kernel_density(k, UnitVector(0, 0, 1), g.node(i));
    num += g.weights()[i] * f * t * t;
    den += g.weights()[i] * f;
  }
  EXPECT_NEAR(mean_t2, num / den, 0.01);
}

TEST(SampleMixing, TwoPointProportion) {
  Rng rng(5);
  const TwoPointDiscrete tp{SphericalCoord(kPi / 2, 0.0), SphericalCoord(0.0, 0.0), 0.25};
  const auto v = sample_mixing(tp, 20000, rng);
  std::size_t first = 0;
  for (const auto& c : v) first += c.theta > 1.0 ? 1 : 0;
  EXPECT_NEAR(first / 20000.0, 0.25, 0.01);
}

TEST(SampleMixing, BetaThetaMean) {
  Rng rng(6);
  const auto spec = presets::find("schladitz", "3").mixing;
  const auto v = sample_mixing(spec, 20000, rng);
  double m = 0.0;
  for (const auto& c : v) {
    m += c.theta;
    EXPECT_LE(c.theta, kPi / 2);
  }
  EXPECT_NEAR(m / 20000.0, (kPi / 2) * (2.0 / 7.0), 0.01);
}

TEST(SampleMixing, TruncatedNormalStaysInBounds) {
  Rng rng(7);
  const auto spec = presets::find("vmf", "2").mixing;
  for (const auto& c : sample_mixing(spec, 5000, rng)) {
    EXPECT_GE(c.theta, 0.0);
    EXPECT_LE(c.theta, kPi);
    EXPECT_GE(c.phi, 0.0);
    EXPECT_LE(c.phi, kTwoPi);
  }
}

TEST(SampleMixing, RejectsInvalidSpecs) {
  Rng rng(8);
  EXPECT_THROW(sample_mixing(TwoPointDiscrete{{}, {}, 1.5}, 1, rng), std::invalid_argument);
  EXPECT_THROW(sample_mixing(BetaProduct{-1.0, 1.0, 1.0, 1.0, {}}, 1, rng), std::invalid_argument);
}

TEST(SampleMixing, PathologicalTruncationRejected) {
  Rng rng(9);
  TruncatedNormal2 t{Eigen::Vector2d(20.0, 20.0), Eigen::Matrix2d::Identity() * 0.01, RectBounds{}};
  EXPECT_THROW(sample_mixing(t, 10, rng), std::invalid_argument);
}

TEST(RectangleDensityTest, IntegratesToOne) {
  for (const auto& c : presets::vmf_cases()) {
    if (is_discrete(c.mixing)) continue;
    const RectangleDensity d(c.mixing);
    const std::size_t n = 400;
    const double dt = kPi / n, dp = kTwoPi / n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s += d((i + 0.5) * dt, (j + 0.5) * dp) * dt * dp;
    EXPECT_NEAR(s, 1.0, 5e-3) << c.name;
  }
}

TEST(Kl, UniformAgainstVmf) {
  const SphereGrid g = build_grid(kPi, 60, 120);
  const KernelSpec k(KernelFamily::VonMisesFisher, 2.0);
  std::vector<double> u(g.size(), 1.0 / kFourPi), f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) f[i] = kernel_density(k, g.node(i), UnitVector(0, 0, 1));
  // KL(u || vMF(2)) = -log(4 pi) - log C(2)
  const double expect = -std::log(kFourPi) - vmf_log_normalizer(2.0);
  EXPECT_NEAR(kl_mixture(u, f, g), expect, 5e-3);
  EXPECT_NEAR(kl_mixture(u, u, g), 0.0, 1e-12);
  EXPECT_GT(std::abs(kl_mixture(f, u, g) - kl_mixture(u, f, g)), 1e-3);
}

TEST(Kl, RejectsZeroEstimate) {
  const SphereGrid g = build_grid(kPi, 4, 8);
  std::vector<double> u(g.size(), 1.0 / kFourPi), z(g.size(), 0.0);
  EXPECT_THROW(kl_mixture(u, z, g), NumericalError);
}

TEST(L1, Basics) {
  const std::vector<double> a{0.5, 0.5, 0.0}, b{0.0, 0.0, 1.0}, c{0.2, 0.3, 0.5};
  EXPECT_EQ(mixing_l1_distance(a, a), 0.0);
  EXPECT_NEAR(mixing_l1_distance(a, b), 2.0, 1e-15);
  EXPECT_NEAR(mixing_l1_distance(a, c), 0.3 + 0.2 + 0.5, 1e-15);
  const std::vector<double> bad{0.5, 0.4, 0.0};
  EXPECT_THROW(mixing_l1_distance(a, bad), std::invalid_argument);
}

TEST(PartitionTest, CellCounts) {
  EXPECT_EQ(Partition(KernelFamily::VonMisesFisher, PartitionSpec{}).size(), 82u);
  // equator band pairs sector c with c + 5 on the hemisphere
  EXPECT_EQ(Partition(KernelFamily::Schladitz, PartitionSpec{}).size(), 86u);
}

TEST(PartitionTest, AxialCellsIgnoreSign) {
  const Partition p(KernelFamily::Schladitz, presets::table_partition());
  Rng rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const UnitVector y(n(rng), n(rng), n(rng));
    EXPECT_EQ(p.cell(y), p.cell(-y));
  }
  EXPECT_EQ(p.cell(UnitVector(1, 0, 0)), p.cell(UnitVector(-1, 0, 0)));
}

TEST(PartitionTest, GridMassesMatchBruteForce) {
  const Partition p(KernelFamily::VonMisesFisher, presets::table_partition());
  const SphereGrid g = build_grid(kPi, 30, 60);
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) v[i] = 1.0 + g.x()[i];
  const auto psi = MixingDensityGrid::normalized(g, v);
  const auto m = p.masses_from_grid(psi);
  EXPECT_NEAR(std::accumulate(m.begin(), m.end(), 0.0), 1.0, 1e-12);
  std::vector<double> brute(p.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) brute[p.cell(g.node(i))] += psi[i] * g.weights()[i];
  EXPECT_EQ(m, brute);
}

TEST(PartitionTest, TwoPointAtomsFallInDistinctCells) {
  const Partition p(KernelFamily::VonMisesFisher, presets::table_partition());
  const auto a = spherical_to_cartesian(SphericalCoord(kPi / 2, 0.0));
  const auto b = spherical_to_cartesian(SphericalCoord(kPi / 2, kPi / 2));
  EXPECT_NE(p.cell(a), p.cell(b));
  // a tiny perturbation must not move an atom across a cell boundary
  EXPECT_EQ(p.cell(a), p.cell(spherical_to_cartesian(SphericalCoord(kPi / 2 + 1e-9, -1e-9))));
}

TEST(TruthModelTest, DensityIntegratesToOne) {
  const SphereGrid g = build_grid(kPi, 90, 180);
  for (const auto& c : {presets::find("vmf", "1"), presets::find("vmf", "4"), presets::find("schladitz", "3")}) {
    const TruthModel t(KernelSpec(c.family, c.true_lambda), c.mixing);
    const auto f = t.density_on(g);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += f[i] * g.weights()[i];
    EXPECT_NEAR(s, 1.0, 5e-3) << c.name;
    const auto m = t.cell_masses(Partition(c.family, c.partition));
    EXPECT_NEAR(std::accumulate(m.begin(), m.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(Summarize, MeanAndStandardError) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-14);
}

namespace {

ExperimentConfig small_experiment() {
  ExperimentConfig c = presets::find("vmf", "1");
  c.n = 200;
  c.replications = 2;
  c.n_perms = 2;
  c.em.j_max = 2;
  c.em.restarts = 1;
  c.pr_grid = GridDims{20, 40};
  c.kl_grid = GridDims{30, 60};
  return c;
}

}  // namespace

TEST(RunExperiment, DeterministicAndThreadInvariant) {
  ExperimentConfig c = small_experiment();
  const auto a = run_experiment(c);
  c.threads = 2;
  const auto b = run_experiment(c);
  ASSERT_EQ(a.failures, 0u);
  for (std::size_t k = 0; k < a.reps.size(); ++k) {
    EXPECT_EQ(a.reps[k].kl_pr, b.reps[k].kl_pr);
    EXPECT_EQ(a.reps[k].d_ml, b.reps[k].d_ml);
    EXPECT_EQ(a.reps[k].lambda_hat, b.reps[k].lambda_hat);
  }
  EXPECT_GT(a.kl_pr.mean, 0.0);
  EXPECT_GE(a.d_pr.mean, 0.0);
  EXPECT_LE(a.d_pr.mean, 2.0);
}

TEST(RunExperiment, ReplicationsUseDifferentData) {
  const ExperimentConfig c = small_experiment();
  const auto a = replication_data(c, 0), b = replication_data(c, 1);
  EXPECT_NE(a[0].vec(), b[0].vec());
  EXPECT_EQ(replication_data(c, 0)[5].vec(), a[5].vec());
}
