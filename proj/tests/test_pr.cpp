#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sphpr/pr.hpp"
#include "sphpr/simulation.hpp"

using namespace sphpr;

namespace {

std::vector<UnitVector> vmf_data(std::size_t n, double kappa, std::uint64_t seed) {
  Rng rng(seed);
  return sample_vmf(UnitVector(0.3, 0.2, 0.9), kappa, n, rng);
}

}  // namespace

TEST(Weights, ScheduleValues) {
  EXPECT_NEAR(weight(1, 2.0 / 3.0), std::pow(2.0, -2.0 / 3.0), 1e-15);
  EXPECT_NEAR(weight(9, 1.0), 0.1, 1e-15);
  EXPECT_THROW(weight(1, 0.5), std::invalid_argument);
  EXPECT_THROW(weight(1, 1.2), std::invalid_argument);
  EXPECT_THROW(weight(0, 0.7), std::invalid_argument);
  EXPECT_NEAR(WeightSchedule()(3), std::pow(4.0, -2.0 / 3.0), 1e-15);
}

TEST(PRSweep, OneStepMatchesClosedForm) {
  for (const KernelSpec& spec : {KernelSpec(KernelFamily::VonMisesFisher, 5.0), KernelSpec(KernelFamily::Schladitz, 0.3)}) {
    const SphereGrid g = support_grid(spec.family(), GridDims{12, 24});
    const auto psi0 = MixingDensityGrid::uniform(g);
    const std::vector<UnitVector> y{UnitVector(0.2, -0.4, 0.7)};
    const auto est = pr_sweep(y, spec, psi0, WeightSchedule());

    double f0 = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) f0 += kernel_density(spec, y[0], g.node(j)) * psi0[j] * g.weights()[j];
    const double w1 = std::pow(2.0, -2.0 / 3.0);
    std::vector<double> expect(g.size());
    double mass = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      expect[j] = psi0[j] * ((1.0 - w1) + w1 * kernel_density(spec, y[0], g.node(j)) / f0);
      mass += expect[j] * g.weights()[j];
    }
    for (std::size_t j = 0; j < g.size(); ++j) {
      EXPECT_NEAR(est.psi[j], expect[j] / mass, 1e-12 * expect[j]);
    }
    EXPECT_NEAR(est.log_marginal, std::log(f0), 1e-12);
  }
}

TEST(PRSweep, IteratesStayPositiveAndNormalized) {
  const auto data = vmf_data(500, 10.0, 3);
  const KernelSpec spec(KernelFamily::VonMisesFisher, 10.0);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(spec.family()));
  double worst = 0.0;
  bool positive = true;
  pr_sweep(data, spec, psi0, WeightSchedule(), [&](std::size_t, std::span<const double> psi) {
    double m = 0.0;
    for (std::size_t j = 0; j < psi.size(); ++j) {
      positive = positive && psi[j] > 0.0;
      m += psi[j] * psi0.grid().weights()[j];
    }
    worst = std::max(worst, std::abs(m - 1.0));
  });
  EXPECT_TRUE(positive);
  EXPECT_LT(worst, 1e-10);
}

TEST(PRSweep, FirstPredictiveIsUniformDensity) {
  const auto data = vmf_data(1, 10.0, 5);
  for (double k : {0.5, 10.0, 100.0}) {
    const KernelSpec spec(KernelFamily::VonMisesFisher, k);
    const auto est = pr_sweep(data, spec, MixingDensityGrid::uniform(support_grid(spec.family())), WeightSchedule());
    EXPECT_NEAR(est.log_marginal, std::log(1.0 / kFourPi), 2e-3) << k;
  }
}

TEST(PRSweep, EmptyDataGivesZeroLogMarginal) {
  const KernelSpec spec(KernelFamily::VonMisesFisher, 3.0);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(spec.family(), GridDims{6, 12}));
  const auto est = pr_sweep(std::vector<UnitVector>{}, spec, psi0, WeightSchedule());
  EXPECT_EQ(est.log_marginal, 0.0);
}

TEST(PRSweep, VanishingPredictiveRaisesNumericalError) {
  // Mass sits on the north-pole row only; the far tail of the kernel is
  // exactly zero.
  const SphereGrid g = support_grid(KernelFamily::VonMisesFisher, GridDims{30, 60});
  std::vector<double> v(g.size(), 0.0);
  for (std::size_t j = 0; j < 60; ++j) v[j] = 1.0;
  const auto psi0 = MixingDensityGrid::normalized(g, v);
  const std::vector<UnitVector> y{UnitVector(0, 0, -1)};
  try {
    pr_sweep(y, KernelSpec(KernelFamily::VonMisesFisher, 500.0), psi0, WeightSchedule());
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(PRSweep, PredictiveDensitiesSumToLogMarginal) {
  const auto data = vmf_data(200, 8.0, 11);
  const KernelSpec spec(KernelFamily::VonMisesFisher, 8.0);
  const auto est = permutation_average(data, spec, MixingDensityGrid::uniform(support_grid(spec.family(), GridDims{20, 40})),
                                       WeightSchedule(), 4, 9);
  double s = 0.0;
  for (double v : est.predictive_log_densities) s += v;
  EXPECT_NEAR(s, est.log_marginal, 1e-9 * std::abs(s));
}

TEST(Permutations, IdentityFirstAndSeeded) {
  const auto p0 = permutation_order(10, 42, 0);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(p0[i], i);
  EXPECT_EQ(permutation_order(50, 42, 3), permutation_order(50, 42, 3));
  EXPECT_NE(permutation_order(50, 42, 3), permutation_order(50, 43, 3));
}

TEST(Permutations, SinglePermutationEqualsSweep) {
  const auto data = vmf_data(100, 6.0, 2);
  const KernelSpec spec(KernelFamily::VonMisesFisher, 6.0);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(spec.family(), GridDims{16, 32}));
  const auto a = permutation_average(data, spec, psi0, WeightSchedule(), 1, 77);
  const auto b = pr_sweep(data, spec, psi0, WeightSchedule());
  EXPECT_EQ(a.log_marginal, b.log_marginal);
  for (std::size_t j = 0; j < psi0.grid().size(); ++j) EXPECT_EQ(a.psi[j], b.psi[j]);
}

TEST(Permutations, ThreadCountDoesNotChangeResult) {
  const auto data = vmf_data(150, 6.0, 4);
  const KernelSpec spec(KernelFamily::Schladitz, 0.3);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(spec.family(), GridDims{10, 40}));
  const auto a = permutation_average(data, spec, psi0, WeightSchedule(), 6, 5, 1);
  const auto b = permutation_average(data, spec, psi0, WeightSchedule(), 6, 5, 3);
  EXPECT_EQ(a.log_marginal, b.log_marginal);
  for (std::size_t j = 0; j < psi0.grid().size(); ++j) EXPECT_EQ(a.psi[j], b.psi[j]);
}

TEST(MixtureDensity, GridEvaluationMatchesScalarAndIntegrates) {
  const auto data = vmf_data(300, 10.0, 8);
  const KernelSpec spec(KernelFamily::VonMisesFisher, 10.0);
  const auto est = pr_sweep(data, spec, MixingDensityGrid::uniform(support_grid(spec.family())), WeightSchedule());
  const SphereGrid at = build_grid(kPi, 60, 120);
  const auto f = mixture_density_on(est.psi, spec, at, 2);
  for (std::size_t i = 0; i < at.size(); i += 97) {
    EXPECT_NEAR(f[i], mixture_density(est.psi, spec, at.node(i)), 1e-12 * f[i] + 1e-300);
  }
  EXPECT_NEAR(quadrature(at, f), 1.0, 2e-3);
}
