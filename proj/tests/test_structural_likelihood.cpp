#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sphpr/simulation.hpp"
#include "sphpr/structural_likelihood.hpp"

using namespace sphpr;

TEST(GoldenSection, FindsInteriorMaximum) {
  const auto f = [](double x) { return -std::pow(std::log(x) - std::log(7.0), 2); };
  const auto c = golden_section_maximize(f, ParamRange{0.1, 500.0});
  EXPECT_NEAR(c.argmax, 7.0, 7.0 * 2e-3);
  EXPECT_FALSE(c.boundary);
  EXPECT_LE(c.lambdas.size(), 40u);
  for (double v : c.log_liks) EXPECT_LE(v, c.argmax_log_lik);
}

TEST(GoldenSection, FlagsBoundary) {
  const auto c = golden_section_maximize([](double x) { return x; }, ParamRange{0.01, 0.99});
  EXPECT_TRUE(c.boundary);
  EXPECT_NEAR(c.argmax, 0.99, 1e-12);
}

TEST(GoldenSection, RejectsBadConfig) {
  EXPECT_THROW(golden_section_maximize([](double) { return 0.0; }, ParamRange{2.0, 1.0}), std::invalid_argument);
  SearchConfig s;
  s.budget = 4;
  EXPECT_THROW(golden_section_maximize([](double) { return 0.0; }, ParamRange{1.0, 2.0}, s), std::invalid_argument);
}

TEST(MarginalLikelihood, EmptyAndSinglePoint) {
  const KernelSpec spec(KernelFamily::VonMisesFisher, 4.0);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(spec.family()));
  EXPECT_EQ(pr_marginal_loglik(std::vector<UnitVector>{}, spec, psi0, WeightSchedule(), 1, 1), 0.0);
  const std::vector<UnitVector> one{UnitVector(0.1, 0.2, 0.3)};
  EXPECT_NEAR(pr_marginal_loglik(one, spec, psi0, WeightSchedule(), 1, 1), -std::log(kFourPi), 2e-3);
  EXPECT_THROW(pr_marginal_loglik(one, KernelSpec(KernelFamily::VonMisesFisher, 900.0), psi0, WeightSchedule(), 1, 1),
               std::invalid_argument);
}

TEST(MarginalLikelihood, MatchesPermutationAverageAndIsDeterministic) {
  Rng rng(12);
  const auto data = sample_vmf(UnitVector(0, 1, 1), 10.0, 150, rng);
  const KernelSpec spec(KernelFamily::VonMisesFisher, 9.0);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(spec.family(), GridDims{20, 40}));
  const double a = pr_marginal_loglik(data, spec, psi0, WeightSchedule(), 3, 21);
  const double b = permutation_average(data, spec, psi0, WeightSchedule(), 3, 21).log_marginal;
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, pr_marginal_loglik(data, spec, psi0, WeightSchedule(), 3, 21));
}

TEST(MarginalLikelihood, RecoversKappaOnTwoPointMixture) {
  const auto cfg = presets::find("vmf", "1");
  Rng rng(31);
  const auto data = sample_mixture(KernelSpec(KernelFamily::VonMisesFisher, 10.0), cfg.mixing, 2000, rng);
  const KernelSpec start(KernelFamily::VonMisesFisher, 1.0);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(start.family()));
  const auto c = maximize_marginal(data, start, psi0, WeightSchedule());
  EXPECT_GE(c.argmax, 7.0);
  EXPECT_LE(c.argmax, 13.0);
  EXPECT_FALSE(c.boundary);
}

TEST(MarginalLikelihood, RecoversBetaOnSchladitzData) {
  Rng rng(32);
  const auto data = sample_schladitz(UnitVector(0.2, 0.1, 0.9), 0.1, 2000, rng);
  const KernelSpec start(KernelFamily::Schladitz, 0.5);
  const auto psi0 = MixingDensityGrid::uniform(support_grid(start.family()));
  const auto c = maximize_marginal(data, start, psi0, WeightSchedule());
  EXPECT_GE(c.argmax, 0.05);
  EXPECT_LE(c.argmax, 0.2);
}
