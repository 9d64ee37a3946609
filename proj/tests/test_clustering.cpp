#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sphpr/clustering.hpp"
#include "sphpr/simulation.hpp"

using namespace sphpr;

namespace {

MixingDensityGrid bumps(const SphereGrid& g, const std::vector<UnitVector>& centres, const std::vector<double>& heights,
                        double conc = 20.0) {
  std::vector<double> v(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t k = 0; k < centres.size(); ++k) v[i] += heights[k] * std::exp(conc * (centres[k].dot(g.node(i)) - 1.0));
    v[i] += 1e-6;
  }
  return MixingDensityGrid::normalized(g, std::move(v));
}

}  // namespace

TEST(FindModes, SingleBump) {
  const SphereGrid g = build_grid(kPi, 60, 120);
  const UnitVector c(0.3, 0.3, 0.9);
  const auto m = find_modes(bumps(g, {c}, {1.0}));
  ASSERT_EQ(m.modes.size(), 1u);
  EXPECT_GT(m.modes[0].dot(c), std::cos(4.0 * kPi / 180.0));
  EXPECT_NEAR(m.mode_masses[0], 1.0, 1e-12);
}

TEST(FindModes, UniformHasNoMode) {
  const SphereGrid g = build_grid(kPi, 20, 40);
  EXPECT_THROW(find_modes(MixingDensityGrid::uniform(g)), NumericalError);
  EXPECT_THROW(find_modes(MixingDensityGrid::uniform(g), 1.5), std::invalid_argument);
}

TEST(FindModes, TwoBumpsOrderedByHeight) {
  const SphereGrid g = build_grid(kPi, 60, 120);
  const UnitVector a(1, 0, 0.1), b(-0.2, 1, 0.3);
  const auto m = find_modes(bumps(g, {a, b}, {0.5, 1.0}));
  ASSERT_EQ(m.modes.size(), 2u);
  EXPECT_GT(m.modes[0].dot(b), 0.99);
  EXPECT_GT(m.modes[1].dot(a), 0.99);
  EXPECT_NEAR(m.mode_masses[0] + m.mode_masses[1], 1.0, 1e-12);
  EXPECT_GT(m.mode_masses[0], m.mode_masses[1]);
}

TEST(FindModes, ThresholdDropsSmallBump) {
  const SphereGrid g = build_grid(kPi, 60, 120);
  const auto m = find_modes(bumps(g, {UnitVector(1, 0, 0), UnitVector(0, 0, 1)}, {1.0, 0.1}), 0.2);
  EXPECT_EQ(m.modes.size(), 1u);
}

TEST(FindModes, PhiSeamWraps) {
  const SphereGrid g = build_grid(kPi, 30, 60);
  // a bump centred on phi = 0 straddles the seam
  const auto m = find_modes(bumps(g, {UnitVector(1, 0, 0)}, {1.0}));
  EXPECT_EQ(m.modes.size(), 1u);
}

TEST(AssignClusters, RecoversSeparatedGroups) {
  Rng rng(31);
  const UnitVector a(0, 0, 1), b(1, 0, 0);
  auto data = sample_vmf(a, 10.0, 500, rng);
  const auto db = sample_vmf(b, 10.0, 500, rng);
  data.insert(data.end(), db.begin(), db.end());
  const KernelSpec k(KernelFamily::VonMisesFisher, 10.0);
  const SphereGrid g = support_grid(KernelFamily::VonMisesFisher, default_grid_dims(KernelFamily::VonMisesFisher));
  const auto est = permutation_average(data, k, MixingDensityGrid::uniform(g), WeightSchedule(), 3, 5, 1);
  const auto model = find_modes(est);
  ASSERT_EQ(model.modes.size(), 2u);
  const auto labels = assign_clusters(data, model);
  const std::size_t la = model.modes[0].dot(a) > model.modes[1].dot(a) ? 0 : 1;
  std::size_t right = 0;
  for (std::size_t i = 0; i < data.size(); ++i) right += labels[i] == (i < 500 ? la : 1 - la) ? 1 : 0;
  EXPECT_GE(right, 950u);
  EXPECT_EQ(labels, assign_clusters(data, model, 3));
}

TEST(AssignClusters, TieGoesToLowestIndex) {
  ClusterModel m;
  m.modes = {UnitVector(1, 0, 0), UnitVector(-1, 0, 0)};
  m.mode_masses = {0.5, 0.5};
  const std::vector<UnitVector> y{UnitVector(0, 0, 1), UnitVector(0.2, 0, 1), UnitVector(-0.2, 0, 1)};
  const auto l = assign_clusters(y, m, KernelSpec(KernelFamily::VonMisesFisher, 5.0));
  EXPECT_EQ(l, (std::vector<std::size_t>{0, 0, 1}));
}

TEST(AssignClusters, InvariantToMassScale) {
  ClusterModel m;
  m.modes = {UnitVector(1, 0, 0), UnitVector(0, 1, 0), UnitVector(0, 0, 1)};
  m.mode_masses = {0.2, 0.3, 0.5};
  Rng rng(32);
  const auto y = sample_vmf(UnitVector(1, 1, 1), 1.0, 300, rng);
  const KernelSpec k(KernelFamily::Schladitz, 0.3);
  const auto l1 = assign_clusters(y, m, k);
  for (double& w : m.mode_masses) w *= 7.0;
  EXPECT_EQ(l1, assign_clusters(y, m, k));
}

TEST(AssignClusters, NeedsKernel) {
  ClusterModel m;
  m.modes = {UnitVector(1, 0, 0)};
  m.mode_masses = {1.0};
  const std::vector<UnitVector> y{UnitVector(0, 0, 1)};
  EXPECT_THROW(assign_clusters(y, m), std::invalid_argument);
  EXPECT_THROW(assign_clusters(y, ClusterModel{}, KernelSpec(KernelFamily::VonMisesFisher, 1.0)), std::invalid_argument);
}

TEST(FindModes, ExactTieKeepsOneNode) {
  const SphereGrid g = build_grid(kPi, 4, 8);
  std::vector<double> v(g.size(), 1.0);
  v[9] = v[10] = 5.0;
  const auto m = find_modes(MixingDensityGrid::normalized(g, v));
  ASSERT_EQ(m.mode_nodes.size(), 1u);
  EXPECT_EQ(m.mode_nodes[0], 9u);
}
