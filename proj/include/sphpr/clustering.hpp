#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sphpr/kernels.hpp"
#include "sphpr/parallel.hpp"
#include "sphpr/pr.hpp"
#include "sphpr/sphere.hpp"

namespace sphpr {

struct ClusterModel {
  /// Ordered by decreasing psi value at the mode.
  std::vector<UnitVector> modes;
  std::vector<std::size_t> mode_nodes;
  std::vector<double> mode_masses;
  std::optional<KernelSpec> kernel;
};

/// Local maxima of psi over the 8-neighbourhood (phi wraps, theta does not)
/// that also exceed rel_threshold times the global maximum. Rows touching a
/// pole count as one neighbourhood; on an axial hemisphere the last row also
/// sees its antipodal nodes. An exact tie with
/// a neighbour goes to the lower node index; a node level with all of its
/// neighbours is never a mode. Every node's mass goes to the nearest mode.
inline ClusterModel find_modes(const MixingDensityGrid& psi, double rel_threshold = 0.2, bool axial = false) {
  if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) {
    throw std::invalid_argument("find_modes: rel_threshold must lie in (0, 1)");
  }
  const SphereGrid& g = psi.grid();
  const std::size_t nt = g.n_theta(), np = g.n_phi();
  const auto v = psi.values();
  const double top = *std::max_element(v.begin(), v.end());

  const bool south = g.theta_max() >= kPi - 1e-12;
  std::vector<std::size_t> nbr;
  const auto neighbours = [&](std::size_t it, std::size_t ip) {
    nbr.clear();
    const auto at = [&](std::size_t t, long long p) {
      nbr.push_back(t * np + static_cast<std::size_t>((p % static_cast<long long>(np) + static_cast<long long>(np)) %
                                                      static_cast<long long>(np)));
    };
    for (int dt = -1; dt <= 1; ++dt) {
      const long long jt = static_cast<long long>(it) + dt;
      if (jt < 0 || jt >= static_cast<long long>(nt)) continue;
      for (int dp = -1; dp <= 1; ++dp) {
        if (dt != 0 || dp != 0) at(static_cast<std::size_t>(jt), static_cast<long long>(ip) + dp);
      }
    }
    // polar rows ring the pole: the whole row is one neighbourhood
    if (it == 0 || (it == nt - 1 && south)) {
      for (std::size_t jp = 0; jp < np; ++jp) at(it, static_cast<long long>(jp));
    }
    // axial hemisphere: the equator row continues at the antipode
    if (axial && !south && it == nt - 1) {
      for (int dp = -1; dp <= 1; ++dp) at(it, static_cast<long long>(ip + np / 2) + dp);
    }
  };

  std::vector<std::size_t> nodes;
  for (std::size_t it = 0; it < nt; ++it) {
    for (std::size_t ip = 0; ip < np; ++ip) {
      const std::size_t i = it * np + ip;
      if (!(v[i] > rel_threshold * top)) continue;
      neighbours(it, ip);
      bool is_max = true, above_one = false;
      for (std::size_t j : nbr) {
        if (j == i) continue;
        if (v[i] > v[j]) {
          above_one = true;
        } else if (!(v[i] == v[j] && i < j)) {
          is_max = false;
          break;
        }
      }
      if (is_max && above_one) nodes.push_back(i);
    }
  }
  if (nodes.empty()) throw NumericalError("find_modes: no modes above threshold");
  std::stable_sort(nodes.begin(), nodes.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });

  ClusterModel model;
  model.mode_nodes = nodes;
  for (std::size_t i : nodes) model.modes.push_back(g.node(i));
  model.mode_masses.assign(nodes.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const UnitVector x = g.node(i);
    std::size_t best = 0;
    double bc = -2.0;
    for (std::size_t k = 0; k < model.modes.size(); ++k) {
      const double c = axial ? std::abs(model.modes[k].dot(x)) : model.modes[k].dot(x);
      if (c > bc) {
        bc = c;
        best = k;
      }
    }
    model.mode_masses[best] += v[i] * g.weights()[i];
  }
  return model;
}

inline ClusterModel find_modes(const PREstimate& est, double rel_threshold = 0.2) {
  ClusterModel m = find_modes(est.psi, rel_threshold, est.kernel.family() == KernelFamily::Schladitz);
  m.kernel = est.kernel;
  return m;
}

/// label(y) = argmax_j mass_j k(y | mode_j); the lowest index wins ties.
inline std::vector<std::size_t> assign_clusters(std::span<const UnitVector> data, const ClusterModel& model,
                                                const KernelSpec& kernel, unsigned threads = 1) {
  if (model.modes.empty() || model.modes.size() != model.mode_masses.size()) {
    throw std::invalid_argument("assign_clusters: model has no modes");
  }
  const KernelEvaluator k(kernel);
  std::vector<std::size_t> labels(data.size(), 0);
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(threads, data.size()));
  parallel_for(chunks, threads, [&](std::size_t c) {
    for (std::size_t i = c; i < data.size(); i += chunks) {
      std::size_t best = 0;
      double bv = -1.0;
      for (std::size_t j = 0; j < model.modes.size(); ++j) {
        const double s = model.mode_masses[j] * k(model.modes[j].dot(data[i]));
        if (s > bv) {
          bv = s;
          best = j;
        }
      }
      labels[i] = best;
    }
  });
  return labels;
}

inline std::vector<std::size_t> assign_clusters(std::span<const UnitVector> data, const ClusterModel& model,
                                                unsigned threads = 1) {
  if (!model.kernel) throw std::invalid_argument("assign_clusters: model carries no kernel; pass one");
  return assign_clusters(data, model, *model.kernel, threads);
}

}  // namespace sphpr
