#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sphpr/clustering.hpp"
#include "sphpr/em.hpp"
#include "sphpr/gof.hpp"
#include "sphpr/simulation.hpp"
#include "sphpr/sphere.hpp"
#include "sphpr/structural_likelihood.hpp"

namespace sphpr {

using json = nlohmann::json;

/// Malformed or unreadable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<UnitVector> points;
  /// 2 for (theta, phi) rows, 3 for Cartesian rows.
  std::size_t columns = 0;
  bool header = false;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    s = a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

}  // namespace detail

/// CSV of unit vectors: 3 columns (x1,x2,x3; renormalized with a warning when
/// the norm is off by more than 1e-6) or 2 columns (theta,phi in radians).
/// A non-numeric first line is taken as a header. Blank lines and lines
/// starting with '#' are skipped.
inline Dataset read_dataset(std::istream& in, const std::string& source = "<stream>") {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  std::size_t renormalized = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    const auto fields = detail::split_csv(line);
    std::vector<double> vals(fields.size());
    bool numeric = true;
    for (std::size_t k = 0; k < fields.size(); ++k) numeric = numeric && detail::parse_double(fields[k], vals[k]);
    if (first) {
      first = false;
      if (fields.size() != 2 && fields.size() != 3) {
        throw DataError(source + ":" + std::to_string(lineno) + ": expected 2 or 3 columns, found " +
                        std::to_string(fields.size()));
      }
      ds.columns = fields.size();
      if (!numeric) {
        ds.header = true;
        continue;
      }
    }
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (fields.size() != ds.columns) {
      throw DataError(where + "expected " + std::to_string(ds.columns) + " columns, found " + std::to_string(fields.size()));
    }
    if (!numeric) throw DataError(where + "non-numeric field");
    for (double v : vals) {
      if (!std::isfinite(v)) throw DataError(where + "non-finite value");
    }
    if (ds.columns == 3) {
      const double norm = std::sqrt(vals[0] * vals[0] + vals[1] * vals[1] + vals[2] * vals[2]);
      if (!(norm > 0.0)) throw DataError(where + "zero vector");
      if (std::abs(norm - 1.0) > 1e-6) ++renormalized;
      ds.points.emplace_back(vals[0], vals[1], vals[2]);
    } else {
      if (!(vals[0] >= 0.0 && vals[0] <= kPi)) throw DataError(where + "theta outside [0, pi]");
      ds.points.push_back(spherical_to_cartesian(SphericalCoord(vals[0], vals[1])));
    }
  }
  if (ds.points.empty()) throw DataError(source + ": no data rows");
  if (renormalized > 0) {
    ds.warnings.push_back(std::to_string(renormalized) + " row(s) of " + source +
                          " had norm differing from 1 by more than 1e-6 and were normalized");
  }
  return ds;
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  return read_dataset(in, path.string());
}

inline void write_dataset(std::ostream& os, std::span<const UnitVector> pts) {
  os << "x1,x2,x3\n" << std::setprecision(17);
  for (const auto& p : pts) os << p.x1() << ',' << p.x2() << ',' << p.x3() << '\n';
}

/// Grid and values recovered from a theta,phi,weight,value CSV.
struct GridTable {
  SphereGrid grid;
  std::vector<double> values;
};

inline GridTable read_grid_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> th, ph, val;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv(line);
    if (lineno == 1 && f.size() == 4 && f[0] == "theta") continue;
    double a = 0, b = 0, w = 0, v = 0;
    if (f.size() != 4 || !detail::parse_double(f[0], a) || !detail::parse_double(f[1], b) ||
        !detail::parse_double(f[2], w) || !detail::parse_double(f[3], v)) {
      throw DataError(source + ":" + std::to_string(lineno) + ": expected theta,phi,weight,value");
    }
    th.push_back(a);
    ph.push_back(b);
    val.push_back(v);
  }
  if (th.empty()) throw DataError(source + ": empty grid file");
  std::size_t n_phi = 0;
  while (n_phi < th.size() && th[n_phi] == th[0]) ++n_phi;
  if (n_phi < 2 || th.size() % n_phi != 0) throw DataError(source + ": rows do not form a theta x phi grid");
  const std::size_t n_theta = th.size() / n_phi;
  if (n_theta < 2) throw DataError(source + ": grid needs at least 2 theta rows");
  const double theta_max = 2.0 * th[0] * static_cast<double>(n_theta);
  if (!(theta_max > 0.0 && theta_max <= kPi * (1.0 + 1e-12))) throw DataError(source + ": invalid theta range");
  SphereGrid grid = build_grid(std::min(theta_max, kPi), n_theta, n_phi);
  for (std::size_t i = 0; i < th.size(); ++i) {
    if (std::abs(grid.theta()[i] - th[i]) > 1e-9 || std::abs(grid.phi()[i] - ph[i]) > 1e-9) {
      throw DataError(source + ":" + std::to_string(i + 2) + ": node does not match a midpoint grid");
    }
  }
  return GridTable{std::move(grid), std::move(val)};
}

inline GridTable read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open grid file '" + path.string() + "'");
  return read_grid_csv(in, path.string());
}

/// CSV with columns theta,phi,value (contour-ready).
inline void write_contour_csv(std::ostream& os, const SphereGrid& grid, std::span<const double> values) {
  if (values.size() != grid.size()) throw std::invalid_argument("write_contour_csv: size mismatch");
  os << "theta,phi,value\n" << std::setprecision(17);
  for (std::size_t i = 0; i < grid.size(); ++i) os << grid.theta()[i] << ',' << grid.phi()[i] << ',' << values[i] << '\n';
}

// ------------------------------------------------------------------- JSON

inline json to_json_value(const UnitVector& u) {
  const auto c = cartesian_to_spherical(u);
  return json{{"x", {u.x1(), u.x2(), u.x3()}}, {"theta", c.theta}, {"phi", c.phi}};
}

inline json to_json_value(const MarginalLikelihoodCurve& c) {
  return json{{"lambdas", c.lambdas},
              {"log_liks", c.log_liks},
              {"argmax", c.argmax},
              {"argmax_log_lik", c.argmax_log_lik},
              {"boundary", c.boundary}};
}

inline json to_json_value(const BayesFactorReport& r) {
  return json{{"family", to_string(r.family)},
              {"log10_bf", r.log10_bf},
              {"lambda_hat_h0", r.lambda_hat_h0},
              {"lambda_hat_h1", r.lambda_hat_h1},
              {"log_m0", r.log_m0},
              {"log_m1", r.log_m1},
              {"second_derivs", {r.second_deriv_h0, r.second_deriv_h1}},
              {"boundary_h0", r.boundary_h0},
              {"boundary_h1", r.boundary_h1},
              {"verdict", to_string(r.verdict)}};
}

inline json to_json_value(const FiniteMixture& m) {
  json comps = json::array();
  for (std::size_t j = 0; j < m.components(); ++j) {
    json c = to_json_value(m.mus[j]);
    c["weight"] = m.weights[j];
    comps.push_back(c);
  }
  return json{{"family", to_string(m.family)}, {"J", m.components()},  {"lambda", m.lambda},
              {"log_lik", m.log_lik},          {"bic", m.bic},         {"iterations", m.iterations},
              {"converged", m.converged},      {"components", comps},  {"log_lik_trace", m.log_lik_trace},
              {"warnings", m.warnings}};
}

inline json to_json_value(const ClusterModel& m) {
  json modes = json::array();
  for (std::size_t j = 0; j < m.modes.size(); ++j) {
    json c = to_json_value(m.modes[j]);
    c["mass"] = m.mode_masses[j];
    c["node"] = m.mode_nodes.empty() ? 0 : m.mode_nodes[j];
    modes.push_back(c);
  }
  json out{{"modes", modes}};
  if (m.kernel) out["kernel"] = json{{"family", to_string(m.kernel->family())}, {"lambda", m.kernel->lambda()}};
  return out;
}

inline json to_json_value(const Summary& s) { return json{{"mean", s.mean}, {"se", s.se}}; }

inline json to_json_value(const ExperimentRow& r) {
  json reps = json::array();
  for (const auto& x : r.reps) {
    reps.push_back(json{{"ok", x.ok},         {"error", x.error},     {"kl_pr", x.kl_pr},
                        {"kl_ml", x.kl_ml},   {"d_pr", x.d_pr},       {"d_ml", x.d_ml},
                        {"lambda_hat", x.lambda_hat}, {"em_lambda", x.em_lambda},
                        {"em_components", x.em_components}, {"lambda_boundary", x.lambda_boundary}});
  }
  return json{{"name", r.name},
              {"family", to_string(r.family)},
              {"n", r.n},
              {"replications", r.replications},
              {"failures", r.failures},
              {"kl_pr", to_json_value(r.kl_pr)},
              {"kl_ml", to_json_value(r.kl_ml)},
              {"d_pr", to_json_value(r.d_pr)},
              {"d_ml", to_json_value(r.d_ml)},
              {"lambda_hat", to_json_value(r.lambda_hat)},
              {"em_components", to_json_value(r.em_components)},
              {"reps", reps}};
}

/// One line per case in the layout of the simulation tables.
inline void write_table_csv(std::ostream& os, std::span<const ExperimentRow> rows) {
  os << "case,kl_pr,kl_pr_se,kl_ml,kl_ml_se,d_pr,d_pr_se,d_ml,d_ml_se,lambda_hat,lambda_hat_se,replications,failures\n";
  os << std::setprecision(6);
  for (const auto& r : rows) {
    os << r.name << ',' << r.kl_pr.mean << ',' << r.kl_pr.se << ',' << r.kl_ml.mean << ',' << r.kl_ml.se << ','
       << r.d_pr.mean << ',' << r.d_pr.se << ',' << r.d_ml.mean << ',' << r.d_ml.se << ',' << r.lambda_hat.mean << ','
       << r.lambda_hat.se << ',' << r.replications << ',' << r.failures << '\n';
  }
}

// -------------------------------------------------------- simulate config

namespace detail {

inline RectBounds parse_bounds(const json& j, double theta_max) {
  if (!j.contains("bounds")) return RectBounds{0.0, theta_max, 0.0, kTwoPi};
  const auto b = j.at("bounds").get<std::vector<double>>();
  if (b.size() != 4) throw std::invalid_argument("config: bounds must be [theta_lo, theta_hi, phi_lo, phi_hi]");
  return RectBounds{b[0], b[1], b[2], b[3]};
}

inline TruncatedNormal2 parse_normal(const json& j, double theta_max) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto c = j.at("cov").get<std::vector<std::vector<double>>>();
  if (m.size() != 2 || c.size() != 2 || c[0].size() != 2 || c[1].size() != 2) {
    throw std::invalid_argument("config: truncated_normal needs mean[2] and cov[2][2]");
  }
  TruncatedNormal2 t;
  t.mean = Eigen::Vector2d(m[0], m[1]);
  t.cov << c[0][0], c[0][1], c[1][0], c[1][1];
  t.bounds = parse_bounds(j, theta_max);
  return t;
}

}  // namespace detail

inline MixingSpec parse_mixing(const json& j, double theta_max) {
  const std::string type = j.at("type").get<std::string>();
  MixingSpec spec;
  if (type == "two_point") {
    const auto a = j.at("first").get<std::vector<double>>();
    const auto b = j.at("second").get<std::vector<double>>();
    if (a.size() != 2 || b.size() != 2) throw std::invalid_argument("config: two_point locations are [theta, phi]");
    spec = TwoPointDiscrete{SphericalCoord(a[0], a[1]), SphericalCoord(b[0], b[1]), j.value("weight", 0.5)};
  } else if (type == "truncated_normal") {
    spec = detail::parse_normal(j, theta_max);
  } else if (type == "beta_product") {
    const auto t = j.value("theta", std::vector<double>{1.0, 1.0});
    const auto p = j.value("phi", std::vector<double>{1.0, 1.0});
    if (t.size() != 2 || p.size() != 2) throw std::invalid_argument("config: beta_product theta/phi are [a, b]");
    spec = BetaProduct{t[0], t[1], p[0], p[1], detail::parse_bounds(j, theta_max)};
  } else if (type == "bimodal") {
    spec = Bimodal{detail::parse_normal(j.at("first"), theta_max), detail::parse_normal(j.at("second"), theta_max),
                   j.value("weight", 0.5)};
  } else {
    throw std::invalid_argument("config: unknown mixing type '" + type + "'");
  }
  validate(spec);
  return spec;
}

/// Experiments described by a simulate config. Top-level keys give shared
/// settings; each entry of "cases" names a preset or gives a mixing block.
inline std::vector<ExperimentConfig> parse_simulation_config(const json& j) {
  const KernelFamily family = parse_family(j.value("family", std::string("vmf")));
  const double theta_max = KernelSpec::support_theta_max(family);
  ExperimentConfig base;
  base.family = family;
  base.true_lambda = j.value("lambda", family == KernelFamily::VonMisesFisher ? 10.0 : 0.1);
  base.n = j.value("n", base.n);
  base.replications = j.value("replications", base.replications);
  base.n_perms = j.value("perms", base.n_perms);
  base.seed = j.value("seed", base.seed);
  base.gamma = j.value("gamma", base.gamma);
  base.threads = j.value("threads", base.threads);
  base.partition = presets::table_partition();
  if (j.contains("grid")) {
    base.pr_grid = GridDims{j["grid"].at("n_theta").get<std::size_t>(), j["grid"].at("n_phi").get<std::size_t>()};
  }
  if (j.contains("kl_grid")) {
    base.kl_grid = GridDims{j["kl_grid"].at("n_theta").get<std::size_t>(), j["kl_grid"].at("n_phi").get<std::size_t>()};
  }
  if (j.contains("partition")) {
    const auto& p = j["partition"];
    base.partition = PartitionSpec{p.value("n_theta", std::size_t{10}), p.value("n_phi", std::size_t{10}),
                                   p.value("theta_offset", 0.0), p.value("phi_offset", 0.0)};
  }
  if (j.contains("lambda_range")) {
    const auto r = j["lambda_range"].get<std::vector<double>>();
    if (r.size() != 2) throw std::invalid_argument("config: lambda_range is [lo, hi]");
    base.range = ParamRange{r[0], r[1]};
  }
  if (j.contains("search")) {
    base.search.rel_tol = j["search"].value("rel_tol", base.search.rel_tol);
    base.search.budget = j["search"].value("budget", base.search.budget);
    base.search.scan_points = j["search"].value("scan_points", base.search.scan_points);
  }
  if (j.contains("em")) {
    const auto& e = j["em"];
    base.em.j_max = e.value("j_max", base.em.j_max);
    base.em.restarts = e.value("restarts", base.em.restarts);
    base.em.em.max_iter = e.value("max_iter", base.em.em.max_iter);
    base.em.em.tol = e.value("tol", base.em.em.tol);
  }
  if (!j.contains("cases") || !j["cases"].is_array() || j["cases"].empty()) {
    throw std::invalid_argument("config: 'cases' must be a nonempty array");
  }
  std::vector<ExperimentConfig> out;
  for (const auto& c : j["cases"]) {
    ExperimentConfig e = base;
    if (c.contains("preset")) {
      const auto p = presets::find(to_string(family), c["preset"].get<std::string>());
      e.mixing = p.mixing;
      e.name = p.name;
    } else {
      e.mixing = parse_mixing(c.at("mixing"), theta_max);
    }
    e.name = c.value("name", e.name);
    out.push_back(std::move(e));
  }
  return out;
}

// -------------------------------------------------------------- run report

struct RunReport {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  double elapsed_seconds = 0.0;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
  json result = json::object();

  json to_json() const {
    return json{{"command", command}, {"config", config},     {"seed", seed},         {"elapsed_seconds", elapsed_seconds},
                {"outputs", outputs}, {"warnings", warnings}, {"result", result}};
  }
};

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << std::setw(2) << j << '\n';
}

}  // namespace sphpr
