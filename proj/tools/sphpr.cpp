// sphpr command-line tool.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sphpr/sphpr.hpp"

namespace fs = std::filesystem;
using namespace sphpr;

namespace {

constexpr const char* kVersion = "1.0.0";

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::string data;
  std::string family = "vmf";
  std::uint64_t seed = 1;
  std::size_t grid_theta = 0;
  std::size_t grid_phi = 0;
  double gamma = WeightSchedule::kDefaultGamma;
  std::size_t perms = 25;
  unsigned threads = 1;
  std::string out_dir = ".";
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double lambda_tol = 1e-3;
  int opt_budget = 40;
  std::optional<double> lambda;
  std::size_t objective_perms = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_lambda) {
  cmd->add_option("--data", c.data, "CSV of unit vectors (x1,x2,x3 or theta,phi)");
  cmd->add_option("--family", c.family, "kernel family")->check(CLI::IsMember({"vmf", "schladitz"}));
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--grid-theta", c.grid_theta, "theta cells of the mixing grid (0 = family default)");
  cmd->add_option("--grid-phi", c.grid_phi, "phi cells of the mixing grid (0 = family default)");
  cmd->add_option("--gamma", c.gamma, "weight exponent, w_i = (i+1)^-gamma");
  cmd->add_option("--perms", c.perms, "permutations averaged");
  cmd->add_option("--threads", c.threads, "worker threads");
  cmd->add_option("--out-dir", c.out_dir, "output directory");
  if (with_lambda) {
    cmd->add_option("--lambda-min", c.lambda_min, "lower end of the lambda search (0 = family default)");
    cmd->add_option("--lambda-max", c.lambda_max, "upper end of the lambda search (0 = family default)");
    cmd->add_option("--lambda-tol", c.lambda_tol, "relative tolerance on lambda");
    cmd->add_option("--opt-budget", c.opt_budget, "objective evaluations allowed");
    cmd->add_option("--objective-perms", c.objective_perms, "permutations per marginal-likelihood evaluation");
  }
}

KernelFamily family_of(const Common& c) { return parse_family(c.family); }

ParamRange range_of(const Common& c) {
  ParamRange r = default_range(family_of(c));
  if (c.lambda_min > 0.0) r.lo = c.lambda_min;
  if (c.lambda_max > 0.0) r.hi = c.lambda_max;
  if (!(r.lo < r.hi)) throw std::invalid_argument("--lambda-min must be below --lambda-max");
  return r;
}

GridDims dims_of(const Common& c) {
  GridDims d = default_grid_dims(family_of(c));
  if (c.grid_theta > 0) d.n_theta = c.grid_theta;
  if (c.grid_phi > 0) d.n_phi = c.grid_phi;
  return d;
}

SearchConfig search_of(const Common& c) {
  SearchConfig s;
  s.rel_tol = c.lambda_tol;
  s.budget = c.opt_budget;
  return s;
}

json echo(const Common& c) {
  json j{{"data", c.data},       {"family", c.family},         {"seed", c.seed},
         {"grid_theta", c.grid_theta}, {"grid_phi", c.grid_phi}, {"gamma", c.gamma},
         {"perms", c.perms},     {"threads", c.threads},       {"out_dir", c.out_dir},
         {"lambda_min", c.lambda_min}, {"lambda_max", c.lambda_max}, {"lambda_tol", c.lambda_tol},
         {"opt_budget", c.opt_budget}, {"objective_perms", c.objective_perms}};
  if (c.lambda) j["lambda"] = *c.lambda;
  return j;
}

Dataset load(const Common& c) {
  if (c.data.empty()) throw std::invalid_argument("--data is required");
  return read_dataset(fs::path(c.data));
}

fs::path prepare_out(const Common& c) {
  fs::path p(c.out_dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + c.out_dir + "': " + ec.message());
  return p;
}

void write_grid(const fs::path& path, const SphereGrid& g, std::span<const double> v, RunReport& rep) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_grid_csv(out, g, v);
  rep.outputs.push_back(path.string());
}

/// lambda-hat by marginal likelihood, or the fixed --lambda.
MarginalLikelihoodCurve fit_lambda(std::span<const UnitVector> data, const Common& c, const MixingDensityGrid& psi0) {
  const ParamRange range = range_of(c);
  if (c.lambda) {
    const KernelSpec s(family_of(c), *c.lambda, ParamRange{std::min(range.lo, *c.lambda), std::max(range.hi, *c.lambda)});
    MarginalLikelihoodCurve curve;
    curve.lambdas = {*c.lambda};
    curve.log_liks = {pr_marginal_loglik(data, s, psi0, WeightSchedule(c.gamma), c.objective_perms, c.seed, c.threads)};
    curve.argmax = *c.lambda;
    curve.argmax_log_lik = curve.log_liks[0];
    return curve;
  }
  const KernelSpec start(family_of(c), std::sqrt(range.lo * range.hi), range);
  return maximize_marginal(data, start, psi0, WeightSchedule(c.gamma),
                           MarginalConfig{search_of(c), c.objective_perms, c.seed, c.threads});
}

KernelSpec fitted_spec(const Common& c, double lambda) {
  const ParamRange r = range_of(c);
  return KernelSpec(family_of(c), lambda, ParamRange{std::min(r.lo, lambda), std::max(r.hi, lambda)});
}

void run_estimate(const Common& c, std::size_t mix_theta, std::size_t mix_phi, RunReport& rep) {
  const Dataset ds = load(c);
  rep.warnings.insert(rep.warnings.end(), ds.warnings.begin(), ds.warnings.end());
  const fs::path out = prepare_out(c);
  const SphereGrid support = support_grid(family_of(c), dims_of(c));
  const MixingDensityGrid psi0 = MixingDensityGrid::uniform(support);
  const auto curve = fit_lambda(ds.points, c, psi0);
  if (curve.boundary) rep.warnings.push_back("boundary solution: lambda-hat at the edge of the search range");
  const KernelSpec spec = fitted_spec(c, curve.argmax);
  const PREstimate est = permutation_average(ds.points, spec, psi0, WeightSchedule(c.gamma), c.perms, c.seed, c.threads);

  write_grid(out / "psi.csv", support, est.psi.values(), rep);
  const SphereGrid full = build_grid(kPi, mix_theta, mix_phi);
  const auto f = mixture_density_on(est.psi, spec, full, c.threads);
  write_grid(out / "mixture.csv", full, f, rep);
  {
    std::ofstream cv(out / "curve.csv");
    cv << "lambda,log_marginal_lik\n" << std::setprecision(17);
    std::vector<std::size_t> idx(curve.lambdas.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return curve.lambdas[a] < curve.lambdas[b]; });
    for (auto i : idx) cv << curve.lambdas[i] << ',' << curve.log_liks[i] << '\n';
    rep.outputs.push_back((out / "curve.csv").string());
  }
  rep.result = json{{"family", c.family},
                    {"n", ds.points.size()},
                    {"lambda_hat", curve.argmax},
                    {"boundary", curve.boundary},
                    {"log_marginal", est.log_marginal},
                    {"permutations", est.permutations},
                    {"grid", {{"n_theta", support.n_theta()}, {"n_phi", support.n_phi()}}},
                    {"curve", to_json_value(curve)}};
  write_json(out / "estimate.json", rep.result);
  rep.outputs.push_back((out / "estimate.json").string());
}

void run_fit_em(const Common& c, std::size_t j_max, std::size_t restarts, std::size_t max_iter, double tol,
                RunReport& rep) {
  const Dataset ds = load(c);
  rep.warnings.insert(rep.warnings.end(), ds.warnings.begin(), ds.warnings.end());
  const fs::path out = prepare_out(c);
  BicConfig cfg;
  cfg.j_max = j_max;
  cfg.restarts = restarts;
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  cfg.em.max_iter = max_iter;
  cfg.em.tol = tol;
  cfg.em.range = range_of(c);
  const auto sel = select_bic_detailed(ds.points, family_of(c), cfg);
  rep.warnings.insert(rep.warnings.end(), sel.best.warnings.begin(), sel.best.warnings.end());
  rep.result = to_json_value(sel.best);
  write_json(out / "fit.json", rep.result);
  rep.outputs.push_back((out / "fit.json").string());
  {
    std::ofstream a(out / "atoms.csv");
    a << "theta,phi,weight\n" << std::setprecision(17);
    for (std::size_t j = 0; j < sel.best.components(); ++j) {
      const auto s = cartesian_to_spherical(sel.best.mus[j]);
      a << s.theta << ',' << s.phi << ',' << sel.best.weights[j] << '\n';
    }
    rep.outputs.push_back((out / "atoms.csv").string());
  }
  {
    std::ofstream b(out / "bic.csv");
    b << "J,restart,bic,log_lik,ok\n" << std::setprecision(17);
    for (const auto& cell : sel.cells) {
      b << cell.J << ',' << cell.restart << ',' << cell.bic << ',' << cell.log_lik << ',' << (cell.ok ? 1 : 0) << '\n';
    }
    rep.outputs.push_back((out / "bic.csv").string());
  }
}

void run_gof(const Common& c, double shape, double scale, std::size_t h0_theta, std::size_t h0_phi, RunReport& rep) {
  const Dataset ds = load(c);
  rep.warnings.insert(rep.warnings.end(), ds.warnings.begin(), ds.warnings.end());
  const fs::path out = prepare_out(c);
  GofConfig cfg;
  cfg.range = range_of(c);
  cfg.pr_grid = dims_of(c);
  cfg.h0_grid = GridDims{h0_theta, h0_phi};
  cfg.n_perms = c.perms;
  cfg.seed = c.seed;
  cfg.gamma = c.gamma;
  cfg.search = search_of(c);
  cfg.threads = c.threads;
  const auto r = bayes_factor(ds.points, family_of(c), GammaPrior(shape, scale), cfg);
  if (r.boundary_h0) rep.warnings.push_back("H0 lambda-hat is a boundary solution");
  if (r.boundary_h1) rep.warnings.push_back("H1 lambda-hat is a boundary solution");
  rep.result = to_json_value(r);
  write_json(out / "gof.json", rep.result);
  rep.outputs.push_back((out / "gof.json").string());
}

void run_cluster(const Common& c, std::size_t subsample, double rel_threshold, RunReport& rep) {
  const Dataset ds = load(c);
  rep.warnings.insert(rep.warnings.end(), ds.warnings.begin(), ds.warnings.end());
  const fs::path out = prepare_out(c);
  const SphereGrid support = support_grid(family_of(c), dims_of(c));
  const MixingDensityGrid psi0 = MixingDensityGrid::uniform(support);

  std::vector<std::size_t> idx(ds.points.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(c.seed, 0, 0x53554253U);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(subsample, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<UnitVector> sub;
  for (auto i : idx) sub.push_back(ds.points[i]);

  const auto curve = fit_lambda(sub, c, psi0);
  if (curve.boundary) rep.warnings.push_back("boundary solution: lambda-hat at the edge of the search range");
  const KernelSpec spec = fitted_spec(c, curve.argmax);
  const PREstimate est = permutation_average(ds.points, spec, psi0, WeightSchedule(c.gamma), c.perms, c.seed, c.threads);
  const ClusterModel model = find_modes(est, rel_threshold);
  const auto labels = assign_clusters(ds.points, model, c.threads);

  {
    std::ofstream l(out / "labels.csv");
    l << "index,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) l << i << ',' << labels[i] << '\n';
    rep.outputs.push_back((out / "labels.csv").string());
  }
  write_grid(out / "psi.csv", support, est.psi.values(), rep);
  json j = to_json_value(model);
  j["lambda_hat"] = curve.argmax;
  j["lambda_subsample"] = sub.size();
  std::vector<std::size_t> counts(model.modes.size(), 0);
  for (auto l : labels) ++counts[l];
  j["cluster_sizes"] = counts;
  rep.result = j;
  write_json(out / "modes.json", j);
  rep.outputs.push_back((out / "modes.json").string());
}

void run_simulate(const Common& c, const std::string& config, bool threads_set, std::optional<std::size_t> reps,
                  RunReport& rep) {
  if (config.empty()) throw std::invalid_argument("--config is required");
  std::ifstream in(config);
  if (!in) throw DataError("cannot open config file '" + config + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("config '" + config + "' is not valid JSON: " + e.what());
  }
  std::vector<ExperimentConfig> cases;
  try {
    cases = parse_simulation_config(j);
  } catch (const json::exception& e) {
    throw DataError("config '" + config + "': " + e.what());
  }
  const fs::path out = prepare_out(c);
  std::vector<ExperimentRow> rows;
  for (auto& e : cases) {
    if (threads_set) e.threads = c.threads;
    if (reps) e.replications = *reps;
    rows.push_back(run_experiment(e));
    if (rows.back().failures > 0) {
      rep.warnings.push_back("case " + e.name + ": " + std::to_string(rows.back().failures) + " replication(s) failed");
    }
  }
  {
    std::ofstream t(out / "table.csv");
    write_table_csv(t, rows);
    rep.outputs.push_back((out / "table.csv").string());
  }
  json rj = json::array();
  for (const auto& r : rows) rj.push_back(to_json_value(r));
  const auto& f = cases.front();
  const GridDims pg = effective_pr_grid(f);
  rep.result = json{{"rows", rj},
                    {"provenance",
                     {{"version", kVersion},
                      {"config_file", config},
                      {"config", j},
                      {"seed", f.seed},
                      {"pr_grid", {pg.n_theta, pg.n_phi}},
                      {"kl_grid", {f.kl_grid.n_theta, f.kl_grid.n_phi}},
                      {"partition",
                       {{"n_theta", f.partition.n_theta},
                        {"n_phi", f.partition.n_phi},
                        {"theta_offset", f.partition.theta_offset},
                        {"phi_offset", f.partition.phi_offset}}}}}};
  rep.seed = f.seed;
  write_json(out / "simulation.json", rep.result);
  rep.outputs.push_back((out / "simulation.json").string());
}

void run_plot_data(const Common& c, const std::string& estimate, std::size_t mix_theta, std::size_t mix_phi,
                   RunReport& rep) {
  if (estimate.empty()) throw std::invalid_argument("--estimate is required");
  const fs::path out = prepare_out(c);
  const GridTable t = read_grid_csv(fs::path(estimate));
  {
    std::ofstream o(out / "psi_sphere.csv");
    write_contour_csv(o, t.grid, t.values);
    rep.outputs.push_back((out / "psi_sphere.csv").string());
  }
  std::vector<double> rect(t.values.size());
  for (std::size_t i = 0; i < rect.size(); ++i) rect[i] = t.values[i] * std::sin(t.grid.theta()[i]);
  {
    std::ofstream o(out / "psi_rect.csv");
    write_contour_csv(o, t.grid, rect);
    rep.outputs.push_back((out / "psi_rect.csv").string());
  }
  json res{{"n_theta", t.grid.n_theta()}, {"n_phi", t.grid.n_phi()}, {"nodes", t.grid.size()}};
  if (c.lambda) {
    const KernelSpec spec = fitted_spec(c, *c.lambda);
    const MixingDensityGrid psi = MixingDensityGrid::normalized(t.grid, t.values);
    const SphereGrid full = build_grid(kPi, mix_theta, mix_phi);
    const auto f = mixture_density_on(psi, spec, full, c.threads);
    std::ofstream o(out / "mixture_density.csv");
    write_contour_csv(o, full, f);
    rep.outputs.push_back((out / "mixture_density.csv").string());
    res["mixture_nodes"] = full.size();
  }
  if (!c.data.empty()) {
    const Dataset ds = load(c);
    std::ofstream o(out / "data_points.csv");
    o << "theta,phi\n" << std::setprecision(17);
    for (const auto& p : ds.points) {
      const auto s = cartesian_to_spherical(p);
      o << s.theta << ',' << s.phi << '\n';
    }
    rep.outputs.push_back((out / "data_points.csv").string());
  }
  rep.result = res;
}

/// Writes run_report.json; on failure the report records the error and is
/// best effort.
int finish(RunReport& rep, const std::string& out_dir, std::chrono::steady_clock::time_point t0, int code,
           const std::string& error) {
  rep.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path report = fs::path(out_dir) / "run_report.json";
  rep.outputs.push_back(report.string());
  json j = rep.to_json();
  j["exit_code"] = code;
  if (code != kOk) j["error"] = error;
  if (code == kOk) {
    write_json(report, j);
    return code;
  }
  try {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!ec) write_json(report, j);
  } catch (const std::exception&) {
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive-recursion mixture estimation for directional data"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common c;
  std::size_t mix_theta = 60, mix_phi = 120;
  double lambda_fixed = 0.0;

  std::vector<CLI::Option*> lambda_opts;
  auto* estimate = app.add_subcommand("estimate", "estimate lambda and the mixing density");
  add_common(estimate, c, true);
  lambda_opts.push_back(estimate->add_option("--lambda", lambda_fixed, "fixed lambda (skips the search)"));
  estimate->add_option("--mixture-theta", mix_theta, "theta cells of the mixture-density grid");
  estimate->add_option("--mixture-phi", mix_phi, "phi cells of the mixture-density grid");

  std::size_t j_max = 10, restarts = 5, max_iter = 500;
  double tol = 1e-8;
  auto* fit_em = app.add_subcommand("fit-em", "finite mixture by EM with BIC selection");
  add_common(fit_em, c, true);
  fit_em->add_option("--jmax", j_max, "largest component count");
  fit_em->add_option("--restarts", restarts, "random starts per component count");
  fit_em->add_option("--max-iter", max_iter, "EM iteration cap");
  fit_em->add_option("--tol", tol, "log-likelihood gain tolerance");

  double shape = 2.0, scale = 0.5;
  std::size_t h0_theta = 180, h0_phi = 360;
  auto* gof = app.add_subcommand("gof", "Bayes factor: single kernel vs PR mixture");
  add_common(gof, c, true);
  gof->add_option("--prior-shape", shape, "Gamma prior shape");
  gof->add_option("--prior-scale", scale, "Gamma prior scale");
  gof->add_option("--h0-theta", h0_theta, "theta cells of the H0 integration grid");
  gof->add_option("--h0-phi", h0_phi, "phi cells of the H0 integration grid");

  std::size_t subsample = 500;
  double rel_threshold = 0.2;
  auto* cluster = app.add_subcommand("cluster", "mode-based clustering");
  add_common(cluster, c, true);
  cluster->add_option("--lambda-subsample", subsample, "observations used to estimate lambda");
  cluster->add_option("--rel-threshold", rel_threshold, "mode threshold relative to the maximum");
  lambda_opts.push_back(cluster->add_option("--lambda", lambda_fixed, "fixed lambda (skips the search)"));

  std::string config;
  std::size_t reps_override = 0;
  auto* simulate = app.add_subcommand("simulate", "simulation study from a config file");
  add_common(simulate, c, false);
  simulate->add_option("--config", config, "JSON experiment config")->required();
  simulate->add_option("--replications", reps_override, "override the replication count");

  std::string estimate_file;
  auto* plot = app.add_subcommand("plot-data", "contour-ready CSVs from an estimate");
  add_common(plot, c, false);
  plot->add_option("--estimate", estimate_file, "psi grid CSV written by estimate")->required();
  lambda_opts.push_back(plot->add_option("--lambda", lambda_fixed, "kernel parameter for the mixture density"));
  plot->add_option("--mixture-theta", mix_theta, "theta cells of the mixture-density grid");
  plot->add_option("--mixture-phi", mix_phi, "phi cells of the mixture-density grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  for (const auto* o : lambda_opts) {
    if (o->count() > 0) c.lambda = lambda_fixed;
  }
  if (cmd == fit_em && cmd->count("--perms") == 0) c.perms = 1;

  RunReport rep;
  rep.command = cmd->get_name();
  rep.seed = c.seed;
  rep.config = echo(c);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (cmd == estimate) {
      rep.config["mixture_grid"] = {mix_theta, mix_phi};
      run_estimate(c, mix_theta, mix_phi, rep);
    } else if (cmd == fit_em) {
      rep.config["jmax"] = j_max;
      rep.config["restarts"] = restarts;
      rep.config["max_iter"] = max_iter;
      rep.config["tol"] = tol;
      run_fit_em(c, j_max, restarts, max_iter, tol, rep);
    } else if (cmd == gof) {
      rep.config["prior_shape"] = shape;
      rep.config["prior_scale"] = scale;
      rep.config["h0_grid"] = {h0_theta, h0_phi};
      run_gof(c, shape, scale, h0_theta, h0_phi, rep);
    } else if (cmd == cluster) {
      rep.config["lambda_subsample"] = subsample;
      rep.config["rel_threshold"] = rel_threshold;
      run_cluster(c, subsample, rel_threshold, rep);
    } else if (cmd == simulate) {
      rep.config["config"] = config;
      std::optional<std::size_t> reps;
      if (reps_override > 0) reps = reps_override;
      rep.config["replications"] = reps_override;
      run_simulate(c, config, cmd->count("--threads") > 0, reps, rep);
    } else {
      rep.config["estimate"] = estimate_file;
      rep.config["mixture_grid"] = {mix_theta, mix_phi};
      run_plot_data(c, estimate_file, mix_theta, mix_phi, rep);
    }
    finish(rep, c.out_dir, t0, kOk, "");
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "wrote " << rep.outputs.size() << " file(s) to " << c.out_dir << '\n';
    return kOk;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return finish(rep, c.out_dir, t0, kData, e.what());
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return finish(rep, c.out_dir, t0, kNumerical, e.what());
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return finish(rep, c.out_dir, t0, kUsage, e.what());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return finish(rep, c.out_dir, t0, kNumerical, e.what());
  }
}
