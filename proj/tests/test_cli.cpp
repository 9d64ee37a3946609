#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "sphpr/io.hpp"

namespace fs = std::filesystem;
using namespace sphpr;

namespace {

const fs::path kSource = SPHPR_SOURCE_DIR;

int run(const std::string& args) {
  const std::string cmd = std::string(SPHPR_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sphpr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::string data(const std::string& name) { return (kSource / "data" / name).string(); }

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("estimate --bogus"), 1);
  EXPECT_EQ(run("estimate --family kent --data x.csv"), 1);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("simulate"), 1);
  const fs::path d = scratch("usage");
  EXPECT_EQ(run("estimate --out-dir " + d.string()), 1);
  EXPECT_EQ(read_json(d / "run_report.json")["exit_code"], 1);
}

TEST(Cli, DataErrors) {
  const fs::path d = scratch("dataerr");
  EXPECT_EQ(run("estimate --data /nonexistent.csv --out-dir " + d.string()), 2);
  const json rep = read_json(d / "run_report.json");
  EXPECT_EQ(rep["exit_code"], 2);
  EXPECT_NE(rep["error"].get<std::string>().find("nonexistent"), std::string::npos);
  {
    std::ofstream bad(d / "bad.csv");
    bad << "x,y,z\n0,0,1\n0,1\n";
  }
  EXPECT_EQ(run("fit-em --data " + (d / "bad.csv").string() + " --out-dir " + d.string()), 2);
  EXPECT_NE(read_json(d / "run_report.json")["error"].get<std::string>().find(":3:"), std::string::npos);
}

TEST(Cli, NumericalFailureExitCode) {
  const fs::path d = scratch("numerr");
  const SphereGrid g = build_grid(kPi, 4, 8);
  {
    std::ofstream z(d / "zero.csv");
    write_grid_csv(z, g, std::vector<double>(g.size(), 0.0));
  }
  EXPECT_EQ(run("plot-data --estimate " + (d / "zero.csv").string() + " --lambda 5 --out-dir " + d.string()), 3);
}

TEST(Cli, EstimateIsDeterministic) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const std::string args = "estimate --data " + data("vmf_single.csv") + " --perms 3 --seed 42 --out-dir ";
  ASSERT_EQ(run(args + a.string()), 0);
  ASSERT_EQ(run(args + b.string()), 0);
  for (const char* f : {"psi.csv", "mixture.csv", "curve.csv", "estimate.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const json rep = read_json(a / "run_report.json");
  EXPECT_EQ(rep["command"], "estimate");
  EXPECT_EQ(rep["seed"], 42);
  EXPECT_EQ(rep["config"]["perms"], 3);
  EXPECT_EQ(rep["outputs"].size(), 5u);
}

TEST(Cli, TwoAndThreeColumnInputsAgree) {
  const fs::path d = scratch("cols");
  const double th[] = {0.3, 1.0, 1.4, 2.2, 2.9}, ph[] = {0.1, 2.0, 3.3, 4.4, 5.9};
  {
    std::ofstream two(d / "two.csv"), three(d / "three.csv");
    two.precision(17);
    three.precision(17);
    for (int i = 0; i < 5; ++i) {
      two << th[i] << ',' << ph[i] << '\n';
      const UnitVector u = spherical_to_cartesian(SphericalCoord(th[i], ph[i]));
      three << u.x1() << ',' << u.x2() << ',' << u.x3() << '\n';
    }
  }
  const std::string common = " --lambda 4 --perms 2 --grid-theta 20 --grid-phi 40";
  ASSERT_EQ(run("estimate --data " + (d / "two.csv").string() + common + " --out-dir " + (d / "a").string()), 0);
  ASSERT_EQ(run("estimate --data " + (d / "three.csv").string() + common + " --out-dir " + (d / "b").string()), 0);
  const auto a = read_grid_csv(d / "a" / "psi.csv"), b = read_grid_csv(d / "b" / "psi.csv");
  ASSERT_EQ(a.values.size(), b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12 * a.values[i]);
}

TEST(Cli, PlotDataRoundTrip) {
  const fs::path d = scratch("plot");
  ASSERT_EQ(run("estimate --data " + data("schladitz_single.csv") +
                " --family schladitz --perms 2 --out-dir " + (d / "est").string()),
            0);
  ASSERT_EQ(run("plot-data --estimate " + (d / "est" / "psi.csv").string() + " --family schladitz --lambda 0.2 --data " +
                data("schladitz_single.csv") + " --out-dir " + (d / "plot").string()),
            0);
  const auto est = read_grid_csv(d / "est" / "psi.csv");
  EXPECT_EQ(est.grid.size(), 30u * 120u);
  const json rep = read_json(d / "plot" / "run_report.json");
  EXPECT_EQ(rep["result"]["nodes"], 30 * 120);
  EXPECT_EQ(rep["result"]["mixture_nodes"], 60 * 120);
  // re-read values are bit-identical to the estimate
  std::ifstream in(d / "plot" / "psi_sphere.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "theta,phi,value");
  std::size_t i = 0;
  while (std::getline(in, line)) {
    const double v = std::stod(line.substr(line.rfind(',') + 1));
    ASSERT_LT(i, est.values.size());
    EXPECT_EQ(v, est.values[i]);
    ++i;
  }
  EXPECT_EQ(i, est.values.size());
  EXPECT_TRUE(fs::exists(d / "plot" / "psi_rect.csv"));
  EXPECT_TRUE(fs::exists(d / "plot" / "data_points.csv"));
}

TEST(Cli, GofFavorsSingleKernelOnSingleVmfData) {
  const fs::path d = scratch("gof");
  ASSERT_EQ(run("gof --data " + data("vmf_single.csv") + " --family vmf --perms 5 --out-dir " + d.string()), 0);
  const json r = read_json(d / "gof.json");
  EXPECT_EQ(r["verdict"], "FavorsH0");
  EXPECT_GT(r["log10_bf"].get<double>(), 1.0);
}

TEST(Cli, FitEmSelectsTwoComponents) {
  const fs::path d = scratch("em");
  ASSERT_EQ(run("fit-em --data " + data("vmf_two.csv") + " --jmax 4 --restarts 3 --out-dir " + d.string()), 0);
  const json r = read_json(d / "fit.json");
  EXPECT_EQ(r["J"], 2);
  EXPECT_TRUE(fs::exists(d / "bic.csv"));
  EXPECT_TRUE(fs::exists(d / "atoms.csv"));
}

TEST(Cli, ClusterFindsTwoGroups) {
  const fs::path d = scratch("cluster");
  ASSERT_EQ(run("cluster --data " + data("vmf_bimodal_600.csv") + " --perms 3 --out-dir " + d.string()), 0);
  const json r = read_json(d / "modes.json");
  EXPECT_EQ(r["modes"].size(), 2u);
  std::ifstream in(d / "labels.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 600u);
}

TEST(Cli, SimulateSmallConfig) {
  const fs::path d = scratch("sim");
  {
    std::ofstream c(d / "cfg.json");
    c << R"({"family":"vmf","n":150,"replications":2,"perms":2,"seed":3,
             "grid":{"n_theta":20,"n_phi":40},"kl_grid":{"n_theta":30,"n_phi":60},
             "em":{"j_max":2,"restarts":1},
             "cases":[{"preset":"1"},{"name":"custom","mixing":{"type":"beta_product","theta":[2,5]}}]})";
  }
  ASSERT_EQ(run("simulate --config " + (d / "cfg.json").string() + " --out-dir " + d.string()), 0);
  std::ifstream in(d / "table.csv");
  std::string header, r1, r2;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  EXPECT_EQ(header.substr(0, 11), "case,kl_pr,");
  EXPECT_EQ(r1.substr(0, 2), "1,");
  EXPECT_EQ(r2.substr(0, 7), "custom,");
  const json s = read_json(d / "simulation.json");
  EXPECT_EQ(s["rows"].size(), 2u);
  EXPECT_EQ(s["provenance"]["seed"], 3);
  {
    std::ofstream c(d / "broken.json");
    c << "{ not json";
  }
  EXPECT_EQ(run("simulate --config " + (d / "broken.json").string() + " --out-dir " + d.string()), 2);
}
