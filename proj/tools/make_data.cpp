// Writes the synthetic example datasets under data/.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sphpr/io.hpp"
#include "sphpr/simulation.hpp"

using namespace sphpr;

namespace {

void save(const std::filesystem::path& p, const std::vector<UnitVector>& pts) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  write_dataset(out, pts);
  std::cout << p.string() << ": " << pts.size() << " rows\n";
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "data";
  std::filesystem::create_directories(dir);
  {
    Rng rng = make_rng(2024, 0);
    save(dir / "vmf_single.csv", sample_vmf(UnitVector(0.2, 0.3, 0.9), 10.0, 221, rng));
  }
  {
    Rng rng = make_rng(2024, 1);
    auto pts = sample_vmf(UnitVector(0, 0, 1), 10.0, 140, rng);
    const auto b = sample_vmf(UnitVector(1, 0, 0), 10.0, 81, rng);
    pts.insert(pts.end(), b.begin(), b.end());
    save(dir / "vmf_two.csv", pts);
  }
  {
    Rng rng = make_rng(2024, 2);
    save(dir / "schladitz_single.csv", sample_schladitz(UnitVector(0.1, 0.2, 0.95), 0.2, 300, rng));
  }
  {
    const auto c = presets::find("vmf", "4");
    Rng rng = make_rng(2024, 3);
    save(dir / "vmf_bimodal_600.csv", sample_mixture(KernelSpec(c.family, c.true_lambda), c.mixing, 600, rng));
  }
  return 0;
}
