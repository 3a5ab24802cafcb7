#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grimgep/harness.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  std::string cmd = std::string(GRIMGEP_CLI_PATH) + " " + args + " 2>/dev/null";
  return std::system(cmd.c_str());
}

}  // namespace

TEST_CASE("cli: run, reproducibility, compare") {
  fs::path work = fs::temp_directory_path() / "grimgep_cli_test";
  fs::remove_all(work);
  fs::create_directories(work);
  std::string cfg = std::string(GRIMGEP_CONFIG_DIR) + "/smoke.cfg";

  REQUIRE(cli("run --config " + cfg + " --seed 1 --out " + (work / "a").string()) == 0);
  REQUIRE(fs::exists(work / "a" / "metrics.csv"));
  REQUIRE(fs::exists(work / "a" / "config.json"));

  // Identical config and seed give a byte-identical metrics.csv.
  REQUIRE(cli("run --config " + cfg + " --seed 1 --out " + (work / "a2").string()) == 0);
  CHECK(slurp(work / "a" / "metrics.csv") == slurp(work / "a2" / "metrics.csv"));

  // A different seed changes the bytes but keeps the schema.
  REQUIRE(cli("run --config " + cfg + " --seed 2 --out " + (work / "b").string()) == 0);
  CHECK(slurp(work / "a" / "metrics.csv") != slurp(work / "b" / "metrics.csv"));

  // Overrides reach the config.
  REQUIRE(cli("run --config " + cfg + " --seed 1 --override n_epochs=5 --out " +
              (work / "c").string()) == 0);
  {
    std::ifstream in(work / "c" / "metrics.csv");
    grimgep::RunResult r = grimgep::read_metrics_csv(in);
    CHECK(r.epochs.size() == 5);
  }

  // Bad configs fail before writing anything.
  CHECK(cli("run --config " + cfg + " --override alpha=0.5 --out " + (work / "bad").string()) !=
        0);
  CHECK(!fs::exists(work / "bad" / "metrics.csv"));

  // compare groups by configuration and emits the summary schema; pairwise
  // Welch rows appear once two distinct configurations are present.
  REQUIRE(cli("run --config " + cfg + " --seed 1 --override wrap_grimgep=false --out " +
              (work / "p1").string()) == 0);
  REQUIRE(cli("run --config " + cfg + " --seed 2 --override wrap_grimgep=false --out " +
              (work / "p2").string()) == 0);
  REQUIRE(cli("compare --runs " + (work / "a").string() + " " + (work / "b").string() + " " +
              (work / "p1").string() + " " + (work / "p2").string() + " --out " +
              (work / "summary.csv").string()) == 0);
  std::string summary = slurp(work / "summary.csv");
  CHECK(summary.rfind("kind,config_a,config_b,epoch,metric,", 0) == 0);
  CHECK(summary.find("welch,") != std::string::npos);
  CHECK(summary.find("final,") != std::string::npos);

  fs::remove_all(work);
}

TEST_CASE("cli: ablate produces both variants and a summary") {
  fs::path work = fs::temp_directory_path() / "grimgep_cli_ablate";
  fs::remove_all(work);
  std::string cfg = std::string(GRIMGEP_CONFIG_DIR) + "/smoke.cfg";
  REQUIRE(cli("ablate --config " + cfg + " --seeds 2 --jobs 2 --out " + work.string()) == 0);
  CHECK(fs::exists(work / "lp_seed0" / "metrics.csv"));
  CHECK(fs::exists(work / "lp_seed1" / "metrics.csv"));
  CHECK(fs::exists(work / "uni_seed0" / "metrics.csv"));
  CHECK(fs::exists(work / "uni_seed1" / "metrics.csv"));
  std::string summary = slurp(work / "summary.csv");
  CHECK(summary.find("grim-lp-countbased") != std::string::npos);
  CHECK(summary.find("grim-uni-countbased") != std::string::npos);
  fs::remove_all(work);
}
