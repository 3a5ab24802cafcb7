// Command-line front end for the goal-exploration laboratory: single runs,
// cross-configuration comparison tables, and the LP-vs-uniform cluster
// sampling ablation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grimgep/grimgep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json(const grimgep::ExperimentConfig& cfg) {
  json j;
  for (const auto& [name, ops] : grimgep::detail::config_fields()) {
    j[name] = ops.get(cfg);
  }
  char fp[32];
  std::snprintf(fp, sizeof(fp), "%016llx",
                static_cast<unsigned long long>(grimgep::config_fingerprint(cfg)));
  j["fingerprint"] = fp;
  j["label"] = grimgep::config_label(cfg);
  return j;
}

grimgep::ExperimentConfig config_from_json(const json& j) {
  grimgep::ExperimentConfig cfg;
  for (const auto& [name, ops] : grimgep::detail::config_fields()) {
    if (j.contains(name)) ops.set(cfg, j.at(name).get<std::string>());
  }
  return cfg;
}

void write_run_outputs(const fs::path& dir, const grimgep::RunResult& result) {
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "metrics.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    grimgep::write_metrics_csv(csv, result);
  }
  {
    std::ofstream cfg_out(dir / "config.json", std::ios::binary);
    cfg_out << config_to_json(result.config).dump(2) << '\n';
  }
}

grimgep::RunResult load_run(const fs::path& dir) {
  std::ifstream cfg_in(dir / "config.json");
  if (!cfg_in) throw std::runtime_error("missing config.json in " + dir.string());
  json j;
  cfg_in >> j;
  std::ifstream csv(dir / "metrics.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("missing metrics.csv in " + dir.string());
  grimgep::RunResult result = grimgep::read_metrics_csv(csv);
  std::uint64_t seed_from_rows = result.config.seed;
  result.config = config_from_json(j);
  result.config.seed = seed_from_rows;
  result.fingerprint = grimgep::config_fingerprint(result.config);
  return result;
}

int run_many(std::vector<grimgep::ExperimentConfig> configs, std::vector<fs::path> dirs,
             int jobs) {
  std::mutex io_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&]() {
    for (;;) {
      std::size_t index;
      {
        std::lock_guard lock(next_mutex);
        if (next >= configs.size()) return;
        index = next++;
      }
      grimgep::RunResult result = grimgep::run_experiment(configs[index]);
      write_run_outputs(dirs[index], result);
      std::lock_guard lock(io_mutex);
      std::cerr << "finished " << grimgep::config_label(configs[index]) << " seed "
                << configs[index].seed << " in " << static_cast<int>(result.wall_seconds)
                << " s -> " << dirs[index].string() << '\n';
    }
  };
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return 0;
}

int compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_path) {
  std::map<std::uint64_t, std::vector<grimgep::RunResult>> groups;
  for (const std::string& dir : run_dirs) {
    grimgep::RunResult r = load_run(dir);
    groups[r.fingerprint].push_back(std::move(r));
  }
  std::vector<grimgep::SeedAggregate> aggregates;
  for (auto& [fp, runs] : groups) {
    aggregates.push_back(grimgep::aggregate_seeds(runs));
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  grimgep::write_summary_csv(out, aggregates);
  std::cerr << "wrote " << out_path << " (" << aggregates.size() << " configurations)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"goal-exploration laboratory"};
  app.require_subcommand(1);

  // --- run ---
  auto* run_cmd = app.add_subcommand("run", "run one experiment");
  std::string run_config_path;
  std::string run_out_dir = "out";
  std::vector<std::string> run_overrides;
  std::uint64_t run_seed = 0;
  run_cmd->add_option("--config", run_config_path, "config file (key = value lines)");
  auto* seed_opt = run_cmd->add_option("--seed", run_seed, "master seed (overrides the file)");
  run_cmd->add_option("--out", run_out_dir, "output directory");
  run_cmd->add_option("--override", run_overrides, "extra key=value overrides");

  // --- compare ---
  auto* cmp_cmd = app.add_subcommand("compare", "aggregate runs and emit a summary table");
  std::vector<std::string> cmp_dirs;
  std::string cmp_out = "summary.csv";
  cmp_cmd->add_option("--runs", cmp_dirs, "run directories (each with metrics.csv)")->required();
  cmp_cmd->add_option("--out", cmp_out, "summary csv path");

  // --- ablate ---
  auto* abl_cmd = app.add_subcommand("ablate", "learning-progress vs uniform cluster sampling");
  std::string abl_config_path;
  std::string abl_out_dir = "ablation";
  int abl_seeds = 10;
  int abl_jobs = static_cast<int>(std::thread::hardware_concurrency());
  std::vector<std::string> abl_overrides;
  abl_cmd->add_option("--config", abl_config_path, "base config file");
  abl_cmd->add_option("--seeds", abl_seeds, "number of seeds per variant");
  abl_cmd->add_option("--out", abl_out_dir, "output directory");
  abl_cmd->add_option("--jobs", abl_jobs, "parallel runs");
  abl_cmd->add_option("--override", abl_overrides, "extra key=value overrides");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      grimgep::ExperimentConfig cfg;
      if (!run_config_path.empty()) cfg = grimgep::load_config_file(run_config_path);
      for (const std::string& o : run_overrides) grimgep::apply_override(cfg, o);
      if (seed_opt->count() > 0) cfg.seed = run_seed;
      grimgep::validate_config(cfg);
      grimgep::RunResult result = grimgep::run_experiment(cfg);
      write_run_outputs(run_out_dir, result);
      std::cerr << "wrote " << run_out_dir << "/metrics.csv (" << result.epochs.size()
                << " epochs, " << static_cast<int>(result.wall_seconds) << " s)\n";
      return 0;
    }
    if (cmp_cmd->parsed()) {
      return compare_runs(cmp_dirs, cmp_out);
    }
    if (abl_cmd->parsed()) {
      grimgep::ExperimentConfig base;
      if (!abl_config_path.empty()) base = grimgep::load_config_file(abl_config_path);
      for (const std::string& o : abl_overrides) grimgep::apply_override(base, o);
      base.wrap_grimgep = true;
      std::vector<grimgep::ExperimentConfig> configs;
      std::vector<fs::path> dirs;
      std::vector<std::string> run_dirs;
      for (const std::string& sampling : {"alp", "uniform-ablation"}) {
        for (int s = 0; s < abl_seeds; ++s) {
          grimgep::ExperimentConfig cfg = base;
          cfg.cluster_sampling = sampling;
          cfg.seed = static_cast<std::uint64_t>(s);
          grimgep::validate_config(cfg);
          fs::path dir = fs::path(abl_out_dir) /
                         ((sampling == "alp" ? "lp_seed" : "uni_seed") + std::to_string(s));
          configs.push_back(cfg);
          dirs.push_back(dir);
          run_dirs.push_back(dir.string());
        }
      }
      run_many(std::move(configs), std::move(dirs), abl_jobs);
      return compare_runs(run_dirs, (fs::path(abl_out_dir) / "summary.csv").string());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
