#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grimgep/env.hpp"
#include "grimgep/rng.hpp"

namespace grimgep {

// Flat experiment configuration. The on-disk format is one `key = value` line
// per field, keys matching the field names below; '#' starts a comment.
struct ExperimentConfig {
  std::string strategy = "countbased";      // uniform | countbased | skewfit
  bool wrap_grimgep = false;
  std::string cluster_sampling = "alp";     // alp | uniform-ablation
  double alpha = -1.0;                      // skew exponent in [-1, 0]
  double T = 5.0;                           // bandit sharpness
  int l = 50;                               // cluster history length (epochs)
  int d = 8;                                // reward/novelty latent dimension
  int cluster_d = 3;                        // clustering subspace dimension (<= d)
  std::vector<int> candidate_ks = {1, 3, 5, 7, 9, 11, 13, 15, 17, 19};
  int n_epochs = 1000;
  int goals_per_epoch = 10;
  int n_warmup = 50;
  int start_exploration = 100;
  int episode_length = 50;
  std::uint64_t seed = 0;
  // environment constants
  int image_size = 24;
  double max_step = 0.1;
  double grab_radius = 0.15;
  double tv_radius = 0.15;
  double doorway_width = 0.2;
  double tv_resample_prob = 0.1;
  // machinery constants
  int buffer_capacity = 200000;
  int pca_fit_samples = 2048;
  int cluster_fit_samples = 512;  // states sampled for the per-epoch GMM refit
  double kde_bandwidth = 0.5;
  int kde_support = 512;
  double epsilon_reg = 1e-6;
};

inline EnvParams env_params(const ExperimentConfig& cfg) {
  EnvParams p;
  p.image_size = cfg.image_size;
  p.max_step = cfg.max_step;
  p.grab_radius = cfg.grab_radius;
  p.tv_radius = cfg.tv_radius;
  p.doorway_width = cfg.doorway_width;
  p.tv_resample_prob = cfg.tv_resample_prob;
  return p;
}

inline void validate_config(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (cfg.strategy != "uniform" && cfg.strategy != "countbased" && cfg.strategy != "skewfit") {
    fail("strategy must be uniform, countbased or skewfit");
  }
  if (cfg.cluster_sampling != "alp" && cfg.cluster_sampling != "uniform-ablation") {
    fail("cluster_sampling must be alp or uniform-ablation");
  }
  if (!(cfg.alpha >= -1.0 && cfg.alpha <= 0.0)) fail("alpha must lie in [-1, 0]");
  if (!(cfg.T > 0.0)) fail("T must be positive");
  if (cfg.l < 1) fail("l must be positive");
  if (cfg.d < 1) fail("d must be positive");
  if (cfg.cluster_d < 1 || cfg.cluster_d > cfg.d) fail("cluster_d must lie in [1, d]");
  if (cfg.candidate_ks.empty()) fail("candidate_ks must be nonempty");
  for (int k : cfg.candidate_ks) {
    if (k < 1) fail("candidate_ks entries must be positive");
  }
  if (cfg.n_epochs < 1) fail("n_epochs must be positive");
  if (cfg.goals_per_epoch < 1) fail("goals_per_epoch must be positive");
  if (cfg.n_warmup < 1) fail("n_warmup must be positive");
  if (cfg.start_exploration < 0) fail("start_exploration must be nonnegative");
  if (cfg.start_exploration > cfg.n_epochs) fail("start_exploration must be <= n_epochs");
  if (cfg.episode_length < 1) fail("episode_length must be positive");
  if (cfg.image_size < 6 || cfg.image_size % 2 != 0) fail("image_size must be even and >= 6");
  if (!(cfg.max_step > 0.0)) fail("max_step must be positive");
  if (!(cfg.grab_radius > 0.0)) fail("grab_radius must be positive");
  if (!(cfg.tv_radius > 0.0)) fail("tv_radius must be positive");
  if (!(cfg.doorway_width > 0.0 && cfg.doorway_width <= 1.0)) fail("doorway_width out of range");
  if (!(cfg.tv_resample_prob >= 0.0 && cfg.tv_resample_prob <= 1.0)) {
    fail("tv_resample_prob must lie in [0, 1]");
  }
  if (cfg.buffer_capacity < 1) fail("buffer_capacity must be positive");
  if (cfg.pca_fit_samples < cfg.d) fail("pca_fit_samples must be >= d");
  if (cfg.cluster_fit_samples < 1) fail("cluster_fit_samples must be positive");
  if (!(cfg.kde_bandwidth > 0.0)) fail("kde_bandwidth must be positive");
  if (cfg.kde_support < 1) fail("kde_support must be positive");
  if (!(cfg.epsilon_reg > 0.0)) fail("epsilon_reg must be positive");
}

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoi(tok));
  }
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean '" + v + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Field table shared by the parser, serializer and fingerprint so they can
// never drift apart.
struct FieldOps {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<std::pair<std::string, FieldOps>>& config_fields() {
  static const std::vector<std::pair<std::string, FieldOps>> fields = [] {
    std::vector<std::pair<std::string, FieldOps>> f;
    auto add = [&](const std::string& name, auto setter, auto getter) {
      f.push_back({name, FieldOps{setter, getter}});
    };
    add("strategy", [](ExperimentConfig& c, const std::string& v) { c.strategy = v; },
        [](const ExperimentConfig& c) { return c.strategy; });
    add("wrap_grimgep",
        [](ExperimentConfig& c, const std::string& v) { c.wrap_grimgep = parse_bool(v); },
        [](const ExperimentConfig& c) { return c.wrap_grimgep ? std::string("true") : std::string("false"); });
    add("cluster_sampling",
        [](ExperimentConfig& c, const std::string& v) { c.cluster_sampling = v; },
        [](const ExperimentConfig& c) { return c.cluster_sampling; });
    add("alpha", [](ExperimentConfig& c, const std::string& v) { c.alpha = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.alpha); });
    add("T", [](ExperimentConfig& c, const std::string& v) { c.T = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.T); });
    add("l", [](ExperimentConfig& c, const std::string& v) { c.l = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.l); });
    add("d", [](ExperimentConfig& c, const std::string& v) { c.d = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.d); });
    add("cluster_d",
        [](ExperimentConfig& c, const std::string& v) { c.cluster_d = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.cluster_d); });
    add("candidate_ks",
        [](ExperimentConfig& c, const std::string& v) { c.candidate_ks = split_ints(v); },
        [](const ExperimentConfig& c) { return join_ints(c.candidate_ks); });
    add("n_epochs", [](ExperimentConfig& c, const std::string& v) { c.n_epochs = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.n_epochs); });
    add("goals_per_epoch",
        [](ExperimentConfig& c, const std::string& v) { c.goals_per_epoch = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.goals_per_epoch); });
    add("n_warmup", [](ExperimentConfig& c, const std::string& v) { c.n_warmup = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.n_warmup); });
    add("start_exploration",
        [](ExperimentConfig& c, const std::string& v) { c.start_exploration = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.start_exploration); });
    add("episode_length",
        [](ExperimentConfig& c, const std::string& v) { c.episode_length = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.episode_length); });
    add("seed", [](ExperimentConfig& c, const std::string& v) { c.seed = std::stoull(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.seed); });
    add("image_size",
        [](ExperimentConfig& c, const std::string& v) { c.image_size = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.image_size); });
    add("max_step", [](ExperimentConfig& c, const std::string& v) { c.max_step = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.max_step); });
    add("grab_radius",
        [](ExperimentConfig& c, const std::string& v) { c.grab_radius = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.grab_radius); });
    add("tv_radius", [](ExperimentConfig& c, const std::string& v) { c.tv_radius = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.tv_radius); });
    add("doorway_width",
        [](ExperimentConfig& c, const std::string& v) { c.doorway_width = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.doorway_width); });
    add("tv_resample_prob",
        [](ExperimentConfig& c, const std::string& v) { c.tv_resample_prob = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.tv_resample_prob); });
    add("buffer_capacity",
        [](ExperimentConfig& c, const std::string& v) { c.buffer_capacity = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.buffer_capacity); });
    add("pca_fit_samples",
        [](ExperimentConfig& c, const std::string& v) { c.pca_fit_samples = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.pca_fit_samples); });
    add("cluster_fit_samples",
        [](ExperimentConfig& c, const std::string& v) { c.cluster_fit_samples = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.cluster_fit_samples); });
    add("kde_bandwidth",
        [](ExperimentConfig& c, const std::string& v) { c.kde_bandwidth = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.kde_bandwidth); });
    add("kde_support",
        [](ExperimentConfig& c, const std::string& v) { c.kde_support = std::stoi(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.kde_support); });
    add("epsilon_reg",
        [](ExperimentConfig& c, const std::string& v) { c.epsilon_reg = std::stod(v); },
        [](const ExperimentConfig& c) { return format_double(c.epsilon_reg); });
    return f;
  }();
  return fields;
}

inline const FieldOps& field_ops(const std::string& key) {
  for (const auto& [name, ops] : config_fields()) {
    if (name == key) return ops;
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace detail

inline void apply_config_line(ExperimentConfig& cfg, const std::string& line) {
  std::string body = line.substr(0, line.find('#'));
  body = detail::trim(body);
  if (body.empty()) return;
  std::size_t eq = body.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("config: expected 'key = value', got '" + line + "'");
  }
  std::string key = detail::trim(body.substr(0, eq));
  std::string value = detail::trim(body.substr(eq + 1));
  detail::field_ops(key).set(cfg, value);
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) apply_config_line(cfg, line);
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// key=value override as accepted by the CLI.
inline void apply_override(ExperimentConfig& cfg, const std::string& spec) {
  apply_config_line(cfg, spec);
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [name, ops] : detail::config_fields()) {
    out += name;
    out += " = ";
    out += ops.get(cfg);
    out += '\n';
  }
  return out;
}

// Identifies a configuration up to its seed; runs that differ only by seed
// aggregate together.
inline std::uint64_t config_fingerprint(const ExperimentConfig& cfg) {
  std::string canon;
  for (const auto& [name, ops] : detail::config_fields()) {
    if (name == "seed") continue;
    canon += name;
    canon += '=';
    canon += ops.get(cfg);
    canon += ';';
  }
  return hash_label(canon);
}

// Short human label used in summary tables.
inline std::string config_label(const ExperimentConfig& cfg) {
  std::string label;
  if (cfg.wrap_grimgep) {
    label += cfg.cluster_sampling == "alp" ? "grim-lp-" : "grim-uni-";
  }
  label += cfg.strategy;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "(a=%g)", cfg.alpha);
  if (cfg.strategy != "uniform") label += buf;
  return label;
}

}  // namespace grimgep
