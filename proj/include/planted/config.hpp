#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "planted/errors.hpp"

namespace planted::experiment {

using nlohmann::json;

inline const std::vector<std::string>& known_scenarios() {
  static const std::vector<std::string> s = {
      "landscape-obo", "landscape-simul", "refine",     "halfspaces",
      "delta-scan",    "corrgraph",       "exp-ascent", "even"};
  return s;
}

// Default configuration tree; every leaf is a recognized key.
inline json default_config() {
  return json{
      {"scenario", "landscape-obo"},
      {"seed", 1},
      {"samples", 1000000},
      {"threads", 0},
      {"out", "out"},
      {"network",
       {{"file", ""},
        {"n", 8},
        {"d", 8},
        {"weights", "orthonormal"},  // orthonormal | conditioned | angled | supports
        {"kappa", 2.0},
        {"min_angle_deg", 60.0},
        {"max_angle_deg", 110.0},
        {"support_size", 6},
        {"supports", json::array()},
        {"label_noise", 0.0},
        {"activation",
         {{"kind", "sign"},
          {"t", -1.0},  // negative: choose from (eta, scale_c)
          {"eta", 1.0},
          {"scale_c", 2.0},
          {"rate", 0.25},
          {"clamp", 25.0}}},
        {"polynomial",
         {{"preset", "linear-pairs"},  // linear | linear-pairs | or | terms
          {"linear", 1.0},
          {"pair", 0.5},
          {"c0", 0.0},
          {"terms", json::array()}}}}},
      {"landscape",
       {{"lambda", 0.0},
        {"lambda_scale", 2.0},
        {"gamma", 0.01},
        {"epsilon", 1e-4},
        {"tau", 1e-3},
        {"restarts", 0},
        {"max_iterations", 400},
        {"step_init", 1.0},
        {"dedup_cos", 0.9}}},
      {"refine",
       {{"eps1", 0.02},
        {"eps2_deg", 1.0},
        {"max_outer", 400},
        {"budget", 100000},
        {"c_acc", 0.004},
        {"perturb_scale", 0.1},
        {"t_resolution", 1e-3},
        {"refresh_after", 10},
        {"start_angle_deg", 10.0}}},
      {"delta",
       {{"eps_outer", 5e-4},
        {"eps_inner", 5e-5},
        {"budget", 100000},
        {"random_candidates", 50},
        {"eps3", 0.0}}},
      {"graph", {{"rho", 0.0}, {"export", true}}},
      {"exp_ascent",
       {{"lambda", 0.0},
        {"gamma", 0.0},
        {"restarts", 4},
        {"f_max", 2000.0},
        {"biased_samples", 200000},
        {"trust_mass", 0.25}}},
      {"even",
       {{"grid", 50}, {"grid_budget", 200000}, {"recover", false}, {"restarts", 0}}},
      {"sweep", {{"key", ""}, {"values", json::array()}}},
      {"accept",
       {{"max_angle_deg", 15.0},
        {"min_abs_cos", 0.9},
        {"gap_ratio", 2.0},
        {"peak_ratio", 5.0},
        {"sigma_multiple", 3.0}}},
  };
}

namespace detail {

inline int edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

inline std::string suggest_key(const std::string& key, const json& section) {
  std::string best;
  int best_dist = 3;  // suggest only close misses
  for (const auto& [k, v] : section.items()) {
    const int dist = edit_distance(key, k);
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

// Merge user values over defaults, validating keys recursively and recording
// per-leaf provenance.
inline void merge_section(json& resolved, const json& user, const std::string& prefix,
                          std::map<std::string, std::string>& provenance) {
  if (!user.is_object())
    throw config_error("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    if (!resolved.contains(key)) {
      std::string msg = "unknown config key '" + prefix + key + "'";
      const std::string hint = suggest_key(key, resolved);
      if (!hint.empty()) msg += " (did you mean '" + prefix + hint + "'?)";
      throw config_error(msg);
    }
    if (resolved[key].is_object() && !value.is_null()) {
      merge_section(resolved[key], value, prefix + key + ".", provenance);
    } else {
      resolved[key] = value;
      provenance[prefix + key] = "user";
    }
  }
}

inline void record_defaults(const json& resolved, const std::string& prefix,
                            std::map<std::string, std::string>& provenance) {
  for (const auto& [key, value] : resolved.items()) {
    const std::string path = prefix + key;
    if (value.is_object()) {
      record_defaults(value, path + ".", provenance);
    } else if (!provenance.count(path)) {
      provenance[path] = "default";
    }
  }
}

}  // namespace detail

// Fully resolved experiment configuration: defaults applied, every key
// validated, provenance of each leaf recorded.
struct ExperimentConfig {
  json resolved;
  std::map<std::string, std::string> provenance;

  std::string scenario() const { return resolved.at("scenario").get<std::string>(); }
  std::uint64_t seed() const { return resolved.at("seed").get<std::uint64_t>(); }
  std::int64_t samples() const { return resolved.at("samples").get<std::int64_t>(); }
  int threads() const { return resolved.at("threads").get<int>(); }
  std::string out_dir() const { return resolved.at("out").get<std::string>(); }

  std::string serialize() const { return resolved.dump(2); }

  std::string config_hash() const {
    // FNV-1a 64 over the canonical serialization
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : resolved.dump()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

inline ExperimentConfig parse_config(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  cfg.resolved = default_config();
  detail::merge_section(cfg.resolved, user, "", cfg.provenance);
  detail::record_defaults(cfg.resolved, "", cfg.provenance);
  const auto& sc = known_scenarios();
  const std::string scenario = cfg.scenario();
  if (std::find(sc.begin(), sc.end(), scenario) == sc.end())
    throw config_error("unknown scenario '" + scenario + "'");
  // required positive tolerances
  for (const char* path : {"/landscape/epsilon", "/landscape/tau", "/refine/eps1",
                           "/refine/eps2_deg", "/delta/eps_outer", "/delta/eps_inner"}) {
    if (!(cfg.resolved.at(json::json_pointer(path)).get<double>() > 0))
      throw config_error(std::string("config value must be positive: ") + path);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream f(tmp);
    if (!f) throw std::runtime_error("cannot open " + tmp.string());
    f << content;
  }
  fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// Plot-ready curves: comma-separated, header "sweep,metric,stderr".
// ---------------------------------------------------------------------------

struct CurvePoint {
  double sweep = 0.0;
  double metric = 0.0;
  double std_error = 0.0;
};

inline std::string format_curve(const std::vector<CurvePoint>& points) {
  if (points.empty()) throw std::invalid_argument("format_curve: no data points");
  std::string out = "sweep,metric,stderr\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.sweep, p.metric, p.std_error);
    out += buf;
  }
  return out;
}

inline void emit_curve(const std::vector<CurvePoint>& points, const std::string& path) {
  write_file_atomic(path, format_curve(points));
}

inline std::vector<CurvePoint> parse_curve(const std::string& text) {
  std::vector<CurvePoint> out;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "sweep,metric,stderr")
    throw std::runtime_error("parse_curve: missing header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CurvePoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.sweep, &p.metric, &p.std_error) != 3)
      throw std::runtime_error("parse_curve: bad row '" + line + "'");
    out.push_back(p);
  }
  return out;
}

// Multi-seed merge: group points by sweep value; per point the mean of the
// per-seed metrics and their sample standard error.
inline std::vector<CurvePoint> merge_curves(const std::vector<std::vector<CurvePoint>>& runs) {
  std::map<double, std::vector<double>> groups;
  for (const auto& run : runs)
    for (const auto& p : run) groups[p.sweep].push_back(p.metric);
  std::vector<CurvePoint> out;
  for (const auto& [sweep, vals] : groups) {
    CurvePoint p;
    p.sweep = sweep;
    double sum = 0, sumsq = 0;
    for (double v : vals) {
      sum += v;
      sumsq += v * v;
    }
    const double n = static_cast<double>(vals.size());
    p.metric = sum / n;
    if (vals.size() >= 2) {
      const double var = std::max(0.0, (sumsq - n * p.metric * p.metric) / (n - 1));
      p.std_error = std::sqrt(var / n);
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace planted::experiment
