#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "hoflow/config.hpp"
#include "hoflow/core.hpp"
#include "hoflow/gaussian_path.hpp"

namespace hoflow {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CheckRow {
  std::string check;
  double t = kNaN;
  Vec x;
  double lhs = kNaN, rhs = kNaN, ratio = kNaN;
  Verdict verdict = Verdict::Pass;
};

struct CheckResult {
  std::string suite;
  std::string name;
  Verdict verdict = Verdict::Pass;
  double fitted_constant = kNaN;
  double worst_ratio = kNaN;
  double witness_t = kNaN;
  std::string note;
  std::vector<CheckRow> rows;
};

struct RateRow {
  std::string regime;
  double t = 0, N = 0;
  double ise = 0;
  double rhs_scale = 0;  // (alpha''^2 log N + beta''^2) N^-rate
  double ratio = 0;
};

struct RateFit {
  std::string regime;
  Vec N;
  Vec mean_normalized;  // mean over times of ise / (alpha''^2 log N + beta''^2)
  LineFit fit;
  double ci_low = kNaN, ci_high = kNaN;  // 95% interval for the slope
  double target_slope = 0;
  bool monotone = false;
  bool saturated = false;
  double endpoint_ratio = kNaN;  // mean(N_max) / mean(N_min)
  double endpoint_bound = kNaN;  // (N_min / N_max)^{eta/2}
};

struct DistanceRow {
  std::string source;  // model | exact | baseline
  int order = 1;
  int steps = 0;
  double W1 = 0, W2 = 0;
};

struct IntervalRow {
  int order = 1;
  double t_lo = 0, t_hi = 0, loss = 0;
};

// Numbers in CSV files use %.17g so that files round-trip and reruns compare byte for byte.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline nlohmann::json json_vec(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(json_number(x));
  return a;
}

struct ExperimentReport {
  std::string command;
  std::map<std::string, std::string> config;
  std::string config_hash;
  std::vector<CheckResult> checks;
  std::vector<RateRow> rate_rows;
  std::vector<RateFit> rate_fits;
  std::map<std::string, double> constants;
  std::vector<DistanceRow> distances;
  std::vector<IntervalRow> intervals;
  std::vector<std::string> errors;  // stage failures that halted a pipeline
  std::vector<std::string> artifacts;
  double seconds = 0;
  int jobs = 1;

  explicit ExperimentReport(std::string cmd = "", const ExperimentConfig* cfg = nullptr) : command(std::move(cmd)) {
    if (cfg) {
      config = cfg->values();
      config_hash = cfg->hash();
    }
  }

  bool pass() const {
    if (!errors.empty()) return false;
    for (const auto& c : checks)
      if (c.verdict == Verdict::Fail) return false;
    return true;
  }

  int count(Verdict v) const {
    int n = 0;
    for (const auto& c : checks) n += c.verdict == v;
    return n;
  }

  std::size_t x_dim() const {
    std::size_t d = 0;
    for (const auto& c : checks)
      for (const auto& r : c.rows) d = std::max(d, r.x.size());
    return d;
  }

  // check, t, x0.., lhs, rhs, ratio, pass
  std::string bounds_csv() const {
    const std::size_t d = x_dim();
    std::string s = "check,t";
    for (std::size_t i = 0; i < d; ++i) s += ",x" + std::to_string(i);
    s += ",lhs,rhs,ratio,pass\n";
    for (const auto& c : checks)
      for (const auto& r : c.rows) {
        s += r.check + "," + fmt(r.t);
        for (std::size_t i = 0; i < d; ++i) s += "," + (i < r.x.size() ? fmt(r.x[i]) : std::string());
        s += "," + fmt(r.lhs) + "," + fmt(r.rhs) + "," + fmt(r.ratio) + "," + to_string(r.verdict) + "\n";
      }
    return s;
  }

  std::string rate_csv() const {
    std::string s = "regime,t,N,ise,rhs_scale,ratio\n";
    for (const auto& r : rate_rows)
      s += r.regime + "," + fmt(r.t) + "," + fmt(r.N) + "," + fmt(r.ise) + "," + fmt(r.rhs_scale) + "," + fmt(r.ratio) + "\n";
    return s;
  }

  std::string distances_csv() const {
    std::string s = "source,order,steps,W1,W2\n";
    for (const auto& r : distances)
      s += r.source + "," + std::to_string(r.order) + "," + std::to_string(r.steps) + "," + fmt(r.W1) + "," + fmt(r.W2) + "\n";
    return s;
  }

  std::string intervals_csv() const {
    std::string s = "order,t_lo,t_hi,loss\n";
    for (const auto& r : intervals)
      s += std::to_string(r.order) + "," + fmt(r.t_lo) + "," + fmt(r.t_hi) + "," + fmt(r.loss) + "\n";
    return s;
  }

  nlohmann::json to_json() const {
    using nlohmann::json;
    json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["config"] = config;
    j["pass"] = pass();
    j["summary"] = {{"pass", count(Verdict::Pass)},
                    {"fail", count(Verdict::Fail)},
                    {"not_applicable", count(Verdict::NotApplicable)}};
    json checks_j = json::array();
    for (const auto& c : checks) {
      json cj = {{"suite", c.suite},
                 {"name", c.name},
                 {"verdict", to_string(c.verdict)},
                 {"fitted_constant", json_number(c.fitted_constant)},
                 {"worst_ratio", json_number(c.worst_ratio)},
                 {"witness_t", json_number(c.witness_t)},
                 {"note", c.note}};
      json rows = json::array();
      for (const auto& r : c.rows)
        rows.push_back({{"check", r.check},
                        {"t", json_number(r.t)},
                        {"x", json_vec(r.x)},
                        {"lhs", json_number(r.lhs)},
                        {"rhs", json_number(r.rhs)},
                        {"ratio", json_number(r.ratio)},
                        {"verdict", to_string(r.verdict)}});
      cj["rows"] = rows;
      checks_j.push_back(cj);
    }
    j["checks"] = checks_j;
    json rates = json::array();
    for (const auto& r : rate_rows)
      rates.push_back({{"regime", r.regime},
                       {"t", r.t},
                       {"N", r.N},
                       {"ise", json_number(r.ise)},
                       {"rhs_scale", json_number(r.rhs_scale)},
                       {"ratio", json_number(r.ratio)}});
    j["rate_table"] = rates;
    json fits = json::array();
    for (const auto& f : rate_fits)
      fits.push_back({{"regime", f.regime},
                      {"N", json_vec(f.N)},
                      {"mean_normalized_ise", json_vec(f.mean_normalized)},
                      {"slope", json_number(f.fit.slope)},
                      {"slope_ci", {json_number(f.ci_low), json_number(f.ci_high)}},
                      {"r2", json_number(f.fit.r2)},
                      {"target_slope", f.target_slope},
                      {"monotone", f.monotone},
                      {"saturated", f.saturated},
                      {"endpoint_ratio", json_number(f.endpoint_ratio)},
                      {"endpoint_bound", json_number(f.endpoint_bound)}});
    j["rate_fits"] = fits;
    json consts = json::object();
    for (const auto& [k, v] : constants) consts[k] = json_number(v);
    j["fitted_constants"] = consts;
    json dist = json::array();
    for (const auto& r : distances)
      dist.push_back({{"source", r.source}, {"order", r.order}, {"steps", r.steps}, {"W1", r.W1}, {"W2", r.W2}});
    j["distances"] = dist;
    json iv = json::array();
    for (const auto& r : intervals) iv.push_back({{"order", r.order}, {"t_lo", r.t_lo}, {"t_hi", r.t_hi}, {"loss", r.loss}});
    j["interval_losses"] = iv;
    j["errors"] = errors;
    j["artifacts"] = artifacts;
    j["runtime"] = {{"seconds", seconds}, {"jobs", jobs}};
    return j;
  }

  // report.json plus one CSV per non-empty table.
  void write(const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto put = [&](const std::string& name, const std::string& body) {
      const std::string path = (std::filesystem::path(dir) / name).string();
      std::ofstream os(path, std::ios::binary);
      if (!os) throw ConfigError("report: cannot write " + path);
      os << body;
      artifacts.push_back(name);
    };
    if (!checks.empty()) put("bounds.csv", bounds_csv());
    if (!rate_rows.empty()) put("rate.csv", rate_csv());
    if (!distances.empty()) put("distances.csv", distances_csv());
    if (!intervals.empty()) put("intervals.csv", intervals_csv());
    put("report.json", to_json().dump(2) + "\n");
  }
};

}  // namespace hoflow
