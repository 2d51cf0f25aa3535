#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hoflow/core.hpp"
#include "hoflow/density.hpp"
#include "hoflow/schedule.hpp"
#include "hoflow/trainer.hpp"

namespace hoflow {

enum class KeyType { Number, Integer, Numbers, Names, Text, Flag };

struct KeySpec {
  const char* key;
  KeyType type;
  const char* value;  // default
  bool positive;      // numeric values (or every list entry) must be > 0
};

// Every accepted key with its default. Unknown keys are rejected.
inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"seed", KeyType::Integer, "1", false},
      {"density.kind", KeyType::Text, "bump", false},  // uniform | bump | mixture | gaussian
      {"density.d", KeyType::Integer, "1", true},
      {"density.floor", KeyType::Number, "0.5", true},
      {"density.center", KeyType::Number, "0", false},
      {"density.radius", KeyType::Number, "0.5", true},
      {"density.gamma", KeyType::Number, "0.5", false},
      {"density.sigma", KeyType::Number, "0.5", true},
      {"density.means", KeyType::Numbers, "-0.5,0.5", false},
      {"schedule.kind", KeyType::Text, "power-law", false},  // linear | power-law | custom-coefficients
      {"schedule.b0", KeyType::Number, "1", false},
      {"schedule.kappa", KeyType::Number, "0.5", false},
      {"schedule.b0_tilde", KeyType::Number, "1", false},
      {"schedule.kappa_tilde", KeyType::Number, "1", false},
      // custom-coefficients: alpha_t = alpha0 + alpha_slope t, beta_t = beta0 + beta_slope t
      {"schedule.alpha0", KeyType::Number, "1", false},
      {"schedule.alpha_slope", KeyType::Number, "-1", false},
      {"schedule.beta0", KeyType::Number, "0", false},
      {"schedule.beta_slope", KeyType::Number, "1", false},
      {"grid.N", KeyType::Number, "256", true},
      {"grid.R0", KeyType::Number, "4", true},
      {"grid.delta", KeyType::Number, "0.1", true},
      {"constants.s", KeyType::Number, "1", true},
      {"constants.omega", KeyType::Number, "0.5", true},
      {"constants.eta", KeyType::Number, "2", true},
      {"constants.C5", KeyType::Number, "3", true},
      {"constants.Cb", KeyType::Number, "3", true},
      {"constants.K0", KeyType::Number, "1", true},
      {"constants.gamma", KeyType::Number, "1", true},
      {"constants.D0", KeyType::Number, "2", true},
      {"constants.eps_gadget", KeyType::Number, "0.001", true},
      {"regime.boundary", KeyType::Text, "auto", false},  // "auto" = 3 T_*(N) per ladder entry
      {"rate.ladder", KeyType::Numbers, "16,32,64,128,256", true},
      {"rate.regimes", KeyType::Names, "small,large", false},
      {"rate.times", KeyType::Integer, "5", true},
      {"rate.t_star", KeyType::Number, "0.01", true},
      {"rate.fit_smoothness", KeyType::Number, "2", true},
      {"rate.saturation", KeyType::Number, "0.25", true},
      {"verify.suites", KeyType::Names, "all", false},
      {"verify.points", KeyType::Integer, "15", true},
      {"verify.eps", KeyType::Number, "0.1", true},
      {"audit.ladder", KeyType::Numbers, "16,64,256", true},
      {"audit.t", KeyType::Number, "0.3", true},
      {"train.hidden", KeyType::Numbers, "64,64", true},
      {"train.steps", KeyType::Integer, "2000", true},
      {"train.batch", KeyType::Integer, "256", true},
      {"train.lr", KeyType::Number, "0.001", true},
      {"train.momentum", KeyType::Number, "0.9", false},
      {"train.grad_clip", KeyType::Number, "10", false},
      {"train.T0", KeyType::Number, "0.01", true},
      {"train.log_every", KeyType::Integer, "100", true},
      {"train.data", KeyType::Integer, "4096", true},
      {"train.order", KeyType::Integer, "2", true},
      {"train.eval_samples", KeyType::Integer, "1024", true},
      {"train.sample_steps", KeyType::Numbers, "4,16,64", true},
      {"train.interval_samples", KeyType::Integer, "512", true},
      {"train.exact_baseline", KeyType::Flag, "true", false},
      {"output.dir", KeyType::Text, "hoflow-out", false},
      {"output.model", KeyType::Text, "model.txt", false},
  };
  return keys;
}

inline const KeySpec& key_spec(const std::string& key) {
  for (const auto& k : config_keys())
    if (key == k.key) return k;
  throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_number(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(x)) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return x;
}

// Flat key = value configuration with dotted section names and # comments.
class ExperimentConfig {
 public:
  ExperimentConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.value;
  }

  static ExperimentConfig parse(std::istream& is, const std::string& origin = "<config>") {
    ExperimentConfig c;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
      try {
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    c.validate();
    return c;
  }

  static ExperimentConfig from_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    return parse(is, path);
  }

  // Type-checks the value against the key's declared type.
  void set(const std::string& key, const std::string& value) {
    const KeySpec& k = key_spec(key);
    const auto bad_sign = [&](double x) { return k.positive && !(x > 0); };
    switch (k.type) {
      case KeyType::Number:
        if (bad_sign(parse_number(key, value))) throw ConfigError("config: " + key + " must be positive");
        break;
      case KeyType::Integer: {
        const double x = parse_number(key, value);
        if (x != std::floor(x)) throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
        if (bad_sign(x)) throw ConfigError("config: " + key + " must be positive");
        break;
      }
      case KeyType::Numbers: {
        const auto items = split_list(value);
        if (items.empty()) throw ConfigError("config: " + key + " expects a comma-separated list");
        for (const auto& it : items)
          if (bad_sign(parse_number(key, it))) throw ConfigError("config: " + key + " entries must be positive");
        break;
      }
      case KeyType::Names:
        if (split_list(value).empty()) throw ConfigError("config: " + key + " expects a comma-separated list");
        break;
      case KeyType::Flag:
        if (value != "true" && value != "false") throw ConfigError("config: " + key + " expects true or false");
        break;
      case KeyType::Text:
        if (value.empty()) throw ConfigError("config: " + key + " is empty");
        break;
    }
    values_[key] = value;
  }

  void validate() const {
    const Vec ladder = numbers("rate.ladder");
    for (std::size_t i = 1; i < ladder.size(); ++i)
      if (!(ladder[i] > ladder[i - 1])) throw ConfigError("config: rate.ladder must be strictly increasing");
    const Vec audit = numbers("audit.ladder");
    for (std::size_t i = 1; i < audit.size(); ++i)
      if (!(audit[i] > audit[i - 1])) throw ConfigError("config: audit.ladder must be strictly increasing");
    const std::string b = text("regime.boundary");
    if (b != "auto" && !(parse_number("regime.boundary", b) > 0))
      throw ConfigError("config: regime.boundary must be 'auto' or a positive time");
    const int order = integer("train.order");
    if (order != 1 && order != 2) throw ConfigError("config: train.order must be 1 or 2");
  }

  const std::string& text(const std::string& key) const {
    key_spec(key);
    return values_.at(key);
  }
  double number(const std::string& key) const { return parse_number(key, text(key)); }
  int integer(const std::string& key) const { return static_cast<int>(number(key)); }
  bool flag(const std::string& key) const { return text(key) == "true"; }
  Vec numbers(const std::string& key) const {
    Vec out;
    for (const auto& it : split_list(text(key))) out.push_back(parse_number(key, it));
    return out;
  }
  std::vector<std::string> names(const std::string& key) const { return split_list(text(key)); }

  const std::map<std::string, std::string>& values() const { return values_; }

  // FNV-1a (64 bit) over the sorted "key=value" lines of the resolved config.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [k, v] : values_)
      for (char c : k + "=" + v + "\n") {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
      }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  Density density() const {
    const std::string kind = text("density.kind");
    const int d = integer("density.d");
    if (kind == "uniform") return Density::uniform(d);
    if (kind == "gaussian") return Density::gaussian_reference(d, number("density.sigma"));
    if (kind == "bump") {
      BumpParams b;
      b.floor = number("density.floor");
      b.center = number("density.center");
      b.radius = number("density.radius");
      b.gamma = number("density.gamma");
      return Density::bump_product(d, b);
    }
    if (kind == "mixture") {
      std::vector<MixtureComponent> comps;
      for (double m : numbers("density.means")) comps.push_back({1.0, Vec(d, m), number("density.sigma")});
      return Density::mixture(d, comps);
    }
    throw ConfigError("config: density.kind must be uniform, bump, mixture or gaussian");
  }

  Schedule schedule() const {
    const std::string kind = text("schedule.kind");
    if (kind == "linear") return Schedule::linear();
    if (kind == "power-law")
      return Schedule::power_law(number("schedule.b0"), number("schedule.kappa"), number("schedule.b0_tilde"),
                                 number("schedule.kappa_tilde"));
    if (kind == "custom-coefficients") {
      const double a0 = number("schedule.alpha0"), a1 = number("schedule.alpha_slope");
      const double b0 = number("schedule.beta0"), b1 = number("schedule.beta_slope");
      CustomCoefficients c;
      c.alpha = [a0, a1](double t) { return a0 + a1 * t; };
      c.alpha1 = [a1](double) { return a1; };
      c.alpha2 = [](double) { return 0.0; };
      c.beta = [b0, b1](double t) { return b0 + b1 * t; };
      c.beta1 = [b1](double) { return b1; };
      c.beta2 = [](double) { return 0.0; };
      return Schedule::custom(c);
    }
    throw ConfigError("config: schedule.kind must be linear, power-law or custom-coefficients");
  }

  TimeGrid grid() const {
    TimeGrid g;
    g.N = number("grid.N");
    g.R0 = number("grid.R0");
    g.delta = number("grid.delta");
    g.d = integer("density.d");
    if (text("schedule.kind") == "power-law") g.kappa = number("schedule.kappa");
    g.validate();
    return g;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.hidden.clear();
    for (double w : numbers("train.hidden")) t.hidden.push_back(static_cast<int>(w));
    t.steps = integer("train.steps");
    t.batch = integer("train.batch");
    t.lr = number("train.lr");
    t.momentum = number("train.momentum");
    t.grad_clip = number("train.grad_clip");
    t.T0 = number("train.T0");
    t.log_every = integer("train.log_every");
    return t;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace hoflow
