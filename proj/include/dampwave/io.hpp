#pragma once

// Sectioned key-value configuration and result records (CSV, JSON lines).
//
// Config files look like
//
//   [scheme]
//   n_modes = 32
//   tau = 0.01
//   eta = 1
//   [run]
//   seed = 7
//
// Lines starting with '#' or ';' are comments. Every key must belong to the
// schema below; anything else is a ConfigError naming "section.key".

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dampwave/errors.hpp"
#include "dampwave/experiments.hpp"
#include "dampwave/integrator.hpp"
#include "dampwave/noise.hpp"
#include "dampwave/nonlinearity.hpp"

namespace dampwave {

inline constexpr const char* kVersion = "dampwave 1.0.0";

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}
}  // namespace detail

// Raw "section.key" -> value map with consumption tracking.
class ConfigTable {
 public:
  static ConfigTable parse(const std::string& text) {
    ConfigTable t;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string s = detail::trim(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError("line " + std::to_string(lineno), "unterminated section header");
        section = detail::trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ConfigError("line " + std::to_string(lineno), "empty section name");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno), "expected key = value");
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno), "key outside of any section");
      const std::string key = section + "." + detail::trim(s.substr(0, eq));
      std::string value = detail::trim(s.substr(eq + 1));
      if (const auto hash = value.find(" #"); hash != std::string::npos) value = detail::trim(value.substr(0, hash));
      if (t.values_.count(key)) throw ConfigError(key, "duplicate key");
      t.values_[key] = value;
    }
    return t;
  }

  static ConfigTable load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string require(const std::string& key) {
    auto v = raw(key);
    if (!v) throw ConfigError(key, "required key is missing");
    return *v;
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected a number, got '" + s + "'");
    }
  }

  static std::size_t to_size(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
      const unsigned long long x = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
      throw ConfigError(key, "expected a nonnegative integer, got '" + s + "'");
    }
  }

  double number(const std::string& key) { return to_double(key, require(key)); }
  std::optional<double> number_opt(const std::string& key) {
    auto v = raw(key);
    return v ? std::optional<double>(to_double(key, *v)) : std::nullopt;
  }
  double number_or(const std::string& key, double fallback) { return number_opt(key).value_or(fallback); }

  std::size_t count(const std::string& key) { return to_size(key, require(key)); }
  std::size_t count_or(const std::string& key, std::size_t fallback) {
    auto v = raw(key);
    return v ? to_size(key, *v) : fallback;
  }

  std::uint64_t seed(const std::string& key) {
    const std::string s = require(key);
    try {
      std::size_t pos = 0;
      if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
      const unsigned long long x = std::stoull(s, &pos, 0);
      if (pos != s.size()) throw std::invalid_argument(s);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected an unsigned 64-bit seed, got '" + s + "'");
    }
  }

  bool flag_or(const std::string& key, bool fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + *v + "'");
  }

  std::vector<double> numbers(const std::string& key) {
    std::vector<double> out;
    for (const auto& item : detail::split(require(key), ',')) out.push_back(to_double(key, item));
    if (out.empty()) throw ConfigError(key, "empty list");
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& item : detail::split(require(key), ',')) out.push_back(to_size(key, item));
    if (out.empty()) throw ConfigError(key, "empty list");
    return out;
  }

  // Rejects keys outside the schema. Call after all reads.
  void check_known(const std::set<std::string>& schema) const {
    for (const auto& [k, v] : values_)
      if (!schema.count(k)) throw ConfigError(k, "unknown key");
  }

  // Canonical "section.key = value" lines in key order.
  std::vector<std::pair<std::string, std::string>> echo() const {
    return {values_.begin(), values_.end()};
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

inline const std::set<std::string>& config_schema() {
  static const std::set<std::string> keys = {
      "scheme.n_modes", "scheme.tau", "scheme.eta", "scheme.horizon", "scheme.grid_points",
      "scheme.solver", "scheme.tolerance", "scheme.max_iters", "scheme.newton_fallback",
      "noise.kind", "noise.c", "noise.s",
      "nonlinearity.name", "nonlinearity.amplitude", "nonlinearity.alpha", "nonlinearity.epsilon",
      "initial.kind", "initial.amplitude", "initial.u_decay", "initial.v_decay", "initial.mode",
      "initial.v_amplitude",
      "experiment.kind", "experiment.tau_ladder", "experiment.tau_ref", "experiment.n_ladder",
      "experiment.n_ref", "experiment.samples", "experiment.band_lo", "experiment.band_hi",
      "experiment.burn_in", "experiment.horizons", "experiment.replicas", "experiment.observable",
      "experiment.observables", "experiment.n_steps", "experiment.record_every", "experiment.pairs",
      "experiment.pair_amplitude", "experiment.audit_radius", "experiment.audit_samples",
      "experiment.rel_tol", "experiment.z_max", "experiment.min_rate",
      "run.seed", "run.output", "run.format", "run.threads",
  };
  return keys;
}

struct ExperimentConfig {
  SchemeConfig scheme;
  std::optional<double> horizon;
  NoiseSpec noise;
  NonlinearityModel model;
  InitialData initial;
  std::uint64_t seed = 0;
  std::optional<std::string> output;
  std::optional<std::string> format;
  std::optional<std::size_t> threads;
  std::string experiment_kind;
  ConfigTable table;  // remaining experiment.* keys are read by the study builders
  std::vector<std::pair<std::string, std::string>> echo;
  std::uint64_t hash = 0;
};

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline NonlinearityModel model_from_config(ConfigTable& t, double eta) {
  const std::string name = t.require("nonlinearity.name");
  NonlinearityModel m;
  if (name == "zero") {
    m = models::zero();
  } else if (name == "linear") {
    m = models::linear(t.number("nonlinearity.alpha"));
  } else if (name == "sine") {
    m = models::sine(t.number("nonlinearity.amplitude"));
  } else if (name == "arctan") {
    m = models::arctan(t.number("nonlinearity.amplitude"));
  } else if (name == "smoothed_hm") {
    const double eps = t.number("nonlinearity.epsilon");
    if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("nonlinearity.epsilon", "must lie in (0, 0.5)");
    m = models::smoothed_hm(eta, eps);
  } else if (name == "quadratic") {
    m = models::quadratic();
  } else {
    throw ConfigError("nonlinearity.name", "unknown model '" + name + "'");
  }
  // parameters that belong to other models are rejected rather than ignored
  const std::map<std::string, std::string> owner = {
      {"nonlinearity.alpha", "linear"}, {"nonlinearity.amplitude", "sine|arctan"},
      {"nonlinearity.epsilon", "smoothed_hm"}};
  for (const auto& [key, models_] : owner)
    if (t.has(key) && models_.find(name) == std::string::npos)
      throw ConfigError(key, "not a parameter of model '" + name + "'");
  return m;
}

inline InitialData initial_from_config(ConfigTable& t) {
  InitialData d;
  const std::string kind = t.require("initial.kind");
  if (kind == "zero") {
    d.kind = InitialData::Kind::zero;
  } else if (kind == "power_law") {
    d.kind = InitialData::Kind::power_law;
    d.amplitude = t.number("initial.amplitude");
    d.u_decay = t.number("initial.u_decay");
    d.v_decay = t.number("initial.v_decay");
  } else if (kind == "single_mode") {
    d.kind = InitialData::Kind::single_mode;
    d.mode = t.count("initial.mode");
    if (d.mode == 0) throw ConfigError("initial.mode", "modes are numbered from 1");
    d.amplitude = t.number("initial.amplitude");
    d.v_amplitude = t.number_or("initial.v_amplitude", 0.0);
  } else {
    throw ConfigError("initial.kind", "expected zero, power_law or single_mode");
  }
  return d;
}

// Parses and validates everything that does not depend on the subcommand.
inline ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig cfg;
  ConfigTable t = ConfigTable::parse(text);
  t.check_known(config_schema());

  cfg.scheme.n_modes = t.count("scheme.n_modes");
  if (cfg.scheme.n_modes == 0) throw ConfigError("scheme.n_modes", "must be >= 1");
  cfg.scheme.tau = t.number("scheme.tau");
  if (!(cfg.scheme.tau > 0.0 && cfg.scheme.tau < 1.0)) throw ConfigError("scheme.tau", "must lie in (0, 1)");
  cfg.scheme.eta = t.number("scheme.eta");
  if (!(cfg.scheme.eta > 0.0)) throw ConfigError("scheme.eta", "must be positive");
  cfg.horizon = t.number_opt("scheme.horizon");
  if (cfg.horizon && !(*cfg.horizon > 0.0)) throw ConfigError("scheme.horizon", "must be positive");
  cfg.scheme.grid_points = t.count_or("scheme.grid_points", 0);
  if (cfg.scheme.grid_points && cfg.scheme.grid_points < cfg.scheme.n_modes)
    throw ConfigError("scheme.grid_points", "must be 0 or >= n_modes");
  if (auto s = t.raw("scheme.solver")) {
    if (*s == "fixed_point") cfg.scheme.solver.method = SolverMethod::fixed_point;
    else if (*s == "newton") cfg.scheme.solver.method = SolverMethod::newton;
    else throw ConfigError("scheme.solver", "expected fixed_point or newton");
  }
  cfg.scheme.solver.tolerance = t.number_or("scheme.tolerance", 1e-12);
  if (!(cfg.scheme.solver.tolerance > 0.0)) throw ConfigError("scheme.tolerance", "must be positive");
  cfg.scheme.solver.max_iters = t.count_or("scheme.max_iters", 200);
  if (cfg.scheme.solver.max_iters == 0) throw ConfigError("scheme.max_iters", "must be >= 1");
  cfg.scheme.solver.newton_fallback = t.flag_or("scheme.newton_fallback", true);

  const std::string kind = t.require("noise.kind");
  if (kind != "power_law") throw ConfigError("noise.kind", "only power_law is supported");
  const double c = t.number("noise.c"), s = t.number("noise.s");
  if (!(c > 0.0)) throw ConfigError("noise.c", "must be positive");
  cfg.noise = build_power_law_q(c, s, cfg.scheme.n_modes);
  if (!cfg.noise.valid) throw ConfigError("noise.s", "trace condition needs s > 3");

  cfg.model = model_from_config(t, cfg.scheme.eta);
  cfg.initial = initial_from_config(t);
  cfg.seed = t.seed("run.seed");
  if (auto o = t.raw("run.output")) cfg.output = *o;
  if (auto f = t.raw("run.format")) {
    if (*f != "csv" && *f != "json-lines") throw ConfigError("run.format", "expected csv or json-lines");
    cfg.format = *f;
  }
  if (t.has("run.threads")) cfg.threads = t.count("run.threads");
  cfg.experiment_kind = t.raw("experiment.kind").value_or("");

  cfg.echo = t.echo();
  std::string canon;
  for (const auto& [k, v] : cfg.echo) canon += k + "=" + v + "\n";
  cfg.hash = fnv1a(canon);
  cfg.table = std::move(t);
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str());
}

// The damping constraint a1 < (sqrt 2 / 2) eta and a2 > -eta, checked before any run.
inline void validate_model(const ExperimentConfig& cfg) {
  const NonlinearityModel& m = cfg.model;
  if (!m.certified)
    throw ConfigError("nonlinearity.name", "model '" + m.name + "' violates the linear-growth assumption");
  if (!(m.a1 < std::sqrt(2.0) / 2.0 * cfg.scheme.eta))
    throw ConfigError("nonlinearity.name", "growth constant a1 = " + format_double(m.a1) +
                                               " must be below (sqrt 2 / 2) eta");
  if (!(m.a2 > -cfg.scheme.eta))
    throw ConfigError("nonlinearity.name", "monotonicity constant a2 = " + format_double(m.a2) +
                                               " must exceed -eta");
}

struct ResultRecord {
  std::string version = kVersion;
  std::string command;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, std::string>> summary;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  friend bool operator==(const ResultRecord& a, const ResultRecord& b) {
    if (a.version != b.version || a.command != b.command || a.config_hash != b.config_hash ||
        a.config != b.config || a.summary != b.summary || a.columns != b.columns ||
        a.rows.size() != b.rows.size())
      return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      if (a.rows[i].size() != b.rows[i].size()) return false;
      for (std::size_t j = 0; j < a.rows[i].size(); ++j) {
        const double x = a.rows[i][j], y = b.rows[i][j];
        if (!(x == y || (std::isnan(x) && std::isnan(y)))) return false;
      }
    }
    return true;
  }
};

inline ResultRecord make_record(const std::string& command, const ExperimentConfig& cfg,
                                const StudyReport& rep) {
  ResultRecord r;
  r.command = command;
  r.config_hash = hex64(cfg.hash);
  r.config = cfg.echo;
  r.summary = rep.summary;
  r.summary.insert(r.summary.begin(), {"seed", std::to_string(rep.seed)});
  r.columns = rep.columns;
  r.rows = rep.rows;
  return r;
}

inline std::string to_csv(const ResultRecord& r) {
  std::ostringstream out;
  out << "# version: " << r.version << "\n";
  out << "# command: " << r.command << "\n";
  out << "# config_hash: " << r.config_hash << "\n";
  for (const auto& [k, v] : r.config) out << "# config: " << k << " = " << v << "\n";
  for (const auto& [k, v] : r.summary) out << "# summary: " << k << " = " << v << "\n";
  for (std::size_t j = 0; j < r.columns.size(); ++j) out << (j ? "," : "") << r.columns[j];
  out << "\n";
  for (const auto& row : r.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_double(row[j]);
    out << "\n";
  }
  return out.str();
}

namespace detail {
inline double parse_cell(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  // strtod rather than stod: subnormals are representable but stod rejects them
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw IoError("bad numeric cell '" + s + "'");
  return x;
}

inline std::pair<std::string, std::string> split_kv(const std::string& s) {
  const auto p = s.find(" = ");
  if (p == std::string::npos) throw IoError("bad key/value line '" + s + "'");
  return {s.substr(0, p), s.substr(p + 3)};
}
}  // namespace detail

inline ResultRecord parse_csv(const std::string& text) {
  ResultRecord r;
  r.version.clear();
  std::istringstream in(text);
  std::string line;
  bool header = false;
  auto starts = [](const std::string& s, const char* p) { return s.rfind(p, 0) == 0; };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (header) throw IoError("metadata after header row");
      if (starts(line, "# version: ")) r.version = line.substr(11);
      else if (starts(line, "# command: ")) r.command = line.substr(11);
      else if (starts(line, "# config_hash: ")) r.config_hash = line.substr(15);
      else if (starts(line, "# config: ")) r.config.push_back(detail::split_kv(line.substr(10)));
      else if (starts(line, "# summary: ")) r.summary.push_back(detail::split_kv(line.substr(11)));
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!header) {
      r.columns = cells;
      header = true;
      continue;
    }
    if (cells.size() != r.columns.size()) throw IoError("row width does not match header");
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(detail::parse_cell(c));
    r.rows.push_back(std::move(row));
  }
  return r;
}

// Lines: one "meta" object, one "summary" object, then one object per row
// keyed by column name. Non-finite numbers are written as strings.
inline std::string to_json_lines(const ResultRecord& r) {
  using nlohmann::ordered_json;
  auto num = [](double x) -> ordered_json {
    if (std::isfinite(x)) return x;
    return format_double(x);
  };
  std::ostringstream out;
  ordered_json meta;
  meta["record"] = "meta";
  meta["version"] = r.version;
  meta["command"] = r.command;
  meta["config_hash"] = r.config_hash;
  meta["config"] = ordered_json::object();
  for (const auto& [k, v] : r.config) meta["config"][k] = v;
  meta["columns"] = r.columns;
  out << meta.dump() << "\n";
  ordered_json sum;
  sum["record"] = "summary";
  for (const auto& [k, v] : r.summary) sum[k] = v;
  out << sum.dump() << "\n";
  for (const auto& row : r.rows) {
    ordered_json o;
    o["record"] = "row";
    for (std::size_t j = 0; j < row.size(); ++j) o[r.columns[j]] = num(row[j]);
    out << o.dump() << "\n";
  }
  return out.str();
}

inline ResultRecord parse_json_lines(const std::string& text) {
  using nlohmann::ordered_json;
  ResultRecord r;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json o;
    try {
      o = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw IoError(std::string("bad JSON line: ") + e.what());
    }
    const std::string kind = o.at("record").get<std::string>();
    if (kind == "meta") {
      r.version = o.at("version").get<std::string>();
      r.command = o.at("command").get<std::string>();
      r.config_hash = o.at("config_hash").get<std::string>();
      for (const auto& [k, v] : o.at("config").items()) r.config.emplace_back(k, v.get<std::string>());
      r.columns = o.at("columns").get<std::vector<std::string>>();
    } else if (kind == "summary") {
      for (const auto& [k, v] : o.items())
        if (k != "record") r.summary.emplace_back(k, v.get<std::string>());
    } else if (kind == "row") {
      std::vector<double> row;
      for (const auto& c : r.columns) {
        const auto& v = o.at(c);
        row.push_back(v.is_string() ? detail::parse_cell(v.get<std::string>()) : v.get<double>());
      }
      r.rows.push_back(std::move(row));
    } else {
      throw IoError("unknown record type '" + kind + "'");
    }
  }
  return r;
}

inline std::string serialize(const ResultRecord& r, const std::string& format) {
  if (format == "csv") return to_csv(r);
  if (format == "json-lines") return to_json_lines(r);
  throw ConfigError("run.format", "expected csv or json-lines, got '" + format + "'");
}

// Overwrites `path`; "-" writes to stdout.
inline void write_results(const ResultRecord& r, const std::string& path, const std::string& format) {
  const std::string body = serialize(r, format);
  if (path == "-") {
    std::cout << body << std::flush;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << body;
  f.flush();
  if (!f) throw IoError("write to '" + path + "' failed");
}

// Plain fixed-width table for terminals.
inline std::string format_table(const ResultRecord& r) {
  std::ostringstream out;
  for (const auto& [k, v] : r.summary) out << "  " << k << ": " << v << "\n";
  if (r.columns.empty()) return out.str();
  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> width;
  for (const auto& c : r.columns) width.push_back(c.size());
  for (const auto& row : r.rows) {
    std::vector<std::string> line;
    for (std::size_t j = 0; j < row.size(); ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", row[j]);
      line.emplace_back(buf);
      width[j] = std::max(width[j], line.back().size());
    }
    cells.push_back(std::move(line));
  }
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t j = 0; j < line.size(); ++j) {
      out << (j ? "  " : "  ") << std::string(width[j] - line[j].size(), ' ') << line[j];
    }
    out << "\n";
  };
  emit(r.columns);
  for (const auto& line : cells) emit(line);
  return out.str();
}

}  // namespace dampwave
