#pragma once

// Experiment configuration: strict JSON (unknown keys are errors), dotted
// `key=value` overrides, and validation before any compute.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "malsde/sde_model.hpp"

namespace malsde {

using Json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelSpec {
  std::string id = "double-well-1d";
  std::vector<double> x0{0.0};
  double horizon = 1.0;
  std::vector<double> sigma{1.0};
  double kappa = 1.0;
  std::vector<double> mu{0.0};
  double eps = 0.1;
};

struct SimulateSpec {
  std::vector<int> moments{2, 4};
  std::size_t dump_paths = 0;
};

struct DensitySpec {
  int points = 21;
  double width_sd = 4.0;
  std::vector<int> alpha;  // 1-based coordinates; empty = density
  bool kde = true;
  bool envelope = true;
};

struct BoundsSpec {
  std::size_t paths = 100000;
  double fit_radius = 8.0;
  std::size_t fit_samples = 20000;
  std::vector<double> zetas{0.1, 0.5};
  std::vector<double> tail_offsets{2.0, 3.0, 4.0};
  std::vector<int> dnorm_p{2, 4};
  std::vector<int> invcov_p{1, 2, 4};
  std::vector<double> invcov_times{0.1, 0.2, 0.5, 1.0};
  int invcov_steps = 64;
};

struct OracleSpec {
  std::vector<std::string> models{"ou", "double-well-1d"};
  std::vector<std::string> functions{"cos", "bump"};
  std::vector<std::vector<int>> alphas{{1}, {1, 1}};
  int steps = 2;
  int nodes = 800;
  double horizon = 1.0;
  double x0 = 0.3;
  double level = 4.0;
  double tolerance_first = 1e-8;
  double tolerance_second = 1e-6;
};

struct ConvergeSpec {
  std::vector<double> levels{4.0, 8.0, 16.0};
  int p = 2;
  std::vector<int> steps{64, 128, 256};
  std::size_t paths = 10000;
};

struct ExperimentConfig {
  ModelSpec model;
  double level = 4.0;
  std::vector<double> levels{2.0, 4.0, 8.0};
  int steps = 256;
  std::size_t paths = 200000;
  std::uint64_t seed = 20240601;
  int workers = 0;
  SimulateSpec simulate;
  DensitySpec density;
  BoundsSpec bounds;
  OracleSpec oracle;
  ConvergeSpec converge;
};

namespace detail {

/// 1-based line of the first occurrence of "key" in the source text, or 0.
inline int line_of_key(const std::string& text, const std::string& key) {
  if (text.empty()) return 0;
  const auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return 0;
  int line = 1;
  for (std::size_t i = 0; i < pos; ++i) line += text[i] == '\n';
  return line;
}

class Reader {
 public:
  Reader(const Json& obj, std::string path, const std::string& text) : obj_(obj), path_(std::move(path)), text_(text) {
    if (!obj_.is_object()) fail(path_.empty() ? "config" : path_, "must be an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const std::string leaf = key.substr(key.find_last_of('.') + 1);
    const int line = line_of_key(text_, leaf);
    throw ConfigError((line ? "line " + std::to_string(line) + ": " : std::string()) + key + " " + what);
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) fail(full(key), "must be a number");
      out = v->get<double>();
    }
  }
  template <class I>
  void integer(const std::string& key, I& out, long long lo = std::numeric_limits<long long>::min()) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer() && !v->is_number_unsigned()) fail(full(key), "must be an integer");
      if (v->is_number_unsigned()) {
        const auto u = v->get<std::uint64_t>();
        if (lo > 0 && u < static_cast<std::uint64_t>(lo)) fail(full(key), "must be >= " + std::to_string(lo));
        out = static_cast<I>(u);
      } else {
        const auto s = v->get<long long>();
        if (s < lo) fail(full(key), "must be >= " + std::to_string(lo));
        out = static_cast<I>(s);
      }
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) fail(full(key), "must be true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) fail(full(key), "must be a string");
      out = v->get<std::string>();
    }
  }
  void numbers(const std::string& key, std::vector<double>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) fail(full(key), "must be an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) fail(full(key), "must be an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void integers(const std::string& key, std::vector<int>& out) {
    if (const auto* v = find(key)) out = int_array(*v, full(key));
  }
  void strings(const std::string& key, std::vector<std::string>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) fail(full(key), "must be an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(full(key), "must be an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  void integer_arrays(const std::string& key, std::vector<std::vector<int>>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) fail(full(key), "must be an array of integer arrays");
      out.clear();
      for (const auto& e : *v) out.push_back(int_array(e, full(key)));
    }
  }
  Reader child(const std::string& key) {
    static const Json empty = Json::object();
    const auto* v = find(key);
    return Reader(v ? *v : empty, full(key), text_);
  }

  /// Rejects keys that were never asked for.
  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) fail(full(k), "is not a recognized key");
  }

 private:
  std::vector<int> int_array(const Json& v, const std::string& where) const {
    if (!v.is_array()) fail(where, "must be an array of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(where, "must be an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  const Json& obj_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  const auto& m = c.model;
  auto bad = [](const std::string& s) { throw ConfigError(s); };
  static const std::set<std::string> ids{"bm", "ou", "double-well-1d", "double-well-2d"};
  if (!ids.count(m.id)) bad("model.id must be one of bm, ou, double-well-1d, double-well-2d (got \"" + m.id + "\")");
  const std::size_t d = m.x0.size();
  if (d != 1 && d != 2) bad("model.x0 must have 1 or 2 components");
  if (m.id == "double-well-1d" && d != 1) bad("model.x0 must have 1 component for double-well-1d");
  if (m.id == "double-well-2d" && d != 2) bad("model.x0 must have 2 components for double-well-2d");
  if ((m.id == "bm" || m.id == "ou") && m.sigma.size() != d) bad("model.sigma must have as many components as model.x0");
  if (m.id == "double-well-1d" && m.sigma.size() != 1) bad("model.sigma must have 1 component");
  if (m.id == "ou" && m.mu.size() != d) bad("model.mu must have as many components as model.x0");
  if (m.id == "ou" && !(m.kappa >= 0.0)) bad("model.kappa must be >= 0");
  if (!(m.horizon > 0.0)) bad("model.horizon must be > 0");
  for (double s : m.sigma)
    if (!std::isfinite(s)) bad("model.sigma must be finite");
  if (!(m.eps >= 0.0 && m.eps < 1.0)) bad("model.eps must lie in [0, 1)");
  if (!(c.level > 0.0)) bad("level must be > 0");
  for (std::size_t i = 0; i < c.levels.size(); ++i) {
    if (!(c.levels[i] > 0.0)) bad("levels must be > 0");
    if (i && c.levels[i] < c.levels[i - 1]) bad("levels must be increasing");
  }
  if (c.steps < 1) bad("steps must be >= 1");
  auto exact_grid = [&](double t, int n, const std::string& what) {
    if (!(t > 0.0) || n < 1) return;
    if ((t / n) * n != t) bad(what + ": horizon / steps is not exactly representable, pick another step count");
  };
  exact_grid(m.horizon, c.steps, "steps");
  for (int n : c.converge.steps) exact_grid(m.horizon, n, "converge.steps");
  for (double t : c.bounds.invcov_times) exact_grid(t, c.bounds.invcov_steps, "bounds.invcov_steps");
  exact_grid(c.oracle.horizon, c.oracle.steps, "oracle.steps");
  if (c.paths < 100) bad("paths must be >= 100");
  for (int p : c.simulate.moments)
    if (p < 1) bad("simulate.moments entries must be >= 1");
  if (c.density.points < 2) bad("density.points must be >= 2");
  if (!(c.density.width_sd > 0.0)) bad("density.width_sd must be > 0");
  for (int a : c.density.alpha)
    if (a < 1 || a > static_cast<int>(d)) bad("density.alpha entries must be coordinates in 1..d");
  if (d + c.density.alpha.size() > 2) bad("density.alpha: d + |alpha| must be <= 2");
  if (c.bounds.paths < 100) bad("bounds.paths must be >= 100");
  if (!(c.bounds.fit_radius >= c.level)) bad("bounds.fit_radius must be >= level");
  if (c.bounds.fit_samples < 100) bad("bounds.fit_samples must be >= 100");
  for (double z : c.bounds.zetas)
    if (!(z > 0.0)) bad("bounds.zetas must be > 0");
  for (int p : c.bounds.dnorm_p)
    if (p != 2 && p != 4) bad("bounds.dnorm_p entries must be 2 or 4");
  for (int p : c.bounds.invcov_p)
    if (p < 1) bad("bounds.invcov_p entries must be >= 1");
  if (c.bounds.invcov_times.size() < 2) bad("bounds.invcov_times needs >= 2 entries");
  for (double t : c.bounds.invcov_times)
    if (!(t > 0.0)) bad("bounds.invcov_times must be > 0");
  if (c.bounds.invcov_steps < 1) bad("bounds.invcov_steps must be >= 1");
  static const std::set<std::string> oracle_models{"bm", "ou", "double-well-1d"};
  for (const auto& id : c.oracle.models)
    if (!oracle_models.count(id)) bad("oracle.models entries must be scalar models: bm, ou, double-well-1d");
  static const std::set<std::string> fns{"cos", "bump"};
  for (const auto& f : c.oracle.functions)
    if (!fns.count(f)) bad("oracle.functions entries must be cos or bump");
  for (const auto& a : c.oracle.alphas) {
    if (a.empty() || a.size() > 2) bad("oracle.alphas entries must have length 1 or 2");
    for (int e : a)
      if (e != 1) bad("oracle.alphas entries must use coordinate 1 (scalar chains)");
  }
  if (c.oracle.steps < 1 || c.oracle.steps > 3) bad("oracle.steps must be in 1..3");
  if (c.oracle.nodes < 40) bad("oracle.nodes must be >= 40");
  if (!(c.oracle.horizon > 0.0)) bad("oracle.horizon must be > 0");
  if (!(c.oracle.level > 0.0)) bad("oracle.level must be > 0");
  if (c.converge.levels.size() < 2) bad("converge.levels needs >= 2 entries");
  for (std::size_t i = 1; i < c.converge.levels.size(); ++i)
    if (c.converge.levels[i] < c.converge.levels[i - 1]) bad("converge.levels must be increasing");
  if (c.converge.p < 1) bad("converge.p must be >= 1");
  if (c.converge.steps.size() < 2) bad("converge.steps needs >= 2 entries");
  for (int n : c.converge.steps)
    if (n < 1) bad("converge.steps entries must be >= 1");
  if (c.converge.paths < 100) bad("converge.paths must be >= 100");
}

/// Parses and validates a config document; `text` is the source used for
/// line numbers in messages.
inline ExperimentConfig parse_config(const Json& doc, const std::string& text = {}) {
  ExperimentConfig c;
  detail::Reader root(doc, "", text);
  {
    auto r = root.child("model");
    r.string("id", c.model.id);
    r.numbers("x0", c.model.x0);
    r.number("horizon", c.model.horizon);
    const bool brownian = c.model.id == "bm", ou = c.model.id == "ou", dw2 = c.model.id == "double-well-2d";
    if (dw2) {
      c.model.x0 = {0.0, 0.0};
      r.numbers("x0", c.model.x0);
    }
    if (!dw2) r.numbers("sigma", c.model.sigma);
    if (ou) {
      r.number("kappa", c.model.kappa);
      r.numbers("mu", c.model.mu);
    }
    if (dw2) r.number("eps", c.model.eps);
    if ((brownian || ou) && c.model.sigma.size() != c.model.x0.size() && !r.find("sigma"))
      c.model.sigma.assign(c.model.x0.size(), 1.0);
    if (ou && c.model.mu.size() != c.model.x0.size() && !r.find("mu")) c.model.mu.assign(c.model.x0.size(), 0.0);
    r.finish();
  }
  root.number("level", c.level);
  root.numbers("levels", c.levels);
  root.integer("steps", c.steps, 1);
  root.integer("paths", c.paths, 1);
  root.integer("seed", c.seed, 0);
  root.integer("workers", c.workers, 0);
  {
    auto r = root.child("simulate");
    r.integers("moments", c.simulate.moments);
    r.integer("dump_paths", c.simulate.dump_paths, 0);
    r.finish();
  }
  {
    auto r = root.child("density");
    r.integer("points", c.density.points);
    r.number("width_sd", c.density.width_sd);
    r.integers("alpha", c.density.alpha);
    r.boolean("kde", c.density.kde);
    r.boolean("envelope", c.density.envelope);
    r.finish();
  }
  {
    auto r = root.child("bounds");
    r.integer("paths", c.bounds.paths, 1);
    r.number("fit_radius", c.bounds.fit_radius);
    r.integer("fit_samples", c.bounds.fit_samples, 1);
    r.numbers("zetas", c.bounds.zetas);
    r.numbers("tail_offsets", c.bounds.tail_offsets);
    r.integers("dnorm_p", c.bounds.dnorm_p);
    r.integers("invcov_p", c.bounds.invcov_p);
    r.numbers("invcov_times", c.bounds.invcov_times);
    r.integer("invcov_steps", c.bounds.invcov_steps);
    r.finish();
  }
  {
    auto r = root.child("oracle");
    r.strings("models", c.oracle.models);
    r.strings("functions", c.oracle.functions);
    r.integer_arrays("alphas", c.oracle.alphas);
    r.integer("steps", c.oracle.steps);
    r.integer("nodes", c.oracle.nodes);
    r.number("horizon", c.oracle.horizon);
    r.number("x0", c.oracle.x0);
    r.number("level", c.oracle.level);
    r.number("tolerance_first", c.oracle.tolerance_first);
    r.number("tolerance_second", c.oracle.tolerance_second);
    r.finish();
  }
  {
    auto r = root.child("converge");
    r.numbers("levels", c.converge.levels);
    r.integer("p", c.converge.p);
    r.integers("steps", c.converge.steps);
    r.integer("paths", c.converge.paths, 1);
    r.finish();
  }
  root.finish();
  validate(c);
  return c;
}

/// Parses JSON text with line-level syntax errors.
inline Json parse_json_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("syntax error: ") + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Applies `a.b.c=value`; the value is parsed as JSON when possible and kept
/// as a string otherwise. Intermediate objects are created as needed.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  Json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key has an empty component: " + key);
    if (!node->is_object()) throw ConfigError("override key " + key + " descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  Json m;
  m["id"] = c.model.id;
  m["x0"] = c.model.x0;
  m["horizon"] = c.model.horizon;
  if (c.model.id != "double-well-2d") m["sigma"] = c.model.sigma;
  if (c.model.id == "ou") {
    m["kappa"] = c.model.kappa;
    m["mu"] = c.model.mu;
  }
  if (c.model.id == "double-well-2d") m["eps"] = c.model.eps;
  j["model"] = m;
  j["level"] = c.level;
  j["levels"] = c.levels;
  j["steps"] = c.steps;
  j["paths"] = c.paths;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["simulate"] = {{"moments", c.simulate.moments}, {"dump_paths", c.simulate.dump_paths}};
  j["density"] = {{"points", c.density.points},
                  {"width_sd", c.density.width_sd},
                  {"alpha", c.density.alpha},
                  {"kde", c.density.kde},
                  {"envelope", c.density.envelope}};
  j["bounds"] = {{"paths", c.bounds.paths},
                 {"fit_radius", c.bounds.fit_radius},
                 {"fit_samples", c.bounds.fit_samples},
                 {"zetas", c.bounds.zetas},
                 {"tail_offsets", c.bounds.tail_offsets},
                 {"dnorm_p", c.bounds.dnorm_p},
                 {"invcov_p", c.bounds.invcov_p},
                 {"invcov_times", c.bounds.invcov_times},
                 {"invcov_steps", c.bounds.invcov_steps}};
  j["oracle"] = {{"models", c.oracle.models},
                 {"functions", c.oracle.functions},
                 {"alphas", c.oracle.alphas},
                 {"steps", c.oracle.steps},
                 {"nodes", c.oracle.nodes},
                 {"horizon", c.oracle.horizon},
                 {"x0", c.oracle.x0},
                 {"level", c.oracle.level},
                 {"tolerance_first", c.oracle.tolerance_first},
                 {"tolerance_second", c.oracle.tolerance_second}};
  j["converge"] = {{"levels", c.converge.levels},
                   {"p", c.converge.p},
                   {"steps", c.converge.steps},
                   {"paths", c.converge.paths}};
  return j;
}

}  // namespace malsde
