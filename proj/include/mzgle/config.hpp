#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "io.hpp"
#include "rational.hpp"

namespace mzgle {

inline constexpr const char* kToolVersion = "1.0.0";

/// Density entry of a product measure in a config.
struct DensityConfig {
  std::string kind = "gaussian";  ///< gaussian | quartic_gibbs
  Rational gamma = 1, alpha1 = 1, beta1 = 0;
};

struct ExperimentConfig {
  struct System {
    std::string builtin = "harmonic_chain";  ///< harmonic_chain | fpu_chain | kraichnan_orszag; empty with `file`
    std::string file;
    long N = 100;
    Rational alpha1 = 1, beta1 = 0, mass = 1;
  } system;
  struct Measure {
    std::string kind = "auto";  ///< auto | chain_gibbs | product
    Rational gamma = 1;
    std::optional<DensityConfig> fallback;
    std::map<std::string, DensityConfig> variables;
  } measure;
  struct Observable {
    std::string field = "p";
    long site = 0;
    std::string variable;
    long power = 1;
  } observable;
  struct Kernel {
    std::string basis = "faber";
    long order = 30;
    std::string scaling = "estimate";  ///< estimate | linear | fixed
    double delta = 1.0, c0 = 0.0, c1 = -0.25;
    std::string arithmetic = "exact";
    std::string method = "auto";  ///< auto | linear | combinatorial
    std::string skew = "auto";    ///< auto | true | false
    long term_cap = static_cast<long>(kDefaultTermCap);
  } kernel;
  struct Grid {
    double T = 10.0, dt = 1e-3, output_dt = 0.05;
  } grid;
  struct Correlate {
    std::string kernel_file;
  } correlate;
  struct MC {
    long samples = 10000;
    std::uint64_t seed = 1;
    double dt = 1e-3;
    std::vector<long> powers{1};
    bool site_average = true;
  } mc;
  struct KL {
    long kmax = 64;
    long iters = 10;
    long samples = 100000;
    std::uint64_t seed = 2;
    double dt = 0.05;
    std::vector<long> powers{1, 2, 4};
    double energy_floor = 1e-8;
    double negative_tolerance = 1e-6;
    long gle_samples = 0;
  } kl;
  std::string output_dir = "out";
  long threads = 0;
};

namespace detail {

enum class Kind { integer, number, string, boolean, rational, int_array, object, skew };

// Allowed keys and value kinds.
inline const std::map<std::string, std::map<std::string, Kind>>& config_schema() {
  static const std::map<std::string, std::map<std::string, Kind>> s = {
      {"system", {{"builtin", Kind::string}, {"file", Kind::string}, {"N", Kind::integer}, {"alpha1", Kind::rational},
                  {"beta1", Kind::rational}, {"mass", Kind::rational}}},
      {"measure", {{"kind", Kind::string}, {"gamma", Kind::rational}, {"default", Kind::object}, {"variables", Kind::object}}},
      {"observable", {{"field", Kind::string}, {"site", Kind::integer}, {"variable", Kind::string}, {"power", Kind::integer}}},
      {"kernel", {{"basis", Kind::string}, {"order", Kind::integer}, {"scaling", Kind::string}, {"delta", Kind::number},
                  {"c0", Kind::number}, {"c1", Kind::number}, {"arithmetic", Kind::string}, {"method", Kind::string},
                  {"skew", Kind::skew}, {"term_cap", Kind::integer}}},
      {"grid", {{"T", Kind::number}, {"dt", Kind::number}, {"output_dt", Kind::number}}},
      {"correlate", {{"kernel_file", Kind::string}}},
      {"mc", {{"samples", Kind::integer}, {"seed", Kind::integer}, {"dt", Kind::number}, {"powers", Kind::int_array},
              {"site_average", Kind::boolean}}},
      {"kl", {{"kmax", Kind::integer}, {"iters", Kind::integer}, {"samples", Kind::integer}, {"seed", Kind::integer},
              {"dt", Kind::number}, {"powers", Kind::int_array}, {"energy_floor", Kind::number},
              {"negative_tolerance", Kind::number}, {"gle_samples", Kind::integer}}},
      {"output", {{"dir", Kind::string}}},
  };
  return s;
}

inline void check_kind(const json& v, Kind k, const std::string& path) {
  bool ok = false;
  switch (k) {
    case Kind::integer: ok = v.is_number_integer(); break;
    case Kind::number: ok = v.is_number(); break;
    case Kind::string: ok = v.is_string(); break;
    case Kind::boolean: ok = v.is_boolean(); break;
    case Kind::rational: ok = v.is_number() || v.is_string() || (v.is_array() && v.size() == 2); break;
    case Kind::int_array:
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number_integer(); });
      break;
    case Kind::object: ok = v.is_object(); break;
    case Kind::skew: ok = v.is_boolean() || (v.is_string() && v.get<std::string>() == "auto"); break;
  }
  if (!ok) throw ValidationError("config key '" + path + "' has the wrong type");
}

inline DensityConfig parse_density(const json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError("config key '" + path + "' must be an object");
  DensityConfig d;
  for (const auto& [k, v] : j.items()) {
    if (k == "kind") {
      check_kind(v, Kind::string, path + ".kind");
      d.kind = v.get<std::string>();
    } else if (k == "gamma" || k == "alpha1" || k == "beta1") {
      check_kind(v, Kind::rational, path + "." + k);
      (k == "gamma" ? d.gamma : k == "alpha1" ? d.alpha1 : d.beta1) = json_rational(v);
    } else {
      throw ValidationError("unknown config key '" + path + "." + k + "'");
    }
  }
  if (d.kind != "gaussian" && d.kind != "quartic_gibbs") throw ValidationError("config key '" + path + ".kind' must be gaussian or quartic_gibbs");
  return d;
}

inline json density_json(const DensityConfig& d) {
  json j;
  j["kind"] = d.kind;
  j["gamma"] = to_string(d.gamma);
  if (d.kind == "quartic_gibbs") {
    j["alpha1"] = to_string(d.alpha1);
    j["beta1"] = to_string(d.beta1);
  }
  return j;
}

template <typename T>
void require_one_of(const T& v, std::initializer_list<T> allowed, const std::string& path) {
  for (const auto& a : allowed)
    if (v == a) return;
  throw ValidationError("config key '" + path + "' has an unsupported value");
}

}  // namespace detail

/// Applies "a.b.c=value" to a JSON tree; the value is parsed as JSON when possible.
inline void apply_override(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' is malformed");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// Validates a user config (unknown keys and wrong types are rejected) and resolves
/// it against the defaults.
inline ExperimentConfig resolve_config(const json& user) {
  using detail::Kind;
  if (!user.is_object()) throw ValidationError("config must be a JSON object");
  const auto& schema = detail::config_schema();
  ExperimentConfig c;
  for (const auto& [section, body] : user.items()) {
    if (section == "threads") {
      detail::check_kind(body, Kind::integer, "threads");
      c.threads = body.get<long>();
      continue;
    }
    auto it = schema.find(section);
    if (it == schema.end()) throw ValidationError("unknown config key '" + section + "'");
    if (!body.is_object()) throw ValidationError("config section '" + section + "' must be an object");
    for (const auto& [key, v] : body.items()) {
      auto kt = it->second.find(key);
      const std::string path = section + "." + key;
      if (kt == it->second.end()) throw ValidationError("unknown config key '" + path + "'");
      detail::check_kind(v, kt->second, path);
    }
  }
  auto get = [&](const char* s, const char* k) -> const json* {
    if (!user.contains(s) || !user[s].contains(k)) return nullptr;
    return &user[s][k];
  };
  auto str = [&](const char* s, const char* k, std::string& out) { if (auto v = get(s, k)) out = v->get<std::string>(); };
  auto integer = [&](const char* s, const char* k, long& out) { if (auto v = get(s, k)) out = v->get<long>(); };
  auto number = [&](const char* s, const char* k, double& out) { if (auto v = get(s, k)) out = v->get<double>(); };
  auto rational = [&](const char* s, const char* k, Rational& out) { if (auto v = get(s, k)) out = json_rational(*v); };
  auto seed = [&](const char* s, const char* k, std::uint64_t& out) {
    if (auto v = get(s, k)) {
      if (v->get<long long>() < 0) throw ValidationError(std::string("config key '") + s + "." + k + "' must be non-negative");
      out = v->get<std::uint64_t>();
    }
  };
  auto ints = [&](const char* s, const char* k, std::vector<long>& out) {
    if (auto v = get(s, k)) {
      out.clear();
      for (const auto& x : *v) out.push_back(x.get<long>());
    }
  };

  str("system", "builtin", c.system.builtin);
  str("system", "file", c.system.file);
  if (get("system", "file") && !get("system", "builtin")) c.system.builtin.clear();
  integer("system", "N", c.system.N);
  rational("system", "alpha1", c.system.alpha1);
  rational("system", "beta1", c.system.beta1);
  rational("system", "mass", c.system.mass);
  str("measure", "kind", c.measure.kind);
  rational("measure", "gamma", c.measure.gamma);
  if (auto v = get("measure", "default")) c.measure.fallback = detail::parse_density(*v, "measure.default");
  if (auto v = get("measure", "variables"))
    for (const auto& [name, d] : v->items()) c.measure.variables[name] = detail::parse_density(d, "measure.variables." + name);
  str("observable", "field", c.observable.field);
  integer("observable", "site", c.observable.site);
  str("observable", "variable", c.observable.variable);
  integer("observable", "power", c.observable.power);
  str("kernel", "basis", c.kernel.basis);
  integer("kernel", "order", c.kernel.order);
  str("kernel", "scaling", c.kernel.scaling);
  number("kernel", "delta", c.kernel.delta);
  number("kernel", "c0", c.kernel.c0);
  number("kernel", "c1", c.kernel.c1);
  str("kernel", "arithmetic", c.kernel.arithmetic);
  str("kernel", "method", c.kernel.method);
  if (auto v = get("kernel", "skew")) c.kernel.skew = v->is_boolean() ? (v->get<bool>() ? "true" : "false") : "auto";
  integer("kernel", "term_cap", c.kernel.term_cap);
  number("grid", "T", c.grid.T);
  number("grid", "dt", c.grid.dt);
  number("grid", "output_dt", c.grid.output_dt);
  str("correlate", "kernel_file", c.correlate.kernel_file);
  integer("mc", "samples", c.mc.samples);
  seed("mc", "seed", c.mc.seed);
  number("mc", "dt", c.mc.dt);
  ints("mc", "powers", c.mc.powers);
  if (auto v = get("mc", "site_average")) c.mc.site_average = v->get<bool>();
  integer("kl", "kmax", c.kl.kmax);
  integer("kl", "iters", c.kl.iters);
  integer("kl", "samples", c.kl.samples);
  seed("kl", "seed", c.kl.seed);
  number("kl", "dt", c.kl.dt);
  ints("kl", "powers", c.kl.powers);
  number("kl", "energy_floor", c.kl.energy_floor);
  number("kl", "negative_tolerance", c.kl.negative_tolerance);
  integer("kl", "gle_samples", c.kl.gle_samples);
  str("output", "dir", c.output_dir);

  using detail::require_one_of;
  if (c.system.builtin.empty() == c.system.file.empty()) throw ValidationError("config needs exactly one of system.builtin and system.file");
  if (!c.system.builtin.empty())
    require_one_of<std::string>(c.system.builtin, {"harmonic_chain", "fpu_chain", "kraichnan_orszag"}, "system.builtin");
  require_one_of<std::string>(c.measure.kind, {"auto", "chain_gibbs", "product"}, "measure.kind");
  require_one_of<std::string>(c.observable.field, {"r", "p"}, "observable.field");
  require_one_of<std::string>(c.kernel.basis, {"faber", "dyson"}, "kernel.basis");
  require_one_of<std::string>(c.kernel.scaling, {"estimate", "linear", "fixed"}, "kernel.scaling");
  require_one_of<std::string>(c.kernel.arithmetic, {"exact", "float"}, "kernel.arithmetic");
  require_one_of<std::string>(c.kernel.method, {"auto", "linear", "combinatorial"}, "kernel.method");
  if (c.observable.power < 1) throw ValidationError("observable.power must be at least 1");
  if (c.observable.site < 0) throw ValidationError("observable.site must be non-negative");
  if (c.kernel.order < 0) throw ValidationError("kernel.order must be non-negative");
  if (c.kernel.term_cap < 1) throw ValidationError("kernel.term_cap must be positive");
  if (!(c.grid.T > 0) || !(c.grid.dt > 0) || !(c.grid.output_dt > 0)) throw ValidationError("grid values must be positive");
  if (c.mc.samples < 2 || !(c.mc.dt > 0)) throw ValidationError("mc.samples must be >= 2 and mc.dt positive");
  if (c.kl.kmax < 1 || c.kl.iters < 0 || c.kl.samples < 2 || !(c.kl.dt > 0) || c.kl.gle_samples < 0)
    throw ValidationError("kl settings out of range");
  for (long p : c.mc.powers)
    if (p < 1) throw ValidationError("mc.powers entries must be at least 1");
  for (long p : c.kl.powers)
    if (p < 1) throw ValidationError("kl.powers entries must be at least 1");
  if (c.threads < 0) throw ValidationError("threads must be non-negative");
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json user = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(user, o);
  auto c = resolve_config(user);
  // Relative system files are resolved against the config location.
  if (!c.system.file.empty() && !path.empty() && std::filesystem::path(c.system.file).is_relative()) {
    auto candidate = std::filesystem::path(path).parent_path() / c.system.file;
    if (std::filesystem::exists(candidate)) c.system.file = candidate.string();
  }
  return c;
}

/// Fully resolved config, echoed into every manifest.
inline json config_json(const ExperimentConfig& c) {
  json j;
  j["system"] = {{"builtin", c.system.builtin}, {"file", c.system.file}, {"N", c.system.N}, {"alpha1", to_string(c.system.alpha1)},
                 {"beta1", to_string(c.system.beta1)}, {"mass", to_string(c.system.mass)}};
  json m = {{"kind", c.measure.kind}, {"gamma", to_string(c.measure.gamma)}};
  if (c.measure.fallback) m["default"] = detail::density_json(*c.measure.fallback);
  json vars = json::object();
  for (const auto& [k, d] : c.measure.variables) vars[k] = detail::density_json(d);
  m["variables"] = vars;
  j["measure"] = m;
  j["observable"] = {{"field", c.observable.field}, {"site", c.observable.site}, {"variable", c.observable.variable}, {"power", c.observable.power}};
  j["kernel"] = {{"basis", c.kernel.basis}, {"order", c.kernel.order}, {"scaling", c.kernel.scaling}, {"delta", c.kernel.delta},
                 {"c0", c.kernel.c0}, {"c1", c.kernel.c1}, {"arithmetic", c.kernel.arithmetic}, {"method", c.kernel.method},
                 {"term_cap", c.kernel.term_cap}};
  j["kernel"]["skew"] = c.kernel.skew == "auto" ? json("auto") : json(c.kernel.skew == "true");
  j["grid"] = {{"T", c.grid.T}, {"dt", c.grid.dt}, {"output_dt", c.grid.output_dt}};
  j["correlate"] = {{"kernel_file", c.correlate.kernel_file}};
  j["mc"] = {{"samples", c.mc.samples}, {"seed", c.mc.seed}, {"dt", c.mc.dt}, {"powers", c.mc.powers}, {"site_average", c.mc.site_average}};
  j["kl"] = {{"kmax", c.kl.kmax}, {"iters", c.kl.iters}, {"samples", c.kl.samples}, {"seed", c.kl.seed}, {"dt", c.kl.dt},
             {"powers", c.kl.powers}, {"energy_floor", c.kl.energy_floor}, {"negative_tolerance", c.kl.negative_tolerance},
             {"gle_samples", c.kl.gle_samples}};
  j["output"] = {{"dir", c.output_dir}};
  j["threads"] = c.threads;
  return j;
}

}  // namespace mzgle
