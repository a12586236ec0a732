#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "liouville.hpp"
#include "volterra.hpp"

namespace mzgle {

using json = nlohmann::ordered_json;

/// Columnar data with a metadata object. On disk: "# <json>", a header row, then rows.
struct Table {
  json meta = json::object();
  std::vector<std::string> columns;
  std::vector<std::vector<double>> data;  ///< one vector per column

  std::size_t rows() const { return data.empty() ? 0 : data.front().size(); }

  void add_column(std::string name, std::vector<double> values) {
    if (!data.empty() && values.size() != rows()) throw ValidationError("column '" + name + "' has the wrong length");
    columns.push_back(std::move(name));
    data.push_back(std::move(values));
  }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ValidationError("table has no column '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& c : columns)
      if (c == name) return true;
    return false;
  }
  const std::vector<double>& column(const std::string& name) const { return data[index(name)]; }
};

/// Shortest round-trip decimal form.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline void write_table(const std::filesystem::path& path, const Table& t) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "# " << t.meta.dump() << "\n";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
  out << "\n";
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << format_double(t.data[c][r]);
    out << "\n";
  }
  if (!out) throw ValidationError("error writing " + path.string());
}

inline Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  Table t;
  std::string line;
  bool have_header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (!have_header && t.meta.empty()) {
        try {
          t.meta = json::parse(line.substr(1));
        } catch (const json::exception&) {
        }
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      t.columns = cells;
      t.data.assign(cells.size(), {});
      have_header = true;
      continue;
    }
    if (cells.size() != t.columns.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size()) + " fields");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v;
      const char* b = cells[c].data();
      const char* e = b + cells[c].size();
      while (b < e && *b == ' ') ++b;
      auto res = std::from_chars(b, e, v);
      if (res.ec != std::errc() || res.ptr != e)
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cells[c] + "'");
      t.data[c].push_back(v);
    }
  }
  if (!have_header) throw ValidationError(path.string() + " has no header row");
  return t;
}

/// Series from columns `tcol` (uniform) and `vcol`, with an optional error column.
inline Series table_series(const Table& t, const std::string& tcol, const std::string& vcol, const std::string& secol = "") {
  const auto& ts = t.column(tcol);
  if (ts.size() < 2) throw ValidationError("series needs at least two rows");
  const double dt = ts[1] - ts[0];
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (std::abs(ts[i] - static_cast<double>(i) * dt) > 1e-9 * std::max(1.0, ts.back()))
      throw ValidationError("time column is not a uniform grid starting at 0");
  TimeGrid g = TimeGrid::from_steps(ts.size() - 1, dt);
  std::vector<double> se;
  if (!secol.empty() && t.has(secol)) se = t.column(secol);
  return Series(g, t.column(vcol), std::move(se));
}

inline Table series_table(const Series& s, const std::string& name, json meta = json::object()) {
  Table t;
  t.meta = std::move(meta);
  std::vector<double> ts(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) ts[i] = s.grid.t(i);
  t.add_column("t", std::move(ts));
  t.add_column(name, s.values);
  if (s.has_errors()) t.add_column("stderr", s.stderrs);
  return t;
}

// System definition files:
// {"variables": ["x1", ...],
//  "equations": [{"target": "x1", "rhs": [{"coeff": [num, den], "exps": {"x1": 1, "x3": 1}}]}]}

inline Rational json_rational(const json& j) {
  if (j.is_array()) {
    if (j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
      throw ValidationError("rational must be [numerator, denominator] with integers");
    if (j[1].get<long long>() == 0) throw ValidationError("rational with zero denominator");
    Rational q(mpz_class(std::to_string(j[0].get<long long>())), mpz_class(std::to_string(j[1].get<long long>())));
    q.canonicalize();
    return q;
  }
  if (j.is_string()) return parse_rational(j.get<std::string>());
  if (j.is_number_integer()) return Rational(mpz_class(std::to_string(j.get<long long>())));
  if (j.is_number()) return parse_rational(format_double(j.get<double>()));
  throw ValidationError("expected a rational number");
}

inline json rational_json(const Rational& q) {
  if (q.get_num().fits_slong_p() && q.get_den().fits_slong_p()) return json::array({q.get_num().get_si(), q.get_den().get_si()});
  return q.get_str();
}

inline LiouvilleOperator<Rational> parse_system(const json& j) {
  if (!j.is_object()) throw ValidationError("system definition must be an object");
  for (const auto& [k, v] : j.items())
    if (k != "variables" && k != "equations") throw ValidationError("unknown key '" + k + "' in system definition");
  if (!j.contains("variables") || !j["variables"].is_array()) throw ValidationError("system definition needs a 'variables' array");
  std::vector<std::string> names;
  for (const auto& v : j["variables"]) {
    if (!v.is_string()) throw ValidationError("variable names must be strings");
    names.push_back(v.get<std::string>());
  }
  LiouvilleOperator<Rational> L(names.size(), names);
  auto var = [&](const std::string& n) {
    auto id = L.find(n);
    if (!id) throw ValidationError("unknown variable '" + n + "' in system definition");
    return *id;
  };
  if (!j.contains("equations") || !j["equations"].is_array()) throw ValidationError("system definition needs an 'equations' array");
  for (const auto& eq : j["equations"]) {
    for (const auto& [k, v] : eq.items())
      if (k != "target" && k != "rhs") throw ValidationError("unknown key '" + k + "' in equation");
    if (!eq.contains("target") || !eq["target"].is_string()) throw ValidationError("equation needs a string 'target'");
    std::vector<Term<Rational>> terms;
    const json rhs = eq.value("rhs", json::array());
    if (!rhs.is_array()) throw ValidationError("equation 'rhs' must be an array");
    for (const auto& m : rhs) {
      if (!m.is_object()) throw ValidationError("monomial must be an object");
      for (const auto& [k, v] : m.items())
        if (k != "coeff" && k != "exps") throw ValidationError("unknown key '" + k + "' in monomial");
      std::vector<std::pair<VarIndex, unsigned>> exps;
      const json exps_in = m.value("exps", json::object());
      if (!exps_in.is_object()) throw ValidationError("monomial 'exps' must be an object");
      for (const auto& [name, e] : exps_in.items()) {
        if (!e.is_number_integer() || e.get<long long>() < 0) throw ValidationError("exponents must be non-negative integers");
        if (e.get<long long>() > 0) exps.emplace_back(var(name), static_cast<unsigned>(e.get<long long>()));
      }
      if (!m.contains("coeff")) throw ValidationError("monomial needs a 'coeff'");
      terms.push_back({Monomial::from_pairs(std::move(exps)), json_rational(m["coeff"])});
    }
    L.add_term(var(eq["target"].get<std::string>()), Polynomial<Rational>::from_terms(std::move(terms)));
  }
  return L;
}

inline json system_json(const LiouvilleOperator<Rational>& L) {
  json j;
  j["variables"] = L.names();
  json eqs = json::array();
  for (const auto& [target, rhs] : L.terms()) {
    json e;
    e["target"] = L.name(target);
    json terms = json::array();
    for (const auto& t : rhs.terms()) {
      json m;
      m["coeff"] = rational_json(t.coeff);
      json exps = json::object();
      for (std::size_t i = 0; i < t.mono.size(); ++i) exps[L.name(t.mono.var(i))] = t.mono.exp(i);
      m["exps"] = exps;
      terms.push_back(m);
    }
    e["rhs"] = terms;
    eqs.push_back(e);
  }
  j["equations"] = eqs;
  return j;
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

}  // namespace mzgle
