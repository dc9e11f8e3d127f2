#pragma once

// JSON (de)serialization of weights, sampling families, coefficient fields
// and reports. Parse errors throw ConfigError naming the offending field by
// its dotted path.

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fkplab/ainfty.hpp"
#include "fkplab/carleson.hpp"
#include "fkplab/dkp.hpp"
#include "fkplab/fkp_identity.hpp"
#include "fkplab/types.hpp"
#include "fkplab/weight.hpp"

namespace fkplab::io {

using json = nlohmann::json;

namespace detail {

inline const json& member(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

}  // namespace detail

inline double get_number(const json& j, const std::string& key, const std::string& path) {
  const auto& v = detail::member(j, key, path);
  if (!v.is_number()) throw ConfigError(detail::join(path, key), "expected a number");
  return v.get<double>();
}

inline double get_number_or(const json& j, const std::string& key, const std::string& path, double fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get_number(j, key, path);
}

inline int get_int_or(const json& j, const std::string& key, const std::string& path, int fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(detail::join(path, key), "expected an integer");
  return v.get<int>();
}

inline std::string get_string(const json& j, const std::string& key, const std::string& path) {
  const auto& v = detail::member(j, key, path);
  if (!v.is_string()) throw ConfigError(detail::join(path, key), "expected a string");
  return v.get<std::string>();
}

inline std::vector<double> get_numbers(const json& j, const std::string& key, const std::string& path) {
  const auto& v = detail::member(j, key, path);
  const std::string p = detail::join(path, key);
  if (!v.is_array()) throw ConfigError(p, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(p + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

inline Point get_point_or(const json& j, const std::string& key, const std::string& path, Point fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  const auto v = get_numbers(j, key, path);
  if (v.empty() || v.size() > 2) throw ConfigError(detail::join(path, key), "expected 1 or 2 coordinates");
  return {v[0], v.size() > 1 ? v[1] : 0.0};
}

/// Reads "x,density" (n = 1) or "x,y,density" (n = 2, tensor grid in any
/// row order) rows; a non-numeric first line is taken as a header.
inline GridData read_grid_csv(const std::string& path, int n, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ConfigError(field, "cannot open '" + path + "'");
  std::vector<std::array<double, 3>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    try {
      while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    } catch (const std::exception&) {
      if (first) {
        first = false;
        continue;
      }
      throw ConfigError(field, "non-numeric row '" + line + "'");
    }
    first = false;
    if (static_cast<int>(vals.size()) != n + 1) throw ConfigError(field, "expected " + std::to_string(n + 1) + " columns");
    rows.push_back({vals[0], n == 2 ? vals[1] : 0.0, vals[n]});
  }
  GridData g;
  if (n == 1) {
    std::sort(rows.begin(), rows.end());
    for (const auto& r : rows) {
      g.xs.push_back(r[0]);
      g.density.push_back(r[2]);
    }
    return g;
  }
  for (const auto& r : rows) {
    g.xs.push_back(r[0]);
    g.ys.push_back(r[1]);
  }
  auto uniq = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(g.xs);
  uniq(g.ys);
  if (g.xs.size() * g.ys.size() != rows.size()) throw ConfigError(field, "rows do not form a tensor grid");
  g.density.assign(rows.size(), 0.0);
  for (const auto& r : rows) {
    const auto i = std::lower_bound(g.xs.begin(), g.xs.end(), r[0]) - g.xs.begin();
    const auto k = std::lower_bound(g.ys.begin(), g.ys.end(), r[1]) - g.ys.begin();
    g.density[static_cast<std::size_t>(k) * g.xs.size() + static_cast<std::size_t>(i)] = r[2];
  }
  return g;
}

/// {"n": 1, "family": "power", "params": {"a": 0.5}}. Families: constant {c},
/// power {a}, polypower {a, b}, plateau {eps, center, radius}, grid
/// {xs, [ys], density, [floor]} or {csv, [floor]}.
inline WeightSpec parse_weight(const json& j, const std::string& path = "weight") {
  const int n = get_int_or(j, "n", path, 1);
  if (n != 1 && n != 2) throw ConfigError(detail::join(path, "n"), "must be 1 or 2");
  const std::string fam = get_string(j, "family", path);
  const json params = j.contains("params") ? j.at("params") : json::object();
  const std::string pp = detail::join(path, "params");
  try {
    if (fam == "constant") return WeightSpec::constant(n, get_number_or(params, "c", pp, 1.0));
    if (fam == "power") return WeightSpec::power(n, get_number(params, "a", pp));
    if (fam == "polypower") return WeightSpec::polypower(n, get_number(params, "a", pp), get_number(params, "b", pp));
    if (fam == "plateau")
      return WeightSpec::plateau(n, get_number(params, "eps", pp), get_point_or(params, "center", pp, {0.0, 0.0}),
                                 get_number_or(params, "radius", pp, 1.0));
    if (fam == "grid") {
      const double floor = get_number_or(params, "floor", pp, WeightSpec::kDefaultFloor);
      GridData g;
      if (params.contains("csv")) {
        g = read_grid_csv(get_string(params, "csv", pp), n, detail::join(pp, "csv"));
      } else {
        g.xs = get_numbers(params, "xs", pp);
        if (n == 2) g.ys = get_numbers(params, "ys", pp);
        g.density = get_numbers(params, "density", pp);
      }
      return WeightSpec::grid(n, std::move(g), floor);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(pp, e.what());
  }
  throw ConfigError(detail::join(path, "family"), "unknown family '" + fam + "'");
}

inline json to_json(const WeightSpec& w) {
  json p = json::object();
  switch (w.family()) {
    case WeightFamily::constant: p["c"] = w.c(); break;
    case WeightFamily::power: p["a"] = w.a(); break;
    case WeightFamily::polypower:
      p["a"] = w.a();
      p["b"] = w.b();
      break;
    case WeightFamily::plateau:
      p["eps"] = w.eps();
      p["center"] = w.dimension() == 1 ? json::array({w.center()[0]}) : json::array({w.center()[0], w.center()[1]});
      p["radius"] = w.radius();
      break;
    case WeightFamily::grid: {
      const auto* g = w.grid_data();
      p["xs"] = g->xs;
      if (w.dimension() == 2) p["ys"] = g->ys;
      p["density"] = g->density;
      p["floor"] = w.floor();
      break;
    }
  }
  return {{"n", w.dimension()}, {"family", to_string(w.family())}, {"params", p}};
}

/// {"n", "lo", "hi", "r_min", "r_max", "radii", "centers", "random_centers", "seed"}.
inline SamplingFamily parse_family(const json& j, int n, SamplingFamily f = {}, const std::string& path = "family") {
  f.n = n;
  if (!j.is_null() && !j.is_object()) throw ConfigError(path, "expected an object");
  f.lo = get_point_or(j, "lo", path, f.lo);
  f.hi = get_point_or(j, "hi", path, f.hi);
  f.r_min = get_number_or(j, "r_min", path, f.r_min);
  f.r_max = get_number_or(j, "r_max", path, f.r_max);
  f.radii = get_int_or(j, "radii", path, f.radii);
  f.centers = get_int_or(j, "centers", path, f.centers);
  f.random_centers = get_int_or(j, "random_centers", path, f.random_centers);
  if (j.is_object() && j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError(detail::join(path, "seed"), "expected a non-negative integer");
    f.seed = j.at("seed").get<unsigned long long>();
  }
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return f;
}

inline json to_json(const SamplingFamily& f) {
  return {{"n", f.n},         {"lo", {f.lo[0], f.lo[1]}}, {"hi", {f.hi[0], f.hi[1]}},
          {"r_min", f.r_min}, {"r_max", f.r_max},         {"radii", f.radii},
          {"centers", f.centers}, {"random_centers", f.random_centers}, {"seed", f.seed}};
}

inline GridSpec parse_grid(const json& j, const std::string& path) {
  GridSpec g;
  g.L = get_number_or(j, "L", path, g.L);
  g.H = get_number_or(j, "H", path, g.H);
  g.nx = get_int_or(j, "nx", path, g.nx);
  g.ns = get_int_or(j, "ns", path, g.ns);
  if (!(g.L > 0.0)) throw ConfigError(detail::join(path, "L"), "must be positive");
  if (!(g.H > 0.0)) throw ConfigError(detail::join(path, "H"), "must be positive");
  if (g.nx < 2 || g.nx > 4096) throw ConfigError(detail::join(path, "nx"), "must lie in [2, 4096]");
  if (g.ns < 2 || g.ns > 4096) throw ConfigError(detail::join(path, "ns"), "must lie in [2, 4096]");
  return g;
}

inline std::vector<ScalarBump> parse_bumps(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of bumps");
  std::vector<ScalarBump> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    ScalarBump b;
    b.eps = get_number(j[i], "eps", p);
    b.y = get_number_or(j[i], "y", p, b.y);
    b.s = get_number_or(j[i], "s", p, b.s);
    b.radius = get_number_or(j[i], "radius", p, b.radius);
    out.push_back(b);
  }
  return out;
}

/// {"family": "identity" | "bumps" | "layered" | "dump", "params": {...},
/// "grid": {"L", "H", "nx", "ns"}}. bumps: {"bumps": [{eps, y, s, radius}]};
/// layered: {interface, lower, upper}; dump: {path} to an FKPA file.
inline CoefficientField parse_coefficients(const json& j, const std::string& path = "coefficients") {
  const std::string fam = get_string(j, "family", path);
  const json params = j.contains("params") ? j.at("params") : json::object();
  const std::string pp = detail::join(path, "params");
  const GridSpec g = parse_grid(j.contains("grid") ? j.at("grid") : json::object(), detail::join(path, "grid"));
  try {
    if (fam == "identity") return identity_field(g);
    if (fam == "bumps") return bump_field(parse_bumps(detail::member(params, "bumps", pp), detail::join(pp, "bumps")), g);
    if (fam == "layered")
      return layered_field(get_number(params, "interface", pp), get_number(params, "lower", pp),
                           get_number(params, "upper", pp), g);
    if (fam == "dump") {
      const std::string file = get_string(params, "path", pp);
      std::ifstream in(file, std::ios::binary);
      if (!in) throw ConfigError(detail::join(pp, "path"), "cannot open '" + file + "'");
      return read_field(in);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(pp, e.what());
  }
  throw ConfigError(detail::join(path, "family"), "unknown family '" + fam + "'");
}

inline json to_json(const BallQuery& q, int n) {
  return {{"center", n == 1 ? json::array({q.center[0]}) : json::array({q.center[0], q.center[1]})},
          {"radius", q.radius}};
}

inline json to_json(const CarlesonEstimate& e, int n) {
  return {{"value", e.value},         {"witness", to_json(e.witness, n)}, {"quad_error", e.quad_error},
          {"r_floor", e.r_floor},     {"family_size", e.family_size},     {"flagged", e.flagged}};
}

inline json to_json(const AInftyEstimate& e, int n) {
  return {{"value", e.value},
          {"witness", to_json(e.witness, n)},
          {"quad_error", e.quad_error},
          {"family_size", e.family_size},
          {"infinite", e.infinite}};
}

inline json to_json(const DoublingProfile& p, int n) {
  json mod = json::array();
  for (const auto& [a, f] : p.modulus_samples) mod.push_back({{"ratio", a}, {"value", f}});
  return {{"doubling_constant", p.doubling_constant},
          {"witness", to_json(p.witness, n)},
          {"modulus_samples", mod},
          {"family_size", p.sampling_family.size()}};
}

inline json to_json(const GoodDoublingReport& r, int n) {
  auto pt = [n](const Point& p) { return n == 1 ? json::array({p[0]}) : json::array({p[0], p[1]}); };
  return {{"M", r.M},
          {"deficit", r.deficit},
          {"threshold", r.threshold},
          {"certified", r.certified},
          {"samples", r.samples},
          {"witness",
           {{"x", pt(r.witness.x)}, {"R", r.witness.R}, {"y", pt(r.witness.y)}, {"s", r.witness.s}, {"r", r.witness.r}}}};
}

inline json to_json(const IdentityReport& r, int n) {
  return {{"x", n == 1 ? json::array({r.x[0]}) : json::array({r.x[0], r.x[1]})},
          {"r", r.r},
          {"lhs", r.lhs},
          {"h1", r.h1},
          {"h2", r.h2},
          {"h1_tilde", r.h1_tilde},
          {"residual", r.residual},
          {"heat_scaled_residual", r.heat_scaled_residual},
          {"error_budget", r.error_budget},
          {"tail_unbounded", r.tail_unbounded}};
}

inline constexpr const char* kIdentityCsvHeader =
    "x,y,r,lhs,h1,h2,h1_tilde,residual,heat_scaled_residual,error_budget";

inline void write_identity_csv(const std::vector<IdentityReport>& reports, std::ostream& out) {
  out << kIdentityCsvHeader << '\n';
  char buf[512];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.x[0], r.x[1],
                  r.r, r.lhs, r.h1, r.h2, r.h1_tilde, r.residual, r.heat_scaled_residual, r.error_budget);
    out << buf;
  }
}

inline json load_json_file(const std::string& path, const std::string& field = "config") {
  std::ifstream in(path);
  if (!in) throw ConfigError(field, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(field, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace fkplab::io
