#include "topocat/scenario.hpp"

#include "topocat/dynamics.hpp"
#include "topocat/phasespace.hpp"
#include "topocat/response.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>

namespace topocat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

std::string type_name(const json& v) {
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

// Reads one JSON object, filling `out` with the resolved value of every key.
class Section {
 public:
  Section(const json& in, std::string pointer) : in_(in), ptr_(std::move(pointer)) {
    if (!in_.is_object()) fail("", "expected an object, got " + type_name(in_));
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ValidationError(key.empty() ? ptr_ : ptr_ + "/" + key, msg);
  }
  std::string at(const std::string& key) const { return ptr_ + "/" + key; }
  bool has(const std::string& key) const { return in_.contains(key); }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return in_.at(key);
  }

  double number(const std::string& key, std::optional<double> def, double lo = -HUGE_VAL, double hi = HUGE_VAL,
                bool lo_open = false) {
    double v;
    if (has(key)) {
      const json& j = raw(key);
      if (!j.is_number()) fail(key, "expected a number, got " + type_name(j));
      v = j.get<double>();
    } else if (def) {
      v = *def;
    } else {
      fail(key, "required");
    }
    if (!std::isfinite(v)) fail(key, "must be finite");
    if (v < lo || (lo_open && v == lo) || v > hi) {
      std::ostringstream os;
      os << "value " << v << " outside " << (lo_open ? "(" : "[") << lo << ", " << hi << "]";
      fail(key, os.str());
    }
    out_[key] = v;
    return v;
  }

  long long integer(const std::string& key, std::optional<long long> def, long long lo, long long hi) {
    long long v;
    if (has(key)) {
      const json& j = raw(key);
      if (!j.is_number_integer()) fail(key, "expected an integer, got " + type_name(j));
      v = j.get<long long>();
    } else if (def) {
      v = *def;
    } else {
      fail(key, "required");
    }
    if (v < lo || v > hi) fail(key, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out_[key] = v;
    return v;
  }

  std::string text(const std::string& key, std::optional<std::string> def, const std::vector<std::string>& allowed = {}) {
    std::string v;
    if (has(key)) {
      const json& j = raw(key);
      if (!j.is_string()) fail(key, "expected a string, got " + type_name(j));
      v = j.get<std::string>();
    } else if (def) {
      v = *def;
    } else {
      fail(key, "required");
    }
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "'" + v + "' is not one of: " + list);
    }
    out_[key] = v;
    return v;
  }

  bool flag(const std::string& key, bool def) {
    bool v = def;
    if (has(key)) {
      const json& j = raw(key);
      if (!j.is_boolean()) fail(key, "expected a boolean, got " + type_name(j));
      v = j.get<bool>();
    }
    out_[key] = v;
    return v;
  }

  // Nested object; an absent key yields an empty one.
  Section child(const std::string& key) {
    static const json empty = json::object();
    if (has(key)) return Section(raw(key), at(key));
    return Section(empty, at(key));
  }
  void put(const std::string& key, json v) { out_[key] = std::move(v); }
  void drop(const std::string& key) { out_.erase(key); }

  // Rejects keys nobody asked for and returns the resolved object.
  json finish() const {
    for (const auto& [k, v] : in_.items()) {
      if (!seen_.count(k)) fail(k, "unknown key");
    }
    return out_;
  }

 private:
  const json& in_;
  std::string ptr_;
  std::set<std::string> seen_;
  json out_ = json::object();
};

// {"from", "to", "points"} or {"values": [...]}; a bare number or array is also accepted.
std::vector<double> read_grid(Section& parent, const std::string& key, std::optional<std::vector<double>> def,
                              json& resolved) {
  std::vector<double> values;
  if (!parent.has(key)) {
    if (!def) parent.fail(key, "required");
    values = *def;
  } else {
    const json& j = parent.raw(key);
    const std::string ptr = parent.at(key);
    if (j.is_number()) {
      values.push_back(j.get<double>());
    } else if (j.is_array()) {
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ValidationError(ptr + "/" + std::to_string(i), "expected a number");
        values.push_back(j[i].get<double>());
      }
    } else {
      Section s(j, ptr);
      if (s.has("values")) {
        json dummy;
        auto inner = read_grid(s, "values", std::nullopt, dummy);
        values = inner;
      } else {
        const double from = s.number("from", std::nullopt);
        const double to = s.number("to", std::nullopt);
        const long long n = s.integer("points", std::nullopt, 1, 1'000'000);
        if (n == 1 && from != to) s.fail("points", "a single point needs from == to");
        for (long long i = 0; i < n; ++i) values.push_back(n == 1 ? from : from + (to - from) * double(i) / double(n - 1));
      }
      s.finish();
    }
    if (values.empty()) throw ValidationError(ptr, "grid is empty");
    for (const double v : values) {
      if (!std::isfinite(v)) throw ValidationError(ptr, "grid values must be finite");
    }
  }
  resolved = values;
  parent.put(key, values);
  return values;
}

Chirality parse_direction(Section& s, const std::string& key, const std::string& value) {
  if (value == "CW") return Chirality::CW;
  if (value == "CCW") return Chirality::CCW;
  s.fail(key, "direction must be CW or CCW");
}

std::vector<Chirality> read_directions(Section& s) {
  std::vector<Chirality> dirs;
  json names = json::array();
  if (!s.has("directions")) {
    dirs = {Chirality::CW, Chirality::CCW};
    names = {"CW", "CCW"};
  } else {
    const json& j = s.raw("directions");
    if (!j.is_array() || j.empty()) s.fail("directions", "expected a nonempty array of CW/CCW");
    for (const auto& d : j) {
      if (!d.is_string()) s.fail("directions", "expected strings");
      const Chirality c = parse_direction(s, "directions", d.get<std::string>());
      if (std::find(dirs.begin(), dirs.end(), c) != dirs.end()) s.fail("directions", "duplicate direction");
      dirs.push_back(c);
      names.push_back(d);
    }
  }
  s.put("directions", names);
  return dirs;
}

ArrayParams parse_params(const json& in, const std::string& ptr, json& resolved) {
  Section s(in, ptr);
  ArrayParams p;
  p.N = static_cast<int>(s.integer("N", 5, 1, 64));
  p.omega_a = s.number("omega_a", 0.0);
  p.kappa = s.number("kappa", 1.0, 0.0);
  p.t1 = s.number("t1", 0.4, 0.0);
  p.t2 = s.number("t2", 8.0, 0.0);
  if (s.has("chi") && s.has("chi_over_pi")) s.fail("chi_over_pi", "give either chi or chi_over_pi");
  if (s.has("chi_over_pi")) {
    p.chi = kPi * s.number("chi_over_pi", std::nullopt);
    s.drop("chi_over_pi");
    s.put("chi", p.chi);
  } else {
    p.chi = s.number("chi", 0.0);
  }
  if (s.has("chi_c") && s.has("chi_c_over_chi")) s.fail("chi_c_over_chi", "give either chi_c or chi_c_over_chi");
  if (s.has("chi_c_over_chi")) {
    p.chi_c = p.chi * s.number("chi_c_over_chi", std::nullopt);
    s.drop("chi_c_over_chi");
    s.put("chi_c", p.chi_c);
  } else {
    p.chi_c = s.number("chi_c", 0.0);
  }
  p.gamma_drive = s.number("gamma", 1.0, 0.0);
  p.eps = s.number("eps", 0.0);
  p.delta = s.number("delta", 0.0);
  p.delta_p = s.number("delta_p", 0.0);
  if (s.has("alpha0") && s.raw("alpha0").is_array()) {
    const json& a = s.raw("alpha0");
    if (a.size() != 2 || !a[0].is_number() || !a[1].is_number()) s.fail("alpha0", "expected a number or [re, im]");
    p.alpha0 = cplx(a[0].get<double>(), a[1].get<double>());
    s.put("alpha0", a);
  } else {
    p.alpha0 = s.number("alpha0", 2.0);
  }
  p.direction = parse_direction(s, "direction", s.text("direction", "CW"));
  resolved = s.finish();
  try {
    p.validate();
  } catch (const UsageError& e) {
    throw ValidationError(ptr, e.what());
  }
  return p;
}

// `many_body`: the Fock space is actually built, so its dimension must fit the cap.
// Product states with at most `limit` photons in total (limit < 0: all of them).
double capped_dimension(const std::vector<int>& cutoffs, int limit) {
  if (limit < 0) {
    double total = 1.0;
    for (const int c : cutoffs) total *= c;
    return total;
  }
  std::vector<double> ways(static_cast<std::size_t>(limit) + 1, 0.0);
  ways[0] = 1.0;
  for (const int c : cutoffs) {
    std::vector<double> next(ways.size(), 0.0);
    for (std::size_t n = 0; n < ways.size(); ++n) {
      for (int k = 0; k < c && n + static_cast<std::size_t>(k) < ways.size(); ++k) next[n + k] += ways[n];
    }
    ways = std::move(next);
  }
  double total = 0.0;
  for (const double w : ways) total += w;
  return total;
}

std::vector<int> parse_truncation(Section& s, const ArrayParams& p, std::size_t& cap, bool many_body = true,
                                  int* photon_cap = nullptr) {
  if (photon_cap) *photon_cap = static_cast<int>(s.integer("max_total_photons", -1, -1, 4096));
  cap = static_cast<std::size_t>(s.integer("dimension_cap", static_cast<long long>(kPureStateDimCap), 1,
                                           static_cast<long long>(kPureStateDimCap)));
  std::vector<int> cutoffs;
  if (s.has("cutoffs")) {
    if (s.has("edge_cutoff") || s.has("bulk_cutoff")) s.fail("cutoffs", "give either cutoffs or edge/bulk cutoffs");
    const json& j = s.raw("cutoffs");
    if (!j.is_array() || j.size() != static_cast<std::size_t>(2 * p.N)) {
      s.fail("cutoffs", "expected an array of 2N = " + std::to_string(2 * p.N) + " integers");
    }
    for (const auto& c : j) {
      if (!c.is_number_integer() || c.get<long long>() < 1 || c.get<long long>() > 4096) s.fail("cutoffs", "cutoffs must be integers in [1, 4096]");
      cutoffs.push_back(c.get<int>());
    }
    s.put("cutoffs", j);
  } else {
    int edge;
    if (s.has("edge_cutoff") && s.raw("edge_cutoff").is_string()) {
      if (s.raw("edge_cutoff") != "auto") s.fail("edge_cutoff", "expected an integer or \"auto\"");
      edge = TruncationScheme::coherent_cutoff(std::abs(p.alpha0));
      s.put("edge_cutoff", edge);
    } else {
      edge = static_cast<int>(s.integer("edge_cutoff", TruncationScheme::coherent_cutoff(std::abs(p.alpha0)), 1, 4096));
    }
    const int bulk = static_cast<int>(s.integer("bulk_cutoff", 4, 1, 4096));
    cutoffs = TruncationScheme::edge_bulk(p.N, edge, bulk).cutoffs();
  }
  double total = 1.0;
  for (const int c : cutoffs) total *= c;
  if (many_body && total > double(cap)) {
    std::ostringstream os;
    os << "Hilbert dimension " << total << " exceeds the cap " << cap;
    s.fail("", os.str());
  }
  return cutoffs;
}

PhaseGrid parse_grid(Section s, json& resolved) {
  PhaseGrid g;
  g.x_min = s.number("x_min", g.x_min);
  g.x_max = s.number("x_max", g.x_max);
  g.p_min = s.number("p_min", g.p_min);
  g.p_max = s.number("p_max", g.p_max);
  g.nx = static_cast<int>(s.integer("nx", g.nx, 16, 4001));
  g.np = static_cast<int>(s.integer("np", g.np, 16, 4001));
  if (g.x_max <= g.x_min) s.fail("x_max", "must exceed x_min");
  if (g.p_max <= g.p_min) s.fail("p_max", "must exceed p_min");
  resolved = s.finish();
  return g;
}

SteadyOptions parse_steady(Section s, json& resolved) {
  SteadyOptions o;
  const std::string m = s.text("method", "auto", {"auto", "direct", "evolution", "trajectories"});
  o.method = m == "auto" ? SteadyMethod::Auto
             : m == "direct" ? SteadyMethod::Direct
             : m == "evolution" ? SteadyMethod::Evolution
                                : SteadyMethod::Trajectories;
  o.direct_max_dim = static_cast<std::size_t>(s.integer("direct_max_dim", static_cast<long long>(o.direct_max_dim), 1, 100000));
  o.evolution_max_dim = static_cast<std::size_t>(s.integer("evolution_max_dim", static_cast<long long>(o.evolution_max_dim), 1, 100000));
  o.evolution_time = s.number("evolution_time", o.evolution_time, 0.0, HUGE_VAL, true);
  o.settle_tolerance = s.number("settle_tolerance", o.settle_tolerance, 0.0, HUGE_VAL, true);
  o.n_traj = static_cast<int>(s.integer("n_traj", o.n_traj, 2, 1'000'000));
  o.burn_in = s.number("burn_in", o.burn_in, 0.0);
  o.average_time = s.number("average_time", o.average_time, 0.0, HUGE_VAL, true);
  o.sample_dt = s.number("sample_dt", o.sample_dt, 0.0, HUGE_VAL, true);
  resolved = s.finish();
  return o;
}

FitOptions parse_fit(Section s, json& resolved) {
  FitOptions f;
  f.eta_min = s.number("eta_min", f.eta_min, 0.0, HUGE_VAL, true);
  f.eta_max_seed = s.number("eta_max_seed", f.eta_max_seed, 0.0, HUGE_VAL, true);
  f.eta_seeds = static_cast<int>(s.integer("eta_seeds", f.eta_seeds, 1, 100));
  f.theta_seeds = static_cast<int>(s.integer("theta_seeds", f.theta_seeds, 1, 100));
  f.max_evaluations = static_cast<int>(s.integer("max_evaluations", f.max_evaluations, 10, 1'000'000));
  if (f.eta_max_seed < f.eta_min) s.fail("eta_max_seed", "must be at least eta_min");
  resolved = s.finish();
  return f;
}

// Sweep points of an evolve section: parameter overrides merged into /params.
std::vector<json> parse_sweep(Section& s, const json& params_in) {
  std::vector<json> points;
  if (!s.has("sweep")) {
    points.push_back(json::object());
  } else {
    const json& j = s.raw("sweep");
    if (!j.is_array() || j.empty()) s.fail("sweep", "expected a nonempty array of parameter overrides");
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_object()) throw ValidationError(s.at("sweep") + "/" + std::to_string(i), "expected an object");
      if (j[i].contains("N")) throw ValidationError(s.at("sweep") + "/" + std::to_string(i) + "/N", "N cannot be swept");
      points.push_back(j[i]);
    }
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    json merged = params_in;
    for (const auto& [k, v] : points[i].items()) {
      // An override of chi or chi_c replaces either spelling of it.
      for (const auto& family : {std::pair{"chi", "chi_over_pi"}, std::pair{"chi_c", "chi_c_over_chi"}}) {
        if (k == family.first || k == family.second) {
          merged.erase(family.first);
          merged.erase(family.second);
        }
      }
      merged[k] = v;
    }
    json dummy;
    parse_params(merged, s.at("sweep") + "/" + std::to_string(i), dummy);
  }
  s.put("sweep", points);
  return points;
}

void require_linear_params(Section& s, const ArrayParams& p) {
  if (p.chi != 0.0 || p.chi_c != 0.0) s.fail("", "transmission via the QLE matrix needs chi = chi_c = 0 in /params; use the kerr subsection for nonlinear curves");
}

}  // namespace

// ---------------------------------------------------------------------------
// Parsing

bool Scenario::wants(const std::string& kind) const {
  return std::find(outputs.begin(), outputs.end(), kind) != outputs.end();
}

Scenario parse_scenario(const json& doc) {
  if (doc.is_null() || (doc.is_object() && doc.empty())) throw ValidationError("", "scenario is empty");
  Section top(doc, "");
  Scenario sc;
  json resolved = json::object();

  sc.name = top.text("name", std::nullopt);
  if (!std::regex_match(sc.name, std::regex("[A-Za-z0-9_\\-]+"))) top.fail("name", "use letters, digits, '_' and '-' only");
  sc.description = top.text("description", "");
  sc.variant = top.text("variant", "", {"", "desk", "full"});
  const long long seed = top.integer("seed", 2024, 0, std::numeric_limits<long long>::max());
  sc.seed = static_cast<std::uint64_t>(seed);
  sc.output_dir = top.text("output_dir", "out/" + sc.name);

  const json params_in = top.has("params") ? top.raw("params") : json::object();
  json params_resolved;
  sc.params = parse_params(params_in, "/params", params_resolved);
  top.put("params", params_resolved);

  {
    Section t = top.child("truncation");
    bool many_body = false;
    if (doc.contains("outputs") && doc["outputs"].is_object()) {
      for (const char* k : {"excitation", "rk_sweep", "evolve"}) many_body = many_body || doc["outputs"].contains(k);
    }
    sc.cutoffs = parse_truncation(t, sc.params, sc.dimension_cap, many_body, &sc.max_total_photons);
    top.put("truncation", t.finish());
  }

  if (!top.has("outputs")) top.fail("outputs", "required: request at least one output");
  Section outs = top.child("outputs");
  json outs_resolved = json::object();
  const ArrayParams& p = sc.params;
  const double dense_dim = capped_dimension(sc.cutoffs, sc.max_total_photons);

  for (const auto& kind : kOutputKinds) {
    if (!outs.has(kind)) continue;
    sc.outputs.push_back(kind);
    Section s = outs.child(kind);
    json g;
    if (kind == "spectrum" || kind == "winding" || kind == "edge_profile") {
      const double ratio = p.t2 > 0 ? p.t1 / p.t2 : 0.0;
      read_grid(s, "t1_over_t2", std::vector<double>{ratio}, g);
      if (kind != "winding") {
        read_grid(s, "cavities", std::vector<double>{double(p.N)}, g);
        for (const double n : g.get<std::vector<double>>()) {
          if (n < 1 || n > 2000 || n != std::floor(n)) s.fail("cavities", "cavity counts must be integers in [1, 2000]");
        }
      }
      if (kind == "spectrum") s.number("edge_window", 1e-3, 0.0, HUGE_VAL, true);
      if (p.t2 <= 0.0) s.fail("", "needs t2 > 0 in /params (sweeps scale t1 = ratio * t2)");
    } else if (kind == "excitation" || kind == "rk_sweep") {
      if (p.eps == 0.0) s.fail("", "needs a nonzero drive eps in /params");
      if (p.gamma_drive <= 0.0) s.fail("", "needs gamma > 0 in /params");
      if (kind == "excitation") {
        const std::string unit = s.text("delta_unit", "kappa", {"kappa", "chi"});
        if (unit == "chi" && p.chi == 0.0) s.fail("delta_unit", "chi units need chi != 0");
        read_grid(s, "delta", std::nullopt, g);
        read_directions(s);
      } else {
        read_grid(s, "t1_over_t2", std::nullopt, g);
        if (p.chi == 0.0) s.fail("", "the Kerr sideband needs chi != 0");
        s.number("delta_over_chi", -1.0);
      }
      json st;
      parse_steady(s.child("steady"), st);
      s.put("steady", st);
    } else if (kind == "evolve") {
      const std::string method = s.text("method", "dense", {"dense", "trajectories"});
      const std::string unit = s.text("time_unit", "chi", {"chi", "kappa"});
      if (unit == "chi" && p.chi == 0.0) s.fail("time_unit", "chi units need chi != 0");
      s.number("t_final", std::nullopt, 0.0, HUGE_VAL, true);
      s.integer("records", 41, 2, 100000);
      s.integer("n_traj", 200, 1, 10'000'000);
      s.number("rtol", 1e-8, 0.0, 1.0, true);
      s.number("atol", 1e-10, 0.0, 1.0, true);
      read_directions(s);
      parse_sweep(s, params_in);
      if (method == "dense" && dense_dim > double(kDensityDimCap)) {
        std::ostringstream os;
        os << "dense evolution at dimension " << dense_dim << " exceeds the density-matrix cap " << kDensityDimCap
           << "; use trajectories";
        s.fail("method", os.str());
      }
      if (method == "trajectories" && sc.max_total_photons >= 0) {
        throw ValidationError("/truncation/max_total_photons", "the photon cap applies to dense evolution only");
      }
    } else if (kind == "wigner" || kind == "metrics") {
      if (!outs.has("evolve")) s.fail("", "needs an evolve section");
      if (s.has("times") && s.raw("times").is_string()) {
        if (s.raw("times") != "final") s.fail("times", "expected \"final\" or a list of times");
        s.put("times", "final");
      } else {
        read_grid(s, "times", std::vector<double>{}, g);
        for (const double t : g.get<std::vector<double>>()) {
          if (t < 0.0) s.fail("times", "times must be nonnegative");
        }
        if (g.empty()) s.put("times", "final");
      }
      json grid;
      parse_grid(s.child("grid"), grid);
      s.put("grid", grid);
      if (kind == "metrics") {
        json fit;
        parse_fit(s.child("fit"), fit);
        s.put("fit", fit);
      }
    } else if (kind == "transmission") {
      require_linear_params(s, p);
      if (p.gamma_drive <= 0.0) s.fail("", "needs gamma > 0 in /params");
      const std::string source = s.text("source", "both", {"numeric", "analytic", "both"});
      if (source != "numeric" && std::abs(p.gamma_drive - p.kappa) > 1e-12 * std::max(1.0, p.kappa)) {
        s.fail("source", "the closed form assumes gamma = kappa");
      }
      s.text("delta_p_unit", "t2", {"t2", "kappa"});
      read_grid(s, "delta_p", std::vector<double>{0.0}, g);
      if (s.has("t1_over_t2")) read_grid(s, "t1_over_t2", std::nullopt, g);
      if (s.has("kerr")) {
        Section k = s.child("kerr");
        json kg;
        read_grid(k, "t1_over_t2", std::nullopt, kg);
        json kp;
        json kin = k.has("params") ? k.raw("params") : json::object();
        ArrayParams knl = parse_params(kin, k.at("params"), kp);
        if (knl.eps == 0.0) throw ValidationError(k.at("params") + "/eps", "needs a nonzero drive");
        k.put("params", kp);
        Section kt = k.child("truncation");
        std::size_t cap = 0;
        parse_truncation(kt, knl, cap);
        k.put("truncation", kt.finish());
        json st;
        parse_steady(k.child("steady"), st);
        k.put("steady", st);
        s.put("kerr", k.finish());
      }
    }
    outs_resolved[kind] = s.finish();
  }
  outs.finish();
  if (sc.outputs.empty()) top.fail("outputs", "request at least one output");
  top.put("outputs", outs_resolved);
  sc.resolved = top.finish();
  return sc;
}

Scenario parse_scenario_text(const std::string& text) {
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
    throw ValidationError("", "scenario file is empty");
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("", std::string("not valid JSON: ") + e.what());
  }
  return parse_scenario(doc);
}

Scenario load_scenario(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("", "cannot open scenario file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str());
}

fs::path scenario_directory() {
  if (const char* env = std::getenv("TOPOCAT_SCENARIO_DIR"); env && *env) return env;
  return TOPOCAT_SCENARIO_DIR;
}

std::vector<std::string> list_scenarios() {
  std::vector<std::string> names;
  const fs::path dir = scenario_directory();
  if (!fs::is_directory(dir)) return names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

fs::path resolve_scenario(const std::string& name_or_path) {
  if (fs::exists(name_or_path)) return name_or_path;
  const fs::path bundled = scenario_directory() / (name_or_path + ".json");
  if (fs::exists(bundled)) return bundled;
  return name_or_path;
}

// ---------------------------------------------------------------------------
// Running

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// Free text as a quoted CSV cell.
std::string quoted(const std::string& text) {
  std::string q = "\"";
  for (const char c : text) {
    if (c == '"') q += '"';
    q += (c == '\n' ? ' ' : c);
  }
  return q + "\"";
}

std::string lower(Chirality c) { return c == Chirality::CW ? "cw" : "ccw"; }

class Csv {
 public:
  Csv(const fs::path& file, const std::vector<std::string>& header) : out_(file) {
    if (!out_) throw std::runtime_error("cannot write " + file.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

std::vector<double> grid_of(const json& section, const std::string& key) { return section.at(key).get<std::vector<double>>(); }

ArrayParams with_ratio(ArrayParams p, double ratio, int cavities) {
  p.t1 = ratio * p.t2;
  p.N = cavities;
  return p;
}

SteadyOptions steady_from(const json& j, const Scenario& sc, int workers) {
  json dummy;
  SteadyOptions o = parse_steady(Section(j, ""), dummy);
  o.seed = sc.seed;
  o.workers = workers;
  return o;
}

class Runner {
 public:
  Runner(const Scenario& sc, fs::path dir, RunManifest& m, int workers)
      : sc_(sc), dir_(std::move(dir)), m_(m), workers_(workers) {}

  void spectrum();
  void winding();
  void edge_profile();
  void excitation();
  void rk_sweep();
  void evolve_family();
  void transmission();

 private:
  void add(const std::string& file, const std::string& what) { m_.add_output(dir_, file, what); }
  CompositeSpace space_for(const ArrayParams& p) const {
    return build_space(p.N, TruncationScheme(sc_.cutoffs, sc_.dimension_cap));
  }

  const Scenario& sc_;
  fs::path dir_;
  RunManifest& m_;
  int workers_;
};

void Runner::spectrum() {
  const json& s = sc_.section("spectrum");
  const double window = s.at("edge_window").get<double>();
  Csv csv(dir_ / "spectrum.csv", {"cavities", "t1_over_t2", "index", "energy[kappa]", "edge"});
  for (const double n : grid_of(s, "cavities")) {
    for (const double r : grid_of(s, "t1_over_t2")) {
      const ArrayParams p = with_ratio(sc_.params, r, int(n));
      const auto spec = single_excitation_spectrum(p);
      for (Eigen::Index i = 0; i < spec.eigenvalues.size(); ++i) {
        const double e = spec.eigenvalues(i);
        const bool edge = std::abs(e - p.omega_a) < window * p.t2;
        csv.row({fmt(n), fmt(r), std::to_string(i), fmt(e), edge ? "1" : "0"});
      }
    }
  }
  csv.close();
  add("spectrum.csv", "single-excitation spectrum of the open chain");
}

void Runner::winding() {
  const json& s = sc_.section("winding");
  Csv csv(dir_ / "winding.csv", {"t1_over_t2", "winding"});
  for (const double r : grid_of(s, "t1_over_t2")) {
    std::string w;
    try {
      w = std::to_string(winding_number(with_ratio(sc_.params, r, sc_.params.N)));
    } catch (const GapClosingError&) {
      w = "nan";
    }
    csv.row({fmt(r), w});
  }
  csv.close();
  add("winding.csv", "bulk winding number (nan where the gap closes)");
}

void Runner::edge_profile() {
  const json& s = sc_.section("edge_profile");
  Csv csv(dir_ / "edge_profile.csv", {"cavities", "t1_over_t2", "cavity", "chirality", "occupation", "energy[kappa]"});
  for (const double n : grid_of(s, "cavities")) {
    for (const double r : grid_of(s, "t1_over_t2")) {
      const auto prof = topocat::edge_profile(with_ratio(sc_.params, r, int(n)));
      for (std::size_t k = 0; k < prof.occupation.size(); ++k) {
        const ModeId m = mode_at(int(k));
        csv.row({fmt(n), fmt(r), std::to_string(m.cavity), to_string(m.chirality), fmt(prof.occupation[k]), fmt(prof.energy)});
      }
    }
  }
  csv.close();
  add("edge_profile.csv", "occupation of the eigenmode nearest omega_a");
}

void Runner::excitation() {
  const json& s = sc_.section("excitation");
  const double unit = s.at("delta_unit") == "chi" ? sc_.params.chi : 1.0;
  std::vector<double> deltas;
  for (const double d : grid_of(s, "delta")) deltas.push_back(d * unit);
  const SteadyOptions opt = steady_from(s.at("steady"), sc_, workers_);
  const CompositeSpace space = space_for(sc_.params);
  Csv csv(dir_ / "excitation.csv", {"direction", "delta[kappa]", "delta_over_chi", "n", "std_error", "method", "error"});
  std::string failure;
  for (const auto& dname : s.at("directions")) {
    const Chirality dir = dname == "CW" ? Chirality::CW : Chirality::CCW;
    const auto pts = excitation_spectrum(space, sc_.params, dir, deltas, opt);
    for (const auto& pt : pts) {
      const double over_chi = sc_.params.chi != 0.0 ? pt.delta / sc_.params.chi : std::nan("");
      csv.row({to_string(dir), fmt(pt.delta), fmt(over_chi), fmt(pt.n), fmt(pt.std_error), pt.method, pt.error.empty() ? "" : quoted(pt.error)});
      if (!pt.error.empty() && failure.empty()) {
        failure = "excitation " + to_string(dir) + " at delta " + fmt(pt.delta) + ": " + pt.error;
      }
    }
  }
  csv.close();
  add("excitation.csv", "steady-state <n> of the driven edge mode versus detuning");
  if (!failure.empty()) throw NumericalError(failure);
}

void Runner::rk_sweep() {
  const json& s = sc_.section("rk_sweep");
  const double delta = s.at("delta_over_chi").get<double>() * sc_.params.chi;
  const SteadyOptions opt = steady_from(s.at("steady"), sc_, workers_);
  const CompositeSpace space = space_for(sc_.params);
  Csv csv(dir_ / "rk_sweep.csv", {"t1_over_t2", "n_cw", "n_cw_std_error", "n_ccw", "n_ccw_std_error", "R_k", "method"});
  const std::vector<double> grid{delta};
  std::string failure;
  for (const double r : grid_of(s, "t1_over_t2")) {
    const ArrayParams p = with_ratio(sc_.params, r, sc_.params.N);
    const auto cw = excitation_spectrum(space, p, Chirality::CW, grid, opt).front();
    const auto ccw = excitation_spectrum(space, p, Chirality::CCW, grid, opt).front();
    if (!cw.error.empty() || !ccw.error.empty()) {
      failure = "steady state failed at t1/t2 = " + fmt(r) + ": " + cw.error + ccw.error;
      break;
    }
    const Rates rates = nonreciprocal_rates(cw.n, ccw.n, 0.0, 0.0);
    csv.row({fmt(r), fmt(cw.n), fmt(cw.std_error), fmt(ccw.n), fmt(ccw.std_error), fmt(rates.R_k), cw.method});
  }
  csv.close();
  add("rk_sweep.csv", "Kerr-sideband excitation difference rate versus t1/t2");
  if (!failure.empty()) throw NumericalError(failure);
}

struct DirectionRun {
  Chirality dir;
  Trajectory traj;
  bool failed = false;
};

void Runner::evolve_family() {
  const json& s = sc_.section("evolve");
  const bool chi_units = s.at("time_unit") == "chi";
  const double t_user = s.at("t_final").get<double>();
  const int records = s.at("records").get<int>();
  const bool dense = s.at("method") == "dense";
  const std::vector<json> sweep = s.at("sweep").get<std::vector<json>>();
  const json params_in = sc_.resolved.at("params");

  Csv evo(dir_ / "evolution.csv", {"point", "direction", "t[1/kappa]", "chi_t", "observable", "value", "std_error", "method"});
  Csv inv(dir_ / "invariants.csv", {"point", "direction", "max_trace_drift", "max_hermiticity_error", "min_eigenvalue", "max_purity", "holds"});
  std::optional<Csv> met, rates;
  if (sc_.wants("metrics")) {
    met.emplace(dir_ / "metrics.csv", std::vector<std::string>{"point", "direction", "t[1/kappa]", "chi_t", "n", "delta", "I", "I_exact", "F",
                                                              "size", "eta", "beta", "theta", "fit_relative_residual", "fit_poor"});
    rates.emplace(dir_ / "rates.csv", std::vector<std::string>{"point", "t[1/kappa]", "chi_t", "F_cw", "F_ccw", "R_F"});
  }
  std::vector<std::string> wigner_files;
  std::optional<std::string> failure;

  for (std::size_t pi = 0; pi < sweep.size() && !failure; ++pi) {
    json merged = params_in;
    for (const auto& [k, v] : sweep[pi].items()) {
      if (k == "chi_over_pi") merged.erase("chi");
      if (k == "chi_c_over_chi") merged.erase("chi_c");
      merged[k] = v;
    }
    json dummy;
    const ArrayParams p = parse_params(merged, "/params", dummy);
    const double t_final = chi_units ? t_user / p.chi : t_user;
    const CompositeSpace space = space_for(p);
    const LinOp h = array_hamiltonian(space, p);
    const auto collapses = array_collapses(space, p, false);

    std::vector<DirectionRun> runs;
    for (const auto& dname : s.at("directions")) {
      const Chirality dir = dname == "CW" ? Chirality::CW : Chirality::CCW;
      const ModeId mode{1, dir};
      EvolveSpec spec;
      spec.t_final = t_final;
      spec.record_stride = t_final / (records - 1);
      spec.method = dense ? EvolveMethod::DenseMaster : EvolveMethod::Trajectories;
      spec.n_traj = s.at("n_traj").get<int>();
      spec.rtol = s.at("rtol").get<double>();
      spec.atol = s.at("atol").get<double>();
      spec.seed = sc_.seed + 7919 * pi + (dir == Chirality::CW ? 0 : 1);
      spec.workers = workers_;
      spec.reduced_modes = {mode};
      if (dense) spec.max_total_photons = sc_.max_total_photons;
      std::vector<Observable> obs;
      for (const Chirality c : {Chirality::CW, Chirality::CCW}) {
        obs.push_back({"n_1_" + lower(c), mode_operator(space, {1, c}, OpKind::Number)});
      }
      DirectionRun run{dir, {}, false};
      try {
        run.traj = evolve(coherent_ket(space, mode, p.alpha0), h, collapses, spec, obs);
      } catch (const EvolutionFailure& e) {
        run.traj = e.partial();
        run.failed = true;
        failure = std::string("evolution (") + to_string(dir) + "): " + e.what();
      }
      const Trajectory& tr = run.traj;
      for (std::size_t k = 0; k < tr.names.size(); ++k) {
        for (std::size_t t = 0; t < tr.times.size(); ++t) {
          evo.row({std::to_string(pi), to_string(dir), fmt(tr.times[t]), fmt(tr.times[t] * p.chi), tr.names[k], fmt(tr.values[k][t]),
                   fmt(tr.std_errors[k][t]), tr.method});
        }
      }
      const auto& iv = tr.invariants;
      inv.row({std::to_string(pi), to_string(dir), fmt(iv.max_trace_drift), fmt(iv.max_hermiticity_error), fmt(iv.min_eigenvalue),
               fmt(iv.max_purity), dense ? (iv.holds() ? "1" : "0") : "n/a"});
      if (dense && !iv.holds()) m_.warnings.push_back("dynamics invariants violated at point " + std::to_string(pi) + " " + to_string(dir));
      runs.push_back(std::move(run));
      if (failure) break;
    }

    // Record indices selected by a times list (in the evolve time unit) or the final record.
    auto pick = [&](const json& sec, const Trajectory& tr) {
      std::vector<std::size_t> idx;
      if (tr.times.empty()) return idx;
      if (sec.at("times").is_string()) {
        idx.push_back(tr.times.size() - 1);
        return idx;
      }
      for (const double tu : sec.at("times").get<std::vector<double>>()) {
        const double t = chi_units ? tu / p.chi : tu;
        if (t > tr.times.back() + 1e-12 * std::max(1.0, t)) continue;
        std::size_t best = 0;
        for (std::size_t i = 1; i < tr.times.size(); ++i) {
          if (std::abs(tr.times[i] - t) < std::abs(tr.times[best] - t)) best = i;
        }
        idx.push_back(best);
      }
      return idx;
    };

    if (sc_.wants("wigner")) {
      const json& ws = sc_.section("wigner");
      json dummy_grid;
      const PhaseGrid grid = parse_grid(Section(ws.at("grid"), "/outputs/wigner/grid"), dummy_grid);
      for (const auto& run : runs) {
        const ModeId mode{1, run.dir};
        if (!run.traj.reduced.count(mode)) continue;
        const auto& states = run.traj.reduced.at(mode);
        for (const std::size_t i : pick(ws, run.traj)) {
          if (i >= states.size()) continue;
          const WignerGrid w = wigner(states[i], grid);
          std::ostringstream name;
          name << "wigner_p" << pi << "_" << lower(run.dir) << "_r" << i << ".csv";
          Csv csv(dir_ / name.str(), {"x", "p", "W"});
          for (int a = 0; a < grid.nx; ++a) {
            for (int b = 0; b < grid.np; ++b) csv.row({fmt(grid.x(a)), fmt(grid.p(b)), fmt(w.values(a, b))});
          }
          wigner_files.push_back(name.str() + "|" + to_string(run.dir) + " mode at chi t = " + fmt(run.traj.times[i] * p.chi));
        }
      }
    }

    if (sc_.wants("metrics")) {
      const json& ms = sc_.section("metrics");
      json d1, d2;
      const PhaseGrid grid = parse_grid(Section(ms.at("grid"), "/outputs/metrics/grid"), d1);
      const FitOptions fit = parse_fit(Section(ms.at("fit"), "/outputs/metrics/fit"), d2);
      std::map<std::size_t, std::map<Chirality, double>> fids;
      for (const auto& run : runs) {
        const ModeId mode{1, run.dir};
        if (!run.traj.reduced.count(mode)) continue;
        const auto& states = run.traj.reduced.at(mode);
        for (const std::size_t i : pick(ms, run.traj)) {
          if (i >= states.size()) continue;
          const MetricSet m = compute_metrics(states[i], grid, fit);
          const double t = run.traj.times[i];
          met->row({std::to_string(pi), to_string(run.dir), fmt(t), fmt(t * p.chi), fmt(m.n), fmt(m.delta), fmt(m.I),
                    fmt(macroscopicity_exact(states[i])), fmt(m.F), fmt(m.size), fmt(m.fit.eta), fmt(m.fit.beta), fmt(m.fit.theta),
                    fmt(m.fit.relative_residual), m.fit.poor ? "1" : "0"});
          fids[i][run.dir] = m.F;
        }
      }
      for (const auto& [i, f] : fids) {
        if (f.size() != 2) continue;
        const double t = runs.front().traj.times[i];
        const double fcw = f.at(Chirality::CW), fccw = f.at(Chirality::CCW);
        rates->row({std::to_string(pi), fmt(t), fmt(t * p.chi), fmt(fcw), fmt(fccw), fmt(std::abs(fcw - fccw))});
      }
    }
  }

  evo.close();
  add("evolution.csv", "recorded observables (value and standard error)");
  inv.close();
  add("invariants.csv", "trace, Hermiticity, positivity and purity checks of dense runs");
  for (const auto& wf : wigner_files) {
    const auto bar = wf.find('|');
    add(wf.substr(0, bar), "Wigner function of the " + wf.substr(bar + 1));
  }
  if (met) {
    met.reset();
    rates.reset();
    add("metrics.csv", "negativity, macroscopicity, fidelity and fitted cat parameters");
    add("rates.csv", "fidelity nonreciprocal rate R_F");
  }
  if (failure) throw NumericalError(*failure);
}

void Runner::transmission() {
  const json& s = sc_.section("transmission");
  const ArrayParams& p = sc_.params;
  const std::string source = s.at("source");
  const double unit = s.at("delta_p_unit") == "t2" ? p.t2 : 1.0;
  std::vector<std::string> sources;
  if (source != "analytic") sources.push_back("numeric");
  if (source != "numeric") sources.push_back("analytic");
  std::vector<double> grid;
  for (const double d : grid_of(s, "delta_p")) grid.push_back(d * unit);
  {
    Csv csv(dir_ / "transmission.csv", {"source", "delta_p[kappa]", "T_cw", "T_ccw"});
    for (const auto& src : sources) {
      const TransmissionCurve c = transmission_curve(p, grid, src);
      for (std::size_t i = 0; i < c.delta_p.size(); ++i) csv.row({src, fmt(c.delta_p[i]), fmt(c.T_cw[i]), fmt(c.T_ccw[i])});
    }
  }
  add("transmission.csv", "linear transmission versus probe detuning");

  if (s.contains("t1_over_t2")) {
    {
      Csv csv(dir_ / "transmission_ratio.csv", {"source", "t1_over_t2", "T_cw", "T_ccw"});
      for (const auto& src : sources) {
        for (const double r : grid_of(s, "t1_over_t2")) {
          const ArrayParams q = with_ratio(p, r, p.N);
          const double zero[] = {p.delta_p};
          const TransmissionCurve c = transmission_curve(q, zero, src);
          csv.row({src, fmt(r), fmt(c.T_cw[0]), fmt(c.T_ccw[0])});
        }
      }
    }
    add("transmission_ratio.csv", "linear transmission at fixed probe detuning versus t1/t2");
  }

  if (s.contains("kerr")) {
    const json& k = s.at("kerr");
    json dummy;
    const ArrayParams base = parse_params(k.at("params"), "/outputs/transmission/kerr/params", dummy);
    std::size_t cap = 0;
    Section kt(k.at("truncation"), "/outputs/transmission/kerr/truncation");
    const std::vector<int> cutoffs = parse_truncation(kt, base, cap);
    const SteadyOptions opt = steady_from(k.at("steady"), sc_, workers_);
    const CompositeSpace space = build_space(base.N, TruncationScheme(cutoffs, cap));
    {
      Csv csv(dir_ / "transmission_kerr.csv", {"t1_over_t2", "T_cw", "T_ccw", "method"});
      for (const double r : grid_of(k, "t1_over_t2")) {
        double T[2];
        std::string method;
        for (const Chirality dir : {Chirality::CW, Chirality::CCW}) {
          ArrayParams q = with_ratio(base, r, base.N);
          q.direction = dir;
          const ModeId m{1, dir};
          const LinOp a = mode_operator(space, m, OpKind::Annihilate);
          const LinOp ad = mode_operator(space, m, OpKind::Create);
          const std::vector<Observable> obs{{"x", cplx(0.5) * (a + ad)}, {"y", cplx(0.0, -0.5) * (a - ad)}};
          const SteadyStateResult res = steady_state(driven_hamiltonian(space, q), array_collapses(space, q, true), obs, opt);
          const cplx mean(res.observables.at("x").mean, res.observables.at("y").mean);
          T[dir == Chirality::CW ? 0 : 1] = std::norm(1.0 - std::sqrt(2.0 * q.gamma_drive) * mean / q.eps);
          method = to_string(res.method);
        }
        csv.row({fmt(r), fmt(T[0]), fmt(T[1]), method});
      }
    }
    add("transmission_kerr.csv", "steady-state transmission with the Kerr edge cavity");
  }
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

RunOutcome run_scenario(const Scenario& sc, const RunOptions& options) {
  RunOutcome out;
  out.output_dir = options.output_dir ? *options.output_dir : fs::path(sc.output_dir);
  fs::create_directories(out.output_dir);
  RunManifest& m = out.manifest;
  m.scenario = sc.name;
  m.parameters = sc.resolved;
  m.workers = resolve_workers(options.workers);
  m.started_utc = utc_now();

  set_warning_sink([&m](const std::string& w) {
    m.warnings.push_back(w);
    std::cerr << "warning: " << w << "\n";
  });
  const auto start = std::chrono::steady_clock::now();
  Runner r(sc, out.output_dir, m, m.workers);
  auto finish = [&](const std::string& status, const std::string& error) {
    m.status = status;
    m.error = error;
    m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    set_warning_sink(nullptr);
    m.write(out.output_dir / "manifest.json");
  };
  try {
    if (sc.wants("spectrum")) r.spectrum();
    if (sc.wants("winding")) r.winding();
    if (sc.wants("edge_profile")) r.edge_profile();
    if (sc.wants("excitation")) r.excitation();
    if (sc.wants("rk_sweep")) r.rk_sweep();
    if (sc.wants("evolve")) r.evolve_family();
    if (sc.wants("transmission")) r.transmission();
  } catch (const NumericalError& e) {
    finish("numerical_failure", e.what());
    out.exit_code = 3;
    return out;
  } catch (const std::exception& e) {
    finish("error", e.what());
    throw;
  }
  finish("ok", "");
  return out;
}

}  // namespace topocat
