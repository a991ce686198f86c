#include "adiabat/config.hpp"

#include "adiabat/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <numbers>

namespace adiabat {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!known) throw ConfigError(join(path, it.key()), "unknown field");
  }
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  return v;
}

double number(const json& obj, const std::string& path, const char* key, double fallback) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : number(*it, join(path, key));
}

double required_number(const json& obj, const std::string& path, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(join(path, key), "required field is missing");
  return number(*it, join(path, key));
}

long integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<long>();
}

long integer(const json& obj, const std::string& path, const char* key, long fallback) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : integer(*it, join(path, key));
}

std::string text(const json& obj, const std::string& path, const char* key, const std::string& fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_string()) throw ConfigError(join(path, key), "expected a string");
  return it->get<std::string>();
}

std::uint64_t seed_value(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0) return static_cast<std::uint64_t>(j.get<long long>());
  throw ConfigError(path, "expected a non-negative integer");
}

void require_positive(double v, const std::string& path) {
  if (!(v > 0)) throw ConfigError(path, "must be positive");
}

Units parse_units(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected one of hz, rad_s, omega1_units");
  const auto s = j.get<std::string>();
  if (s == "hz") return Units::hz;
  if (s == "rad_s") return Units::rad_s;
  if (s == "omega1_units") return Units::omega1_units;
  throw ConfigError(path, "unknown units '" + s + "'; expected hz, rad_s or omega1_units");
}

UnitSystem block_units(const json& obj, const std::string& path, const UnitSystem& parent) {
  UnitSystem u = parent;
  if (auto it = obj.find("units"); it != obj.end()) u.units = parse_units(*it, join(path, "units"));
  return u;
}

Vec3d vector3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(path, "expected an array of three numbers");
  return Vec3d(number(j[0], at(path, 0)), number(j[1], at(path, 1)), number(j[2], at(path, 2)));
}

/// Either an explicit array or {start, stop, points | step}.
std::vector<double> grid(const json& j, const std::string& path, const std::function<double(double)>& convert) {
  std::vector<double> out;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(convert(number(j[i], at(path, i))));
  } else if (j.is_object()) {
    check_keys(j, path, {"start", "stop", "points", "step"});
    const double a = required_number(j, path, "start");
    const double b = required_number(j, path, "stop");
    long points = 0;
    if (j.contains("points") == j.contains("step")) throw ConfigError(path, "give exactly one of points or step");
    if (j.contains("points")) {
      points = integer(j, path, "points", 0);
    } else {
      const double step = required_number(j, path, "step");
      require_positive(step, join(path, "step"));
      points = std::lround(std::abs(b - a) / step) + 1;
    }
    if (points < 1) throw ConfigError(join(path, "points"), "must be at least 1");
    for (long i = 0; i < points; ++i) {
      const double v = points == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
      out.push_back(convert(v));
    }
  } else {
    throw ConfigError(path, "expected an array or a {start, stop, points} object");
  }
  if (out.empty()) throw ConfigError(path, "grid is empty");
  return out;
}

std::vector<double> raw_vector(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], at(path, i)));
  return out;
}

std::filesystem::path resolve_file(const json& j, const std::string& path, const std::filesystem::path& base) {
  if (!j.is_string()) throw ConfigError(path, "expected a file path");
  std::filesystem::path p = j.get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(path, "file not found: " + p.string());
  return p;
}

ResponseCurve load_table(const std::filesystem::path& p, const std::string& path, double scale) {
  try {
    return read_weight_table(p, scale);
  } catch (const IoError& e) {
    throw ConfigError(path, e.what());
  }
}

BlochAngles parse_state(const json& j, const std::string& path, const BlochAngles* initial) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "up") return {0, 0};
    if (s == "down") return {std::numbers::pi, 0};
    if (s == "initial" && initial) return *initial;
    throw ConfigError(path, "unknown state '" + s + "'");
  }
  require_object(j, path);
  check_keys(j, path, {"theta", "phi"});
  return {number(j, path, "theta", 0.0), number(j, path, "phi", 0.0)};
}

Mat2c complex_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(path, "expected [[[re, im], [re, im]], [[re, im], [re, im]]]");
  Mat2c m;
  for (int r = 0; r < 2; ++r) {
    const auto rp = at(path, r);
    if (!j[r].is_array() || j[r].size() != 2) throw ConfigError(rp, "expected two entries");
    for (int c = 0; c < 2; ++c) {
      const auto cp = at(rp, c);
      const json& e = j[r][c];
      if (e.is_number()) {
        m(r, c) = cplx(number(e, cp), 0.0);
      } else if (e.is_array() && e.size() == 2) {
        m(r, c) = cplx(number(e[0], at(cp, 0)), number(e[1], at(cp, 1)));
      } else {
        throw ConfigError(cp, "expected a number or [re, im]");
      }
    }
  }
  return m;
}

json complex_matrix_json(const Mat2c& m) {
  json out = json::array();
  for (int r = 0; r < 2; ++r) {
    json row = json::array();
    for (int c = 0; c < 2; ++c) row.push_back({m(r, c).real(), m(r, c).imag()});
    out.push_back(row);
  }
  return out;
}

json vec_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }
json tol_json(const Tolerance& t) { return {{"rel", t.rel}, {"abs", t.abs}}; }

Tolerance parse_tolerance(const json& j, const std::string& path, Tolerance t) {
  require_object(j, path);
  check_keys(j, path, {"rel", "abs"});
  t.rel = number(j, path, "rel", t.rel);
  t.abs = number(j, path, "abs", t.abs);
  require_positive(t.rel, join(path, "rel"));
  require_positive(t.abs, join(path, "abs"));
  return t;
}

std::string rule_name(QuadratureRule r) { return r == QuadratureRule::gauss_legendre ? "gauss_legendre" : "trapezoid"; }

QuadratureSpec parse_quadrature(const json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"rule", "nodes", "panel_order", "refine_tol", "refine_depth"});
  QuadratureSpec q;
  const auto rule = text(j, path, "rule", "gauss_legendre");
  if (rule == "gauss_legendre") {
    q.rule = QuadratureRule::gauss_legendre;
  } else if (rule == "trapezoid") {
    q.rule = QuadratureRule::trapezoid;
  } else {
    throw ConfigError(join(path, "rule"), "expected gauss_legendre or trapezoid");
  }
  q.nodes = static_cast<int>(integer(j, path, "nodes", q.nodes));
  q.panel_order = static_cast<int>(integer(j, path, "panel_order", q.panel_order));
  q.refine_tol = number(j, path, "refine_tol", q.refine_tol);
  q.refine_depth = static_cast<int>(integer(j, path, "refine_depth", q.refine_depth));
  if (q.nodes < 2) throw ConfigError(join(path, "nodes"), "must be at least 2");
  if (q.refine_tol < 0) throw ConfigError(join(path, "refine_tol"), "must be non-negative");
  if (q.refine_depth < 0 || q.refine_depth > 40) throw ConfigError(join(path, "refine_depth"), "must be in [0, 40]");
  if (q.panel_order < 1) throw ConfigError(join(path, "panel_order"), "must be positive");
  if (q.rule == QuadratureRule::gauss_legendre && q.nodes % q.panel_order != 0) {
    throw ConfigError(join(path, "nodes"), "must be a multiple of panel_order");
  }
  return q;
}

MemberSpec parse_member(const json& j, const std::string& path, const UnitSystem& units, const AnsatzSpec& ansatz,
                        std::size_t index) {
  require_object(j, path);
  check_keys(j, path,
             {"label", "rabi", "offset", "weight", "metrics", "perturbation", "perturbation_matrix", "initial", "target",
              "sign"});
  MemberSpec m;
  m.label = text(j, path, "label", "m" + std::to_string(index));
  m.rabi = j.contains("rabi") ? units.frequency(number(j["rabi"], join(path, "rabi"))) : ansatz.omega1_max;
  require_positive(m.rabi, join(path, "rabi"));
  m.offset = units.frequency(number(j, path, "offset", 0.0));
  m.weight = number(j, path, "weight", 0.0);
  if (m.weight < 0 || m.weight > 1) throw ConfigError(join(path, "weight"), "must lie in [0, 1]");

  if (auto it = j.find("metrics"); it != j.end()) {
    const auto mp = join(path, "metrics");
    require_object(*it, mp);
    check_keys(*it, mp, {"p0", "p_ad", "p_per"});
    m.metrics.p0 = number(*it, mp, "p0", 0.0);
    m.metrics.p_ad = number(*it, mp, "p_ad", 0.0);
    m.metrics.p_per = number(*it, mp, "p_per", 0.0);
  }
  try {
    m.metrics.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(join(path, "metrics"), e.what());
  }

  const auto kind = text(j, path, "perturbation", "none");
  try {
    m.perturbation = perturbation_kind_from_string(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(join(path, "perturbation"), e.what());
  }
  if (m.perturbation == PerturbationKind::sigma_z) m.matrix = pauli(2);
  if (m.perturbation == PerturbationKind::custom) {
    if (!j.contains("perturbation_matrix")) {
      throw ConfigError(join(path, "perturbation_matrix"), "required for a custom perturbation");
    }
    m.matrix = complex_matrix(j["perturbation_matrix"], join(path, "perturbation_matrix"));
    try {
      Perturbation::custom(m.matrix);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(join(path, "perturbation_matrix"), e.what());
    }
  } else if (j.contains("perturbation_matrix")) {
    throw ConfigError(join(path, "perturbation_matrix"), "only valid with perturbation = custom");
  }
  if (m.metrics.p_per > 0 && m.perturbation == PerturbationKind::none) {
    throw ConfigError(join(path, "metrics.p_per"), "nonzero weight needs a perturbation");
  }

  if (auto it = j.find("initial"); it != j.end()) m.initial = parse_state(*it, join(path, "initial"), nullptr);
  if (auto it = j.find("target"); it != j.end()) m.target = parse_state(*it, join(path, "target"), &m.initial);
  if (auto it = j.find("sign"); it != j.end()) {
    const long s = integer(*it, join(path, "sign"));
    if (s != 1 && s != -1) throw ConfigError(join(path, "sign"), "must be +1 or -1");
    m.sign = static_cast<int>(s);
  }
  return m;
}

void check_member_index(int index, const RunConfig& cfg, const std::string& path) {
  if (index < 0 || (index > 0 && index >= static_cast<int>(cfg.members.size()))) {
    throw ConfigError(path, "no member with index " + std::to_string(index));
  }
}

template <typename F>
void wrap(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

json member_json(const MemberSpec& m) {
  json j = {{"label", m.label},
            {"rabi", m.rabi},
            {"offset", m.offset},
            {"weight", m.weight},
            {"metrics", {{"p0", m.metrics.p0}, {"p_ad", m.metrics.p_ad}, {"p_per", m.metrics.p_per}}},
            {"perturbation", to_string(m.perturbation)},
            {"initial", {{"theta", m.initial.theta}, {"phi", m.initial.phi}}},
            {"target", {{"theta", m.target.theta}, {"phi", m.target.phi}}}};
  if (m.perturbation == PerturbationKind::custom) j["perturbation_matrix"] = complex_matrix_json(m.matrix);
  if (m.sign) j["sign"] = *m.sign;
  return j;
}

}  // namespace

std::string to_string(Units u) {
  switch (u) {
    case Units::hz: return "hz";
    case Units::rad_s: return "rad_s";
    case Units::omega1_units: return "omega1_units";
  }
  return "?";
}

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::optimize: return "optimize";
    case RunMode::simulate: return "simulate";
    case RunMode::sweep: return "sweep";
    case RunMode::export_pulse: return "export";
  }
  return "?";
}

double UnitSystem::frequency(double v) const {
  switch (units) {
    case Units::hz: return kTwoPi * v;
    case Units::rad_s: return v;
    case Units::omega1_units: return v * omega1;
  }
  return v;
}

// Dimensionless time is counted in Rabi cycles 2 pi / Omega1.
double UnitSystem::time(double v) const { return units == Units::omega1_units ? v * kTwoPi / omega1 : v; }

double UnitSystem::gyromagnetic(double v) const { return units == Units::hz ? kTwoPi * v : v; }

AnsatzSpec parse_ansatz(const json& j, const UnitSystem& parent, const std::string& path) {
  require_object(j, path);
  check_keys(j, path,
             {"units", "family", "parameters", "duration", "omega1_max", "offset_max", "initial_axis", "final_axis",
              "segments"});
  const UnitSystem units = block_units(j, path, parent);
  AnsatzSpec a;
  a.family = text(j, path, "family", "");
  static const std::vector<std::string> families = {"poly_afp", "arbitrary_state", "wurst",
                                                    "sech_tanh", "constant", "piecewise_constant"};
  if (std::find(families.begin(), families.end(), a.family) == families.end()) {
    throw ConfigError(join(path, "family"), "unknown ansatz family '" + a.family + "'");
  }
  a.duration = units.time(required_number(j, path, "duration"));
  a.omega1_max = units.frequency(required_number(j, path, "omega1_max"));
  require_positive(a.duration, join(path, "duration"));
  require_positive(a.omega1_max, join(path, "omega1_max"));
  const bool needs_offset = a.family != "constant" && a.family != "piecewise_constant";
  if (needs_offset) {
    a.offset_max = units.frequency(required_number(j, path, "offset_max"));
    require_positive(a.offset_max, join(path, "offset_max"));
  } else {
    a.offset_max = units.frequency(number(j, path, "offset_max", 0.0));
  }
  a.segments = static_cast<int>(integer(j, path, "segments", 1));
  if (a.segments < 1) throw ConfigError(join(path, "segments"), "must be positive");
  if (a.family == "poly_afp" || a.family == "arbitrary_state") {
    if (!j.contains("parameters")) throw ConfigError(join(path, "parameters"), "required field is missing");
    a.parameters = static_cast<int>(integer(j, path, "parameters", 0));
  } else {
    const int fixed = a.family == "constant" ? 3 : a.family == "piecewise_constant" ? 3 * a.segments : 1;
    a.parameters = static_cast<int>(integer(j, path, "parameters", fixed));
    if (a.parameters != fixed) {
      throw ConfigError(join(path, "parameters"), a.family + " takes exactly " + std::to_string(fixed) + " parameters");
    }
  }
  if (auto it = j.find("initial_axis"); it != j.end()) a.initial_axis = vector3(*it, join(path, "initial_axis"));
  if (auto it = j.find("final_axis"); it != j.end()) a.final_axis = vector3(*it, join(path, "final_axis"));
  wrap(path, [&] { make_ansatz(a); });
  return a;
}

json ansatz_json(const AnsatzSpec& a) {
  return {{"units", "rad_s"},
          {"family", a.family},
          {"parameters", a.parameters},
          {"duration", a.duration},
          {"omega1_max", a.omega1_max},
          {"offset_max", a.offset_max},
          {"initial_axis", vec_json(a.initial_axis)},
          {"final_axis", vec_json(a.final_axis)},
          {"segments", a.segments}};
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
  }
  return parse_config_json(j, path.parent_path());
}

RunConfig parse_config_json(const json& j, const std::filesystem::path& base_dir) {
  require_object(j, "");
  check_keys(j, "",
             {"description", "header", "mode", "name", "units", "omega1_reference", "omega1_reference_hz", "ansatz", "members",
              "member_defaults", "optimizer", "trajectory", "rabi_sweep", "train", "offset_sweep", "multispin",
              "selectivity", "output_dir"});
  RunConfig cfg;
  const auto mode = text(j, "", "mode", "optimize");
  if (mode == "optimize") {
    cfg.mode = RunMode::optimize;
  } else if (mode == "simulate") {
    cfg.mode = RunMode::simulate;
  } else if (mode == "sweep") {
    cfg.mode = RunMode::sweep;
  } else if (mode == "export") {
    cfg.mode = RunMode::export_pulse;
  } else {
    throw ConfigError("mode", "expected optimize, simulate, sweep or export");
  }
  cfg.name = text(j, "", "name", "");
  cfg.output_dir = text(j, "", "output_dir", cfg.output_dir);

  if (!j.contains("units")) throw ConfigError("units", "units must be declared (hz, rad_s or omega1_units)");
  UnitSystem units;
  units.units = parse_units(j["units"], "units");
  if (j.contains("omega1_reference") && j.contains("omega1_reference_hz")) {
    throw ConfigError("omega1_reference", "give omega1_reference or omega1_reference_hz, not both");
  }
  if (j.contains("omega1_reference")) units.omega1 = number(j["omega1_reference"], "omega1_reference");
  if (j.contains("omega1_reference_hz")) units.omega1 = kTwoPi * number(j["omega1_reference_hz"], "omega1_reference_hz");
  require_positive(units.omega1, "omega1_reference");

  if (!j.contains("ansatz")) throw ConfigError("ansatz", "required field is missing");
  cfg.ansatz = parse_ansatz(j["ansatz"], units, "ansatz");

  json defaults = json::object();
  if (auto it = j.find("member_defaults"); it != j.end()) {
    require_object(*it, "member_defaults");
    defaults = *it;
  }
  if (auto it = j.find("members"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("members", "expected an array");
    int explicit_weights = 0;
    for (std::size_t i = 0; i < it->size(); ++i) {
      json m = defaults;
      if (!(*it)[i].is_object()) throw ConfigError(at("members", i), "expected an object");
      m.update((*it)[i]);
      explicit_weights += m.contains("weight") ? 1 : 0;
      cfg.members.push_back(parse_member(m, at("members", i), units, cfg.ansatz, i));
    }
    const auto count = cfg.members.size();
    if (explicit_weights == 0) {
      for (auto& m : cfg.members) m.weight = 1.0 / static_cast<double>(count);
    } else if (explicit_weights != static_cast<int>(count)) {
      throw ConfigError("members", "give a weight for every member or for none");
    }
    double sum = 0;
    for (const auto& m : cfg.members) sum += m.weight;
    if (count > 0 && std::abs(sum - 1.0) > 1e-9) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "member weights sum to %.12g; they must sum to 1", sum);
      throw ConfigError("members", buf);
    }
  }
  if (cfg.ansatz.family == "arbitrary_state" && !cfg.members.empty()) {
    const json& a = j["ansatz"];
    if (!a.contains("initial_axis")) cfg.ansatz.initial_axis = bloch_vector(cfg.members.front().initial.state());
    if (!a.contains("final_axis")) cfg.ansatz.final_axis = bloch_vector(cfg.members.front().target.state());
    wrap("ansatz", [&] { make_ansatz(cfg.ansatz); });
  }

  OptimizerSpec& o = cfg.optimizer;
  if (auto it = j.find("optimizer"); it != j.end()) {
    const std::string p = "optimizer";
    require_object(*it, p);
    check_keys(*it, p,
               {"seed", "seed_range", "max_iterations", "gradient_tol", "target_value", "restart_threshold", "patience",
                "max_restarts", "multistart", "memory", "loop_tolerance", "report_tolerance", "quadrature",
                "tip_samples", "initial_guess"});
    const json& oj = *it;
    if (auto s = oj.find("seed"); s != oj.end()) o.seed = seed_value(*s, join(p, "seed"));
    if (auto s = oj.find("seed_range"); s != oj.end()) {
      const auto r = raw_vector(*s, join(p, "seed_range"));
      if (r.size() != 2) throw ConfigError(join(p, "seed_range"), "expected [low, high]");
      o.seed_low = r[0];
      o.seed_high = r[1];
    }
    o.max_iterations = static_cast<int>(integer(oj, p, "max_iterations", o.max_iterations));
    o.gradient_tol = number(oj, p, "gradient_tol", o.gradient_tol);
    if (oj.contains("target_value")) o.target_value = number(oj["target_value"], join(p, "target_value"));
    o.restart_threshold = number(oj, p, "restart_threshold", o.restart_threshold);
    o.patience = static_cast<int>(integer(oj, p, "patience", o.patience));
    o.max_restarts = static_cast<int>(integer(oj, p, "max_restarts", o.max_restarts));
    o.multistart = static_cast<int>(integer(oj, p, "multistart", o.multistart));
    o.memory = static_cast<int>(integer(oj, p, "memory", o.memory));
    if (oj.contains("loop_tolerance")) o.loop_tolerance = parse_tolerance(oj["loop_tolerance"], join(p, "loop_tolerance"), o.loop_tolerance);
    if (oj.contains("report_tolerance")) {
      o.report_tolerance = parse_tolerance(oj["report_tolerance"], join(p, "report_tolerance"), o.report_tolerance);
    }
    if (oj.contains("quadrature")) o.quadrature = parse_quadrature(oj["quadrature"], join(p, "quadrature"));
    o.tip_samples = static_cast<int>(integer(oj, p, "tip_samples", o.tip_samples));
    if (o.tip_samples < 2) throw ConfigError(join(p, "tip_samples"), "must be at least 2");
    if (oj.contains("initial_guess")) o.initial_guess = raw_vector(oj["initial_guess"], join(p, "initial_guess"));
  }
  if (cfg.mode == RunMode::optimize && cfg.members.empty()) {
    throw ConfigError("members", "optimize needs at least one ensemble member");
  }
  if (!cfg.members.empty()) wrap("optimizer", [&] { build_problem(cfg).validate(); });

  if (auto it = j.find("trajectory"); it != j.end()) {
    const std::string p = "trajectory";
    require_object(*it, p);
    check_keys(*it, p, {"units", "rabi", "offset", "member", "samples"});
    const auto u = block_units(*it, p, units);
    TrajectorySpec t;
    t.rabi = it->contains("rabi") ? u.frequency(number((*it)["rabi"], join(p, "rabi"))) : cfg.ansatz.omega1_max;
    t.offset = u.frequency(number(*it, p, "offset", 0.0));
    t.member = static_cast<int>(integer(*it, p, "member", 0));
    t.samples = static_cast<int>(integer(*it, p, "samples", t.samples));
    if (t.samples < 2) throw ConfigError(join(p, "samples"), "must be at least 2");
    check_member_index(t.member, cfg, join(p, "member"));
    cfg.trajectory = t;
  }

  if (auto it = j.find("rabi_sweep"); it != j.end()) {
    const std::string p = "rabi_sweep";
    require_object(*it, p);
    check_keys(*it, p, {"units", "grid", "member", "tip_samples", "weights", "weights_csv"});
    const auto u = block_units(*it, p, units);
    RabiSweepSpec r;
    if (!it->contains("grid")) throw ConfigError(join(p, "grid"), "required field is missing");
    r.grid = grid((*it)["grid"], join(p, "grid"), [&](double v) { return u.frequency(v); });
    for (std::size_t i = 0; i < r.grid.size(); ++i) require_positive(r.grid[i], at(join(p, "grid"), i));
    r.member = static_cast<int>(integer(*it, p, "member", 0));
    check_member_index(r.member, cfg, join(p, "member"));
    r.tip_samples = static_cast<int>(integer(*it, p, "tip_samples", r.tip_samples));
    if (it->contains("weights") && it->contains("weights_csv")) throw ConfigError(p, "give weights or weights_csv, not both");
    if (it->contains("weights_csv")) {
      const auto file = resolve_file((*it)["weights_csv"], join(p, "weights_csv"), base_dir);
      const auto table = load_table(file, join(p, "weights_csv"), u.frequency(1.0));
      r.weight_abscissa = table.abscissa;
      r.weight_values = table.ordinate;
    } else if (it->contains("weights")) {
      const json& w = (*it)["weights"];
      const auto wp = join(p, "weights");
      if (!w.is_array()) throw ConfigError(wp, "expected an array of [omega1, p] pairs");
      for (std::size_t i = 0; i < w.size(); ++i) {
        const auto pair = raw_vector(w[i], at(wp, i));
        if (pair.size() != 2) throw ConfigError(at(wp, i), "expected [omega1, p]");
        r.weight_abscissa.push_back(u.frequency(pair[0]));
        r.weight_values.push_back(pair[1]);
      }
    }
    for (std::size_t i = 0; i < r.weight_values.size(); ++i) {
      if (r.weight_values[i] < 0) throw ConfigError(at(join(p, "weights"), i), "weights must be non-negative");
    }
    cfg.rabi_sweep = r;
  }

  if (auto it = j.find("train"); it != j.end()) {
    const std::string p = "train";
    require_object(*it, p);
    check_keys(*it, p,
               {"units", "n_max", "t_w", "T2", "T2_star", "detuning", "offset_nodes", "truncation", "rabi",
                "rabi_weights", "rabi_weights_csv", "counts"});
    const auto u = block_units(*it, p, units);
    TrainSpec t;
    t.n_max = integer(*it, p, "n_max", t.n_max);
    t.t_w = u.time(required_number(*it, p, "t_w"));
    t.T2 = u.time(required_number(*it, p, "T2"));
    t.T2_star = u.time(number(*it, p, "T2_star", 0.0));
    t.detuning = u.frequency(number(*it, p, "detuning", 0.0));
    t.offset_nodes = static_cast<int>(integer(*it, p, "offset_nodes", t.offset_nodes));
    t.truncation = number(*it, p, "truncation", t.truncation);
    require_positive(t.truncation, join(p, "truncation"));
    if (it->contains("rabi_weights_csv")) {
      if (it->contains("rabi") || it->contains("rabi_weights")) {
        throw ConfigError(join(p, "rabi_weights_csv"), "conflicts with rabi / rabi_weights");
      }
      const auto file = resolve_file((*it)["rabi_weights_csv"], join(p, "rabi_weights_csv"), base_dir);
      const auto table = load_table(file, join(p, "rabi_weights_csv"), u.frequency(1.0));
      t.rabi = table.abscissa;
      t.rabi_weights = table.ordinate;
    } else if (it->contains("rabi")) {
      t.rabi = grid((*it)["rabi"], join(p, "rabi"), [&](double v) { return u.frequency(v); });
      const json w = it->value("rabi_weights", json("uniform"));
      if (w.is_string() && w.get<std::string>() == "uniform") {
        t.rabi_weights.assign(t.rabi.size(), 1.0);
      } else if (w.is_string() && w.get<std::string>() == "trapezoid") {
        t.rabi_weights.assign(t.rabi.size(), 1.0);
        if (t.rabi.size() > 1) t.rabi_weights.front() = t.rabi_weights.back() = 0.5;
      } else if (w.is_array()) {
        t.rabi_weights = raw_vector(w, join(p, "rabi_weights"));
      } else {
        throw ConfigError(join(p, "rabi_weights"), "expected uniform, trapezoid or an array");
      }
    } else if (it->contains("rabi_weights")) {
      throw ConfigError(join(p, "rabi_weights"), "needs a rabi grid");
    }
    if (auto c = it->find("counts"); c != it->end()) {
      if (!c->is_array()) throw ConfigError(join(p, "counts"), "expected an array of integers");
      for (std::size_t i = 0; i < c->size(); ++i) t.counts.push_back(integer((*c)[i], at(join(p, "counts"), i)));
    }
    wrap(p, [&] { build_train(t).validate(); });
    cfg.train = t;
  }

  if (auto it = j.find("offset_sweep"); it != j.end()) {
    const std::string p = "offset_sweep";
    require_object(*it, p);
    check_keys(*it, p, {"units", "n_pulses", "grid"});
    if (!cfg.train) throw ConfigError(p, "needs a train block for the wait and relaxation settings");
    const auto u = block_units(*it, p, units);
    OffsetSweepSpec s;
    s.n_pulses = integer(*it, p, "n_pulses", s.n_pulses);
    if (s.n_pulses < 1) throw ConfigError(join(p, "n_pulses"), "must be at least 1");
    if (!it->contains("grid")) throw ConfigError(join(p, "grid"), "required field is missing");
    s.grid = grid((*it)["grid"], join(p, "grid"), [&](double v) { return u.frequency(v); });
    cfg.offset_sweep = s;
  }

  if (auto it = j.find("multispin"); it != j.end()) {
    const std::string p = "multispin";
    require_object(*it, p);
    check_keys(*it, p, {"units", "positions", "cube", "gamma", "coupling_scale", "rabi"});
    const auto u = block_units(*it, p, units);
    MultispinSpec m;
    if (it->contains("positions") && it->contains("cube")) throw ConfigError(p, "give positions or cube, not both");
    if (auto pos = it->find("positions"); pos != it->end()) {
      if (!pos->is_array()) throw ConfigError(join(p, "positions"), "expected an array of [x, y, z] in metres");
      for (std::size_t i = 0; i < pos->size(); ++i) m.positions.push_back(vector3((*pos)[i], at(join(p, "positions"), i)));
    }
    if (auto cube = it->find("cube"); cube != it->end()) {
      const auto cp = join(p, "cube");
      require_object(*cube, cp);
      check_keys(*cube, cp, {"edge", "displacement", "seed"});
      m.edge = number(*cube, cp, "edge", m.edge);
      m.displacement = number(*cube, cp, "displacement", m.displacement);
      if (auto s = cube->find("seed"); s != cube->end()) m.geometry_seed = seed_value(*s, join(cp, "seed"));
    }
    if (it->contains("gamma")) m.gamma = u.gyromagnetic(number((*it)["gamma"], join(p, "gamma")));
    m.coupling_scale = number(*it, p, "coupling_scale", m.coupling_scale);
    if (m.coupling_scale < 0) throw ConfigError(join(p, "coupling_scale"), "must be non-negative");
    if (!it->contains("rabi")) throw ConfigError(join(p, "rabi"), "required field is missing");
    m.rabi = grid((*it)["rabi"], join(p, "rabi"), [&](double v) { return u.frequency(v); });
    wrap(p, [&] { build_geometry(m).validate(); });
    cfg.multispin = m;
  }

  if (auto it = j.find("selectivity"); it != j.end()) {
    const std::string p = "selectivity";
    require_object(*it, p);
    check_keys(*it, p, {"units", "grid", "repetitions", "member"});
    const auto u = block_units(*it, p, units);
    SelectivitySpec s;
    if (!it->contains("grid")) throw ConfigError(join(p, "grid"), "required field is missing");
    s.grid = grid((*it)["grid"], join(p, "grid"), [&](double v) { return u.frequency(v); });
    s.repetitions = static_cast<int>(integer(*it, p, "repetitions", s.repetitions));
    if (s.repetitions < 1) throw ConfigError(join(p, "repetitions"), "must be at least 1");
    s.member = static_cast<int>(integer(*it, p, "member", 0));
    check_member_index(s.member, cfg, join(p, "member"));
    cfg.selectivity = s;
  }
  return cfg;
}

json resolved_config(const RunConfig& cfg) {
  json j;
  j["mode"] = to_string(cfg.mode);
  j["name"] = cfg.name;
  j["units"] = "rad_s";
  j["ansatz"] = ansatz_json(cfg.ansatz);
  j["members"] = json::array();
  for (const auto& m : cfg.members) j["members"].push_back(member_json(m));

  const auto& o = cfg.optimizer;
  json oj = {{"seed", o.seed},
             {"seed_range", {o.seed_low, o.seed_high}},
             {"max_iterations", o.max_iterations},
             {"gradient_tol", o.gradient_tol},
             {"restart_threshold", o.restart_threshold},
             {"patience", o.patience},
             {"max_restarts", o.max_restarts},
             {"multistart", o.multistart},
             {"memory", o.memory},
             {"loop_tolerance", tol_json(o.loop_tolerance)},
             {"report_tolerance", tol_json(o.report_tolerance)},
             {"quadrature",
              {{"rule", rule_name(o.quadrature.rule)},
               {"nodes", o.quadrature.nodes},
               {"panel_order", o.quadrature.panel_order},
               {"refine_tol", o.quadrature.refine_tol},
               {"refine_depth", o.quadrature.refine_depth}}},
             {"tip_samples", o.tip_samples}};
  if (o.target_value) oj["target_value"] = *o.target_value;
  if (o.initial_guess) oj["initial_guess"] = *o.initial_guess;
  j["optimizer"] = oj;

  if (cfg.trajectory) {
    const auto& t = *cfg.trajectory;
    j["trajectory"] = {{"rabi", t.rabi}, {"offset", t.offset}, {"member", t.member}, {"samples", t.samples}};
  }
  if (cfg.rabi_sweep) {
    const auto& r = *cfg.rabi_sweep;
    j["rabi_sweep"] = {{"grid", r.grid}, {"member", r.member}, {"tip_samples", r.tip_samples}};
    if (!r.weight_abscissa.empty()) {
      json w = json::array();
      for (std::size_t i = 0; i < r.weight_abscissa.size(); ++i) w.push_back({r.weight_abscissa[i], r.weight_values[i]});
      j["rabi_sweep"]["weights"] = w;
    }
  }
  if (cfg.train) {
    const auto& t = *cfg.train;
    j["train"] = {{"n_max", t.n_max},
                  {"t_w", t.t_w},
                  {"T2", t.T2},
                  {"T2_star", t.T2_star},
                  {"detuning", t.detuning},
                  {"offset_nodes", t.offset_nodes},
                  {"truncation", t.truncation},
                  {"counts", t.counts}};
    if (!t.rabi.empty()) {
      j["train"]["rabi"] = t.rabi;
      j["train"]["rabi_weights"] = t.rabi_weights;
    }
  }
  if (cfg.offset_sweep) j["offset_sweep"] = {{"n_pulses", cfg.offset_sweep->n_pulses}, {"grid", cfg.offset_sweep->grid}};
  if (cfg.multispin) {
    const auto& m = *cfg.multispin;
    json mj = {{"gamma", m.gamma}, {"coupling_scale", m.coupling_scale}, {"rabi", m.rabi}};
    if (m.positions.empty()) {
      mj["cube"] = {{"edge", m.edge}, {"displacement", m.displacement}, {"seed", m.geometry_seed}};
    } else {
      json pos = json::array();
      for (const auto& v : m.positions) pos.push_back(vec_json(v));
      mj["positions"] = pos;
    }
    j["multispin"] = mj;
  }
  if (cfg.selectivity) {
    const auto& s = *cfg.selectivity;
    j["selectivity"] = {{"grid", s.grid}, {"repetitions", s.repetitions}, {"member", s.member}};
  }
  j["output_dir"] = cfg.output_dir;
  return j;
}

std::string config_hash(const RunConfig& cfg) {
  json j = resolved_config(cfg);
  j.erase("output_dir");
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::shared_ptr<const FieldAnsatz> make_ansatz(const AnsatzSpec& a) {
  if (a.family == "poly_afp") return std::make_shared<PolyAfpAnsatz>(a.parameters, a.duration, a.omega1_max, a.offset_max);
  if (a.family == "arbitrary_state") {
    return std::make_shared<ArbitraryStateAnsatz>(a.parameters, a.duration, a.omega1_max, a.offset_max, a.initial_axis,
                                                  a.final_axis);
  }
  if (a.family == "wurst") {
    return std::make_shared<BaselineAnsatz>(BaselineFamily::wurst, a.duration, a.omega1_max, a.offset_max);
  }
  if (a.family == "sech_tanh") {
    return std::make_shared<BaselineAnsatz>(BaselineFamily::sech_tanh, a.duration, a.omega1_max, a.offset_max);
  }
  if (a.family == "constant") return std::make_shared<ConstantFieldAnsatz>(a.duration, a.omega1_max);
  if (a.family == "piecewise_constant") return std::make_shared<PiecewiseConstantAnsatz>(a.segments, a.duration, a.omega1_max);
  throw std::invalid_argument("unknown ansatz family '" + a.family + "'");
}

EnsembleMember make_member(const MemberSpec& s, const std::shared_ptr<const FieldAnsatz>& ansatz) {
  EnsembleMember m;
  m.label = s.label;
  m.field = MemberField{ansatz, s.rabi / ansatz->nominal_rabi(), s.offset};
  switch (s.perturbation) {
    case PerturbationKind::none: m.perturbation = Perturbation::none(); break;
    case PerturbationKind::sigma_z: m.perturbation = Perturbation::sigma_z(); break;
    case PerturbationKind::custom: m.perturbation = Perturbation::custom(s.matrix); break;
    case PerturbationKind::rabi_proportional: m.perturbation = Perturbation::rabi_proportional(); break;
    case PerturbationKind::dipolar_pair: m.perturbation = Perturbation::dipolar_pair(); break;
  }
  m.initial = s.initial.state();
  m.target = s.target.state();
  m.sign = s.sign;
  m.weights = s.metrics;
  m.weight = s.weight;
  return m;
}

ControlProblem build_problem(const RunConfig& cfg) {
  ControlProblem p;
  p.ansatz = make_ansatz(cfg.ansatz);
  for (const auto& m : cfg.members) p.members.push_back(make_member(m, p.ansatz));
  const auto& o = cfg.optimizer;
  p.seed_low = o.seed_low;
  p.seed_high = o.seed_high;
  if (o.initial_guess) p.initial_guess = Eigen::Map<const ParamVector>(o.initial_guess->data(), o.initial_guess->size());
  p.restart = {o.restart_threshold, o.patience, o.max_restarts};
  p.convergence = {o.gradient_tol, o.max_iterations, o.target_value};
  p.rng_seed = o.seed;
  p.multistart = o.multistart;
  p.memory = o.memory;
  p.loop_tolerance = o.loop_tolerance;
  p.report_tolerance = o.report_tolerance;
  p.quadrature = o.quadrature;
  p.tip_samples = o.tip_samples;
  return p;
}

SpinGeometry build_geometry(const MultispinSpec& s) {
  // couplings scale with gamma^2
  const double gamma = s.gamma * std::sqrt(s.coupling_scale);
  if (s.positions.empty()) return face_centred_cube(s.edge, s.displacement, s.geometry_seed, gamma);
  return SpinGeometry{s.positions, gamma};
}

EnsembleMember member_template(const RunConfig& cfg, int index, const std::shared_ptr<const FieldAnsatz>& ansatz) {
  if (cfg.members.empty()) {
    EnsembleMember m;
    m.label = "template";
    m.field = MemberField{ansatz};
    return m;
  }
  return make_member(cfg.members.at(static_cast<std::size_t>(index)), ansatz);
}

PulseTrainConfig build_train(const TrainSpec& s) {
  PulseTrainConfig c;
  c.n_max = s.n_max;
  c.t_w = s.t_w;
  c.T2 = s.T2;
  c.T2_star = s.T2_star;
  c.detuning = s.detuning;
  c.offset_nodes = s.offset_nodes;
  c.truncation = s.truncation;
  c.rabi_values = s.rabi;
  c.rabi_weights = s.rabi_weights;
  c.counts = s.counts;
  return c;
}

}  // namespace adiabat
