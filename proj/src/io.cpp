#include "adiabat/io.hpp"

#include <charconv>
#include <fstream>
#include <numbers>
#include <sstream>

namespace adiabat {

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& s, double& v) {
  const auto t = trim(s);
  if (t.empty()) return false;
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(t.data(), end, v);
  return ec == std::errc() && ptr == end;
}

std::string csv_escape(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

json tolerance_json(const Tolerance& t) { return {{"rel", t.rel}, {"abs", t.abs}}; }

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

void write_csv_header(std::ostream& out, const OutputHeader& h) {
  out << "# tool: " << kToolName << ' ' << kToolVersion << '\n'
      << "# config_hash: " << h.config_hash << '\n'
      << "# rng_seed: " << h.rng_seed << '\n';
}

json header_json(const OutputHeader& h) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"config_hash", h.config_hash}, {"rng_seed", h.rng_seed}};
}

std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path, std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::vector<double> row;
    std::stringstream ss(t);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      double v = 0;
      if (!parse_double(cell, v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (header_allowed) {
        header_allowed = false;
        continue;
      }
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
    }
    header_allowed = false;
    if (row.size() < columns) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) + " columns");
    }
    row.resize(columns);
    rows.push_back(std::move(row));
  }
  return rows;
}

ResponseCurve read_weight_table(const std::filesystem::path& path, double abscissa_scale) {
  const auto rows = read_numeric_csv(path, 2);
  if (rows.size() < 2) throw IoError(path.string() + ": a weight table needs at least two rows");
  ResponseCurve c;
  for (const auto& r : rows) {
    if (r[1] < 0) throw IoError(path.string() + ": weights must be non-negative");
    if (!c.abscissa.empty() && !(r[0] * abscissa_scale > c.abscissa.back())) {
      throw IoError(path.string() + ": abscissa must be strictly increasing");
    }
    c.abscissa.push_back(r[0] * abscissa_scale);
    c.ordinate.push_back(r[1]);
  }
  return c;
}

void write_curve_csv(const std::filesystem::path& path, const OutputHeader& header, const ResponseCurve& curve,
                     const std::string& abscissa_name, const std::string& ordinate_name) {
  auto out = open_output(path);
  write_csv_header(out, header);
  const bool flags = !curve.errors.empty();
  out << abscissa_name << ',' << ordinate_name << (flags ? ",error" : "") << '\n';
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << format_double(curve.abscissa[i]) << ',' << format_double(curve.ordinate[i]);
    if (flags) out << ',' << csv_escape(curve.errors[i]);
    out << '\n';
  }
}

void write_table_csv(const std::filesystem::path& path, const OutputHeader& header, const std::vector<std::string>& names,
                     const std::vector<std::vector<double>>& rows, const std::vector<std::string>& notes) {
  auto out = open_output(path);
  write_csv_header(out, header);
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) out << (i ? "," : "") << format_double(rows[r][i]);
    if (!notes.empty()) out << ',' << csv_escape(notes[r]);
    out << '\n';
  }
}

void write_waveform_csv(const std::filesystem::path& path, const OutputHeader& header,
                        const std::vector<WaveformSample>& samples) {
  auto out = open_output(path);
  write_csv_header(out, header);
  out << "t_s,bx_rad_s,by_rad_s,bz_rad_s\n";
  for (const auto& s : samples) {
    out << format_double(s.t) << ',' << format_double(s.b.x()) << ',' << format_double(s.b.y()) << ','
        << format_double(s.b.z()) << '\n';
  }
}

std::vector<WaveformSample> read_waveform_csv(const std::filesystem::path& path) {
  std::vector<WaveformSample> out;
  for (const auto& r : read_numeric_csv(path, 4)) out.push_back({r[0], EffectiveField(r[1], r[2], r[3])});
  if (out.size() < 2) throw IoError(path.string() + ": a waveform needs at least two samples");
  return out;
}

Pulse load_waveform_pulse(const std::filesystem::path& path, double nominal_rabi) {
  const auto samples = read_waveform_csv(path);
  std::vector<double> t;
  std::vector<EffectiveField> b;
  for (const auto& s : samples) {
    t.push_back(s.t);
    b.push_back(s.b);
  }
  try {
    return Pulse{std::make_shared<SampledWaveform>(std::move(t), std::move(b), nominal_rabi), ParamVector()};
  } catch (const DomainError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_trace_csv(const std::filesystem::path& path, const OutputHeader& header,
                     const std::vector<TraceEntry>& trace) {
  auto out = open_output(path);
  write_csv_header(out, header);
  out << "attempt,step,phi,grad_norm,restart\n";
  for (const auto& e : trace) {
    out << e.attempt << ',' << e.step << ',' << format_double(e.value) << ',' << format_double(e.gradient_norm) << ','
        << (e.restart ? 1 : 0) << '\n';
  }
}

json member_report_json(const MemberEvaluation& e) {
  json j = {{"label", e.label},
            {"sign", e.sign},
            {"phi", e.phi},
            {"phi0", e.phi0},
            {"normalization", e.normalization},
            {"clamped", e.clamped}};
  j["phi_ad"] = e.has_ad ? json(e.phi_ad) : json(nullptr);
  j["phi_per"] = e.has_per ? json(e.phi_per) : json(nullptr);
  if (e.alpha_max) {
    j["alpha_max_rad"] = *e.alpha_max;
    j["alpha_max_deg"] = *e.alpha_max * 180.0 / std::numbers::pi;
  } else {
    j["alpha_max_rad"] = nullptr;
    j["alpha_max_deg"] = nullptr;
  }
  return j;
}

json pulse_json(const OptimizedPulse& r, const AnsatzSpec& ansatz, const OutputHeader& header) {
  json j;
  j["header"] = header_json(header);
  j["ansatz"] = ansatz_json(ansatz);
  j["x"] = std::vector<double>(r.x.data(), r.x.data() + r.x.size());
  j["value"] = r.value;
  j["report_value"] = r.report_value;
  j["status"] = to_string(r.status);
  j["converged"] = r.converged();
  j["restarts"] = r.restarts;
  j["iterations"] = r.iterations;
  j["evaluations"] = r.evaluations;
  j["rng_seed"] = r.rng_seed;
  j["loop_tolerance"] = tolerance_json(r.loop_tolerance);
  j["report_tolerance"] = tolerance_json(r.report_tolerance);
  j["quadrature"] = {{"rule", r.quadrature.rule == QuadratureRule::gauss_legendre ? "gauss_legendre" : "trapezoid"},
                     {"nodes", r.quadrature.nodes},
                     {"panel_order", r.quadrature.panel_order},
                     {"refine_tol", r.quadrature.refine_tol},
                     {"refine_depth", r.quadrature.refine_depth}};
  j["report"] = json::array();
  for (const auto& e : r.report) j["report"].push_back(member_report_json(e));
  return j;
}

StoredPulse read_pulse_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("ansatz") || !j.contains("x")) {
    throw IoError(path.string() + ": expected a pulse document with ansatz and x");
  }
  StoredPulse s;
  UnitSystem rad;
  s.ansatz = parse_ansatz(j["ansatz"], rad, "ansatz");
  const auto& x = j["x"];
  if (!x.is_array()) throw IoError(path.string() + ": x must be an array");
  s.x.resize(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i].is_number()) throw IoError(path.string() + ": x must hold numbers");
    s.x[static_cast<Eigen::Index>(i)] = x[i].get<double>();
  }
  if (s.x.size() != s.ansatz.parameters) throw IoError(path.string() + ": x does not match the ansatz parameter count");
  if (auto h = j.find("header"); h != j.end() && h->is_object()) {
    s.header.config_hash = h->value("config_hash", "");
    s.header.rng_seed = h->value("rng_seed", std::uint64_t{0});
  }
  return s;
}

void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

}  // namespace adiabat
