// File formats: CSV curves and waveforms with a provenance header, weight
// tables, iteration traces and the optimized-pulse JSON document.
#pragma once

#include "adiabat/config.hpp"
#include "adiabat/optimizer.hpp"
#include "adiabat/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace adiabat {

inline constexpr const char* kToolName = "adiabat";
inline constexpr const char* kToolVersion = "1.0.0";

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct OutputHeader {
  std::string config_hash;
  std::uint64_t rng_seed = 0;
};

/// "# key: value" lines at the top of every CSV.
void write_csv_header(std::ostream& out, const OutputHeader& header);
json header_json(const OutputHeader& header);

/// Shortest decimal text that round-trips the double.
std::string format_double(double v);

/// Numeric rows of a CSV; '#' lines and one leading non-numeric header row are skipped.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path, std::size_t columns);

/// Two-column table p(omega1); abscissa multiplied by `abscissa_scale` on load.
ResponseCurve read_weight_table(const std::filesystem::path& path, double abscissa_scale = 1.0);

void write_curve_csv(const std::filesystem::path& path, const OutputHeader& header, const ResponseCurve& curve,
                     const std::string& abscissa_name, const std::string& ordinate_name);

/// Generic numeric table with named columns and an optional trailing text column.
void write_table_csv(const std::filesystem::path& path, const OutputHeader& header, const std::vector<std::string>& names,
                     const std::vector<std::vector<double>>& rows, const std::vector<std::string>& notes = {});

/// Columns t_s, bx_rad_s, by_rad_s, bz_rad_s.
void write_waveform_csv(const std::filesystem::path& path, const OutputHeader& header,
                        const std::vector<WaveformSample>& samples);
std::vector<WaveformSample> read_waveform_csv(const std::filesystem::path& path);

/// Pulse backed by a tabulated waveform; nominal_rabi sets the member scaling reference.
Pulse load_waveform_pulse(const std::filesystem::path& path, double nominal_rabi);

void write_trace_csv(const std::filesystem::path& path, const OutputHeader& header,
                     const std::vector<TraceEntry>& trace);

json member_report_json(const MemberEvaluation& e);
json pulse_json(const OptimizedPulse& result, const AnsatzSpec& ansatz, const OutputHeader& header);

struct StoredPulse {
  AnsatzSpec ansatz;
  ParamVector x;
  OutputHeader header;

  Pulse pulse() const { return Pulse{make_ansatz(ansatz), x}; }
};

StoredPulse read_pulse_json(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const json& j);

}  // namespace adiabat
