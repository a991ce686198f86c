// Declarative run configuration: JSON schema, unit conversion, validation and
// construction of optimizer problems and simulation inputs.
#pragma once

#include "adiabat/ansatz.hpp"
#include "adiabat/metrics.hpp"
#include "adiabat/optimizer.hpp"
#include "adiabat/simulator.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace adiabat {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  ConfigError(std::string path, std::string reason)
      : std::runtime_error(path + ": " + reason), path(std::move(path)), reason(std::move(reason)) {}
  std::string path;
  std::string reason;
};

enum class Units { hz, rad_s, omega1_units };
enum class RunMode { optimize, simulate, sweep, export_pulse };

std::string to_string(Units u);
std::string to_string(RunMode m);

/// Conversion of config numbers to rad/s and seconds.
struct UnitSystem {
  Units units = Units::rad_s;
  double omega1 = 1.0;  ///< reference Rabi frequency (rad/s) for omega1_units

  double frequency(double v) const;
  double time(double v) const;
  double gyromagnetic(double v) const;
};

struct AnsatzSpec {
  std::string family = "poly_afp";
  int parameters = 0;
  double duration = 0;    ///< s
  double omega1_max = 0;  ///< rad/s
  double offset_max = 0;  ///< rad/s
  Vec3d initial_axis = Vec3d(0, 0, 1);
  Vec3d final_axis = Vec3d(0, 0, -1);
  int segments = 1;
  bool operator==(const AnsatzSpec&) const = default;
};

struct BlochAngles {
  double theta = 0;
  double phi = 0;
  SpinState state() const { return state_from_bloch_angles(theta, phi); }
  bool operator==(const BlochAngles&) const = default;
};

struct MemberSpec {
  std::string label;
  double rabi = 0;    ///< maximum Rabi frequency seen by this member (rad/s)
  double offset = 0;  ///< static resonance offset (rad/s)
  double weight = 0;
  MetricWeights metrics;
  PerturbationKind perturbation = PerturbationKind::none;
  Mat2c matrix = Mat2c::Zero();
  BlochAngles initial{0, 0};
  BlochAngles target{std::numbers::pi, 0};
  std::optional<int> sign;
  bool operator==(const MemberSpec&) const = default;
};

struct OptimizerSpec {
  std::uint64_t seed = 42;
  double seed_low = -1, seed_high = 1;
  int max_iterations = 2000;
  double gradient_tol = 1e-8;
  std::optional<double> target_value;
  double restart_threshold = 0.99;
  int patience = 50;
  int max_restarts = 20;
  int multistart = 1;
  int memory = 10;
  Tolerance loop_tolerance{1e-8, 1e-10};
  Tolerance report_tolerance{1e-10, 1e-12};
  QuadratureSpec quadrature;
  int tip_samples = 1001;
  std::optional<std::vector<double>> initial_guess;
  bool operator==(const OptimizerSpec&) const = default;
};

struct TrajectorySpec {
  double rabi = 0;
  double offset = 0;
  int member = 0;
  int samples = 201;
  bool operator==(const TrajectorySpec&) const = default;
};

struct RabiSweepSpec {
  std::vector<double> grid;
  int member = 0;
  int tip_samples = 1001;
  /// Optional table p(omega1) (rad/s) for the weighted ensemble signal.
  std::vector<double> weight_abscissa;
  std::vector<double> weight_values;
  bool operator==(const RabiSweepSpec&) const = default;
};

struct TrainSpec {
  long n_max = 1;
  double t_w = 0, T2 = 0, T2_star = 0, detuning = 0;
  int offset_nodes = 33;
  double truncation = 5.0;
  std::vector<double> rabi;
  std::vector<double> rabi_weights;
  std::vector<long> counts;
  bool operator==(const TrainSpec&) const = default;
};

struct OffsetSweepSpec {
  long n_pulses = 1;
  std::vector<double> grid;
  bool operator==(const OffsetSweepSpec&) const = default;
};

struct MultispinSpec {
  std::vector<Vec3d> positions;  ///< metres; generated from the cube fields when empty
  double edge = 4e-9;
  double displacement = 0.5e-9;
  std::uint64_t geometry_seed = 0;
  double gamma = kGammaElectron;
  double coupling_scale = 1.0;
  std::vector<double> rabi;
  bool operator==(const MultispinSpec&) const = default;
};

struct SelectivitySpec {
  std::vector<double> grid;
  int repetitions = 1;
  int member = 0;
  bool operator==(const SelectivitySpec&) const = default;
};

struct RunConfig {
  RunMode mode = RunMode::optimize;
  std::string name;
  AnsatzSpec ansatz;
  std::vector<MemberSpec> members;
  OptimizerSpec optimizer;
  std::optional<TrajectorySpec> trajectory;
  std::optional<RabiSweepSpec> rabi_sweep;
  std::optional<TrainSpec> train;
  std::optional<OffsetSweepSpec> offset_sweep;
  std::optional<MultispinSpec> multispin;
  std::optional<SelectivitySpec> selectivity;
  std::string output_dir = "out";
  bool operator==(const RunConfig&) const = default;
};

/// Parses and validates a config file; relative paths resolve against its directory.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_json(const json& j, const std::filesystem::path& base_dir = ".");

/// Fully defaulted config in rad/s and seconds; parse_config_json inverts it.
json resolved_config(const RunConfig& cfg);

/// FNV-1a 64-bit digest of the resolved config without output_dir, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

json ansatz_json(const AnsatzSpec& spec);
/// Ansatz block in the given units; `path` prefixes error locations.
AnsatzSpec parse_ansatz(const json& j, const UnitSystem& units, const std::string& path = "ansatz");

std::shared_ptr<const FieldAnsatz> make_ansatz(const AnsatzSpec& spec);
EnsembleMember make_member(const MemberSpec& spec, const std::shared_ptr<const FieldAnsatz>& ansatz);
ControlProblem build_problem(const RunConfig& cfg);
SpinGeometry build_geometry(const MultispinSpec& spec);

/// Member template used by sweeps (states, perturbation, offset).
EnsembleMember member_template(const RunConfig& cfg, int index, const std::shared_ptr<const FieldAnsatz>& ansatz);
PulseTrainConfig build_train(const TrainSpec& spec);

}  // namespace adiabat
