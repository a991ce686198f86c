// Verification simulations for a fixed pulse: Bloch trajectories, Rabi and
// offset sweeps, dephasing pulse trains, multi-spin dipolar dynamics and
// Larmor-selectivity profiles.
#pragma once

#include "adiabat/ansatz.hpp"
#include "adiabat/metrics.hpp"
#include "adiabat/ode.hpp"
#include "adiabat/spinalg.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace adiabat {

struct DimensionTooLarge : std::invalid_argument {
  explicit DimensionTooLarge(const std::string& what) : std::invalid_argument(what) {}
};

struct EmptyOverlap : std::invalid_argument {
  explicit EmptyOverlap(const std::string& what) : std::invalid_argument(what) {}
};

/// A concrete waveform: an ansatz evaluated at fixed parameters.
struct Pulse {
  std::shared_ptr<const FieldAnsatz> ansatz;
  ParamVector x;

  double duration() const { return ansatz->duration(); }
  double nominal_rabi() const { return ansatz->nominal_rabi(); }
  EffectiveField operator()(double t) const { return ansatz->field(x, t); }
  /// Field seen by a spin with maximum Rabi frequency omega1 and extra offset.
  MemberField member(double omega1, double offset = 0.0) const;
};

struct ResponseCurve {
  std::vector<double> abscissa;
  std::vector<double> ordinate;
  /// Empty, or one entry per point; non-empty strings mark failed points.
  std::vector<std::string> errors;

  std::size_t size() const { return abscissa.size(); }
};

struct BlochSample {
  double t = 0;
  Vec3d m;
  EffectiveField b;
  double alpha = 0;  ///< radians
};

/// Final single-spin propagator, projected onto the nearest unitary.
Mat2c pulse_unitary(const Pulse& pulse, double omega1, double offset, const Tolerance& tol = {1e-10, 1e-12});

/// Single-spin trajectory sampled uniformly on [0, T].
std::vector<BlochSample> bloch_trajectory(const Pulse& pulse, double omega1, double offset, const SpinState& initial,
                                          int samples, int sign = +1, const Tolerance& tol = {1e-10, 1e-12});

struct RabiSweepPoint {
  double omega1 = 0;
  double infidelity = 0;      ///< 1 - phi0
  double per_infidelity = 0;  ///< 1 - phi_per (0 without a perturbation)
  double ad_infidelity = 0;   ///< 1 - phi_ad
  double alpha_max = 0;       ///< radians
  bool has_ad = false, has_per = false;
  std::string error;
};

/// Evaluates the member template at each maximum Rabi frequency. The template
/// supplies perturbation, states, sign and offset; its rabi_scale is replaced.
std::vector<RabiSweepPoint> rabi_sweep(const Pulse& pulse, const EnsembleMember& member_template,
                                       const std::vector<double>& omega1_grid, const Tolerance& tol = {1e-10, 1e-12},
                                       int tip_samples = 1001, int threads = 0);

struct PulseTrainConfig {
  long n_max = 1;
  double t_w = 0;        ///< wait between pulses (s)
  double T2 = 0;         ///< dephasing during waits (s)
  double T2_star = 0;    ///< Lorentzian offset HWHM is 1/T2*; 0 disables the ensemble
  double detuning = 0;   ///< deterministic carrier offset (rad/s)
  int offset_nodes = 33;
  double truncation = 5.0;  ///< Lorentzian truncated at +-truncation HWHM
  /// Rabi ensemble (rad/s) with weights; empty means the pulse's nominal value.
  std::vector<double> rabi_values;
  std::vector<double> rabi_weights;
  /// Pulse counts to report; empty means a default logarithmic grid up to n_max.
  std::vector<long> counts;
  Tolerance tol{1e-10, 1e-12};
  int threads = 0;

  void validate() const;
};

struct OffsetNode {
  double offset = 0;
  double weight = 0;
};

/// Equal-weight midpoint quantiles of a Lorentzian truncated at +-k HWHM.
std::vector<OffsetNode> lorentzian_nodes(double hwhm, int count, double truncation);

/// 4x4 column-major superoperator of rho -> U rho U^dag.
Eigen::Matrix4cd unitary_superoperator(const Mat2c& u);

/// Free precession at `offset` for `t_w` followed by off-diagonal decay e^{-t_w/T2}.
Eigen::Matrix4cd wait_superoperator(double offset, double t_w, double T2);

struct PulseTrainResult {
  ResponseCurve curve;  ///< folded M_z against pulse count
  /// Per-pulse accuracy from a log-linear fit of M_z(n) over n >= 1.
  double accuracy = 0;
  double fit_intercept = 0;
};

PulseTrainResult pulse_train_decay(const Pulse& pulse, const PulseTrainConfig& cfg);

/// M_z after n_pulses as a function of the deterministic detuning.
ResponseCurve offset_sweep(const Pulse& pulse, long n_pulses, const std::vector<double>& detunings,
                           const PulseTrainConfig& cfg);

/// Half-width of the region around the peak where the ordinate stays above half of it.
double half_max_half_width(const ResponseCurve& curve);

inline constexpr double kMu0 = 1.25663706212e-6;
inline constexpr double kHbar = 1.054571817e-34;
inline constexpr double kGammaElectron = 2.0 * 3.14159265358979323846 * 28.024e9;  // rad/s/T

/// d = mu0 gamma^2 hbar / (8 pi r^3) (1 - 3 cos^2 theta), theta measured from z.
double dipolar_coefficient(const Vec3d& r, double gamma);

struct SpinGeometry {
  std::vector<Vec3d> positions;  ///< metres
  double gamma = kGammaElectron;

  void validate() const;
  /// Symmetric matrix of couplings d_jk (rad/s), zero diagonal.
  Eigen::MatrixXd couplings() const;
};

/// Cube centre plus the six face centres, each displaced uniformly in
/// [-displacement, displacement]^3 by a seeded generator.
SpinGeometry face_centred_cube(double edge, double displacement, std::uint64_t seed, double gamma = kGammaElectron);

inline constexpr int kMaxSpins = 7;

/// Full-space secular dipolar Hamiltonian sum_{j<k} (d_jk/2)(2 zz - xx - yy).
Eigen::MatrixXcd dipolar_hamiltonian(const Eigen::MatrixXd& couplings);

/// Product of sigma_x over all spins.
Eigen::MatrixXcd collective_flip(int spins);

struct MultispinResult {
  Eigen::VectorXcd state;             ///< final state, spin j on bit (n-1-j); 0 = up
  std::vector<double> down_fidelity;  ///< Tr[rho_j |down><down|]
  double mean_fidelity = 0;
};

/// Evolves |up...up> under the shared pulse plus couplings.
MultispinResult multispin_evolve(const Pulse& pulse, double omega1, const Eigen::MatrixXd& couplings,
                                 const Tolerance& tol = {1e-10, 1e-12});

/// Reduced single-spin density matrix of spin j.
Mat2c reduced_density(const Eigen::VectorXcd& state, int spins, int j);

/// Mean single-spin inversion fidelity per Rabi value.
ResponseCurve multispin_dipolar_sim(const Pulse& pulse, const SpinGeometry& geometry,
                                    const std::vector<double>& omega1_grid, const Tolerance& tol = {1e-10, 1e-12},
                                    int threads = 0);

struct SelectivityProfile {
  ResponseCurve curve;  ///< phi0^M against offset (rad/s)
  double band_width = 0;  ///< rad/s, region around the peak with phi0^M >= 0.1
  double edge_width = 0;  ///< rad/s, mean 10% -> 90% transition of both edges
  double left_edge = 0, right_edge = 0;
};

SelectivityProfile selectivity_profile(const Pulse& pulse, const EnsembleMember& member_template,
                                       const std::vector<double>& offsets, int repetitions,
                                       const Tolerance& tol = {1e-10, 1e-12}, int threads = 0);

/// Trapezoidal int p zeta over the weight table abscissa with p normalized to
/// unit integral; zeta is interpolated linearly.
double weighted_signal(const ResponseCurve& response, const ResponseCurve& weights);

}  // namespace adiabat
