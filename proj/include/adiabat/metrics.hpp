// Control metrics (target fidelity, adiabaticity, perturbation robustness),
// their weighted combinations over an ensemble, and analytic gradients.
#pragma once

#include "adiabat/ansatz.hpp"
#include "adiabat/ode.hpp"
#include "adiabat/quadrature.hpp"
#include "adiabat/spinalg.hpp"
#include "adiabat/vanloan.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace adiabat {

struct NonRealMetric : std::runtime_error {
  explicit NonRealMetric(const std::string& what) : std::runtime_error(what) {}
};

struct ZeroPerturbation : std::runtime_error {
  explicit ZeroPerturbation(const std::string& what) : std::runtime_error(what) {}
};

/// Error raised while evaluating one ensemble member, tagged with its label.
struct MemberError : std::runtime_error {
  MemberError(std::string label, const std::string& what)
      : std::runtime_error("member '" + label + "': " + what), label(std::move(label)) {}
  std::string label;
};

struct MetricWeights {
  double p0 = 1.0;
  double p_ad = 0.0;
  double p_per = 0.0;

  /// Throws std::invalid_argument unless each weight is in [0, 1] and they sum to 1.
  void validate() const;
  bool operator==(const MetricWeights&) const = default;
};

enum class PerturbationKind { none, sigma_z, custom, rabi_proportional, dipolar_pair };

std::string to_string(PerturbationKind kind);
PerturbationKind perturbation_kind_from_string(const std::string& name);

struct Perturbation {
  PerturbationKind kind = PerturbationKind::none;
  /// Operator for `custom` (and sigma_z); unused otherwise.
  Mat2c matrix = Mat2c::Zero();

  static Perturbation none() { return {}; }
  static Perturbation sigma_z() { return {PerturbationKind::sigma_z, pauli(2)}; }
  static Perturbation custom(const Mat2c& m);
  /// dH = b_x(t) sigma_x, tracking the member's own transverse field.
  static Perturbation rabi_proportional() { return {PerturbationKind::rabi_proportional, Mat2c::Zero()}; }
  /// Secular dipolar coupling 2 zz - xx - yy acting on two identical spins.
  static Perturbation dipolar_pair() { return {PerturbationKind::dipolar_pair, Mat2c::Zero()}; }

  bool active() const { return kind != PerturbationKind::none; }
  bool pairwise() const { return kind == PerturbationKind::dipolar_pair; }
};

/// 2 sz sz - sx sx - sy sy on C^2 x C^2.
Mat4c dipolar_pair_operator();

struct EnsembleMember {
  std::string label;
  MemberField field;
  Perturbation perturbation;
  SpinState initial = spin_up();
  SpinState target = spin_down();
  /// Eigenprojector sign; chosen from b(x, 0) and the initial state when empty.
  std::optional<int> sign;
  MetricWeights weights;
  double weight = 1.0;
};

struct EvalOptions {
  Tolerance tol{1e-8, 1e-10};
  QuadratureSpec quadrature;
  bool gradient = true;
  /// Evaluate every defined metric, not only those with nonzero weight.
  bool all_metrics = false;
  bool tip_angle = false;
  int tip_samples = 1001;
};

struct MemberEvaluation {
  std::string label;
  int sign = +1;
  double phi0 = 0, phi_ad = 0, phi_per = 0, phi = 0;
  bool has_ad = false, has_per = false;
  double normalization = 0;  ///< N = int ||dH||_op dt
  std::optional<double> alpha_max;
  bool clamped = false;  ///< a metric exceeded 1 by round-off and was clamped
  Eigen::VectorXd grad_phi0, grad_ad, grad_per, grad;
};

struct EnsembleEvaluation {
  double value = 0;
  Eigen::VectorXd gradient;
  std::vector<MemberEvaluation> members;
};

// Single-trajectory metric formulas.

/// |<target|U|initial>|^2
double fidelity_metric(const Mat2c& u, const SpinState& initial, const SpinState& target);

/// (1/T) Re <initial|U^dag D_U(iP)|initial>; NonRealMetric if the imaginary
/// residue exceeds 1e-6.
double adiabaticity_metric(const DysonBlocks& blocks, const SpinState& initial, double duration);

/// 1 - ||D_U(dH) psi||^2 / N^2 for a state of any dimension.
template <int D>
double perturbation_metric(const MatD<D>& dyson, const Eigen::Matrix<cplx, D, 1>& psi, double normalization) {
  if (!(normalization > 0)) throw ZeroPerturbation("perturbation normalization is zero; set p_per = 0 instead");
  return 1.0 - (dyson * psi).squaredNorm() / (normalization * normalization);
}

double combined_target(double phi0, double phi_ad, double phi_per, const MetricWeights& weights);

/// Eigenprojector sign for a member at parameters x.
int member_sign(const EnsembleMember& member, const ParamVector& x);

MemberEvaluation evaluate_member(const EnsembleMember& member, const ParamVector& x, const EvalOptions& options);

/// Phi = sum_l w_l phi_l and its gradient. Members run on up to `threads`
/// workers (0 = default); the reduction is an ordered compensated sum.
EnsembleEvaluation ensemble_target_and_gradient(const std::vector<EnsembleMember>& members, const ParamVector& x,
                                                const EvalOptions& options, int threads = 0);

/// Throws std::invalid_argument unless member weights are in [0,1] and sum to 1.
void validate_ensemble(const std::vector<EnsembleMember>& members);

struct TipAngleSeries {
  double max = 0;  ///< radians
  std::vector<double> times;
  std::vector<double> angles;  ///< radians
};

/// alpha(t) = acos(sign b.m / |b||m|) on a uniform grid. The sign orients b
/// towards the eigenstate the spin is meant to follow.
TipAngleSeries max_tip_angle(const VanLoanTrajectory<2>& traj, const SpinState& initial, int samples, int sign = +1);

}  // namespace adiabat
