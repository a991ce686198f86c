// Gradient ascent over control parameters: limited-memory quasi-Newton steps
// with backtracking, random seeding and restart-on-stall.
#pragma once

#include "adiabat/ansatz.hpp"
#include "adiabat/metrics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace adiabat {

struct StepUnderflow : std::runtime_error {
  explicit StepUnderflow(const std::string& what) : std::runtime_error(what) {}
};

struct ObjectiveValue {
  double value = 0;
  Eigen::VectorXd gradient;
};

/// Scalar objective to maximize; must fill the gradient.
using ObjectiveFunction = std::function<ObjectiveValue(const ParamVector&)>;

struct RestartPolicy {
  double threshold = 0.99;
  int patience = 50;
  int max_restarts = 20;
};

struct ConvergencePolicy {
  /// Stop when ||grad|| <= gradient_tol * max(1, |Phi|).
  double gradient_tol = 1e-8;
  int max_iterations = 2000;
  /// Optional early exit once Phi reaches this value.
  std::optional<double> target_value;
};

struct ControlProblem {
  std::shared_ptr<const FieldAnsatz> ansatz;
  std::vector<EnsembleMember> members;
  double seed_low = -1.0;
  double seed_high = 1.0;
  /// Used instead of a random draw for the first attempt when set.
  std::optional<ParamVector> initial_guess;
  RestartPolicy restart;
  ConvergencePolicy convergence;
  std::uint64_t rng_seed = 42;
  /// Independent seeds harvested; the best result is kept.
  int multistart = 1;
  int memory = 10;
  Tolerance loop_tolerance{1e-8, 1e-10};
  Tolerance report_tolerance{1e-10, 1e-12};
  QuadratureSpec quadrature;
  int threads = 0;
  int tip_samples = 1001;
  /// Replaces the ensemble target (testing and custom objectives).
  ObjectiveFunction objective_hook;

  Eigen::Index parameter_count() const;
  void validate() const;
};

struct TraceEntry {
  int attempt = 0;
  int step = 0;
  double value = 0;
  double gradient_norm = 0;
  bool restart = false;  ///< first entry of a fresh seed
};

enum class OptimizeStatus { gradient_tolerance, max_iterations, step_underflow, target_reached, no_convergence };

std::string to_string(OptimizeStatus s);

struct OptimizedPulse {
  ParamVector x;
  double value = 0;          ///< Phi at the loop tolerance
  double report_value = 0;   ///< Phi recomputed at the report tolerance
  std::vector<MemberEvaluation> report;
  std::vector<TraceEntry> trace;
  int restarts = 0;
  int iterations = 0;
  int evaluations = 0;
  OptimizeStatus status = OptimizeStatus::no_convergence;
  bool converged() const { return status != OptimizeStatus::no_convergence; }
  std::uint64_t rng_seed = 0;
  Tolerance loop_tolerance, report_tolerance;
  QuadratureSpec quadrature;
};

/// Uniform draw on [seed_low, seed_high]^N.
ParamVector draw_seed(const ControlProblem& problem, std::mt19937_64& rng);

/// L-BFGS memory and the last accepted point.
struct LineSearchState {
  int memory = 10;
  std::deque<Eigen::VectorXd> s, y;  ///< steps and gradient changes (of -Phi)
  int evaluations = 0;
  void reset() {
    s.clear();
    y.clear();
  }
};

struct StepResult {
  ParamVector x;
  ObjectiveValue f;
};

/// One ascent step from (x, f) satisfying the sufficient-increase condition.
/// Falls back to steepest ascent when the quasi-Newton direction is not an
/// ascent direction. Throws StepUnderflow when no increase can be found.
StepResult line_search_step(const ParamVector& x, const ObjectiveValue& f, LineSearchState& state,
                            const ObjectiveFunction& objective);

/// Objective built from the problem's ensemble at a given solver tolerance.
ObjectiveFunction ensemble_objective(const ControlProblem& problem, const Tolerance& tol);

/// Runs the restart loop; when max restarts are exhausted the best point is
/// still returned with status no_convergence.
OptimizedPulse optimize(const ControlProblem& problem);

/// Metric report for the problem's members at x.
std::vector<MemberEvaluation> report_members(const ControlProblem& problem, const ParamVector& x,
                                             const Tolerance& tol, double* total = nullptr);

}  // namespace adiabat
