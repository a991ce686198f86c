#include "adiabat/optimizer.hpp"

#include <cmath>
#include <limits>

namespace adiabat {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 60;

ObjectiveValue safe_eval(const ObjectiveFunction& objective, const ParamVector& x, LineSearchState& state) {
  ++state.evaluations;
  try {
    ObjectiveValue f = objective(x);
    if (!std::isfinite(f.value) || !f.gradient.allFinite()) f.value = -std::numeric_limits<double>::infinity();
    return f;
  } catch (const std::exception&) {
    return {-std::numeric_limits<double>::infinity(), Eigen::VectorXd()};
  }
}

// Two-loop recursion on the stored pairs; returns H g for the ascent problem.
Eigen::VectorXd lbfgs_direction(const Eigen::VectorXd& g, const LineSearchState& state) {
  Eigen::VectorXd q = g;
  const std::size_t m = state.s.size();
  std::vector<double> alpha(m), rho(m);
  for (std::size_t i = m; i-- > 0;) {
    rho[i] = 1.0 / state.s[i].dot(state.y[i]);
    alpha[i] = rho[i] * state.s[i].dot(q);
    q -= alpha[i] * state.y[i];
  }
  if (m > 0) q *= state.s.back().dot(state.y.back()) / state.y.back().squaredNorm();
  for (std::size_t i = 0; i < m; ++i) {
    const double beta = rho[i] * state.y[i].dot(q);
    q += (alpha[i] - beta) * state.s[i];
  }
  return q;
}

}  // namespace

std::string to_string(OptimizeStatus s) {
  switch (s) {
    case OptimizeStatus::gradient_tolerance: return "gradient_tolerance";
    case OptimizeStatus::max_iterations: return "max_iterations";
    case OptimizeStatus::step_underflow: return "step_underflow";
    case OptimizeStatus::target_reached: return "target_reached";
    case OptimizeStatus::no_convergence: return "no_convergence";
  }
  return "no_convergence";
}

Eigen::Index ControlProblem::parameter_count() const {
  if (initial_guess) return initial_guess->size();
  return ansatz ? ansatz->parameter_count() : 0;
}

void ControlProblem::validate() const {
  if (!objective_hook) {
    if (!ansatz) throw std::invalid_argument("control problem has no ansatz");
    validate_ensemble(members);
    for (const auto& m : members) m.weights.validate();
  }
  if (parameter_count() <= 0) throw std::invalid_argument("control problem has no parameters");
  if (initial_guess && ansatz && initial_guess->size() != ansatz->parameter_count()) {
    throw std::invalid_argument("initial guess has " + std::to_string(initial_guess->size()) +
                                " parameters, ansatz expects " + std::to_string(ansatz->parameter_count()));
  }
  if (!(seed_low < seed_high)) throw std::invalid_argument("seed range must satisfy low < high");
  if (restart.patience < 1) throw std::invalid_argument("restart patience must be positive");
  if (restart.max_restarts < 0) throw std::invalid_argument("max_restarts must be non-negative");
  if (convergence.max_iterations < 1) throw std::invalid_argument("max_iterations must be positive");
  if (!(convergence.gradient_tol >= 0)) throw std::invalid_argument("gradient tolerance must be non-negative");
  if (multistart < 1) throw std::invalid_argument("multistart must be at least 1");
  if (memory < 1) throw std::invalid_argument("L-BFGS memory must be at least 1");
}

ParamVector draw_seed(const ControlProblem& problem, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(problem.seed_low, problem.seed_high);
  ParamVector x(problem.parameter_count());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = dist(rng);
  return x;
}

StepResult line_search_step(const ParamVector& x, const ObjectiveValue& f, LineSearchState& state,
                            const ObjectiveFunction& objective) {
  const Eigen::VectorXd& g = f.gradient;
  if (g.size() != x.size() || !g.allFinite()) throw std::invalid_argument("objective gradient is malformed");
  const double gnorm = g.norm();
  if (gnorm == 0.0) throw StepUnderflow("gradient vanishes");

  const bool fresh = state.s.empty();
  Eigen::VectorXd d = fresh ? g : lbfgs_direction(g, state);
  double slope = g.dot(d);
  if (!(slope > 0) || !d.allFinite()) {
    state.reset();
    d = g;
    slope = g.squaredNorm();
  }
  const bool steepest = state.s.empty();
  double alpha = steepest ? std::min(1.0, 1.0 / gnorm) : 1.0;
  const double dnorm = d.norm();
  const double xscale = 1.0 + x.norm();

  ParamVector xt;
  ObjectiveValue ft;
  for (int k = 0;; ++k) {
    if (k >= kMaxBacktracks || alpha * dnorm <= 1e-15 * xscale) {
      throw StepUnderflow("no sufficient increase along the search direction");
    }
    xt = x + alpha * d;
    ft = safe_eval(objective, xt, state);
    if (std::isfinite(ft.value) && ft.value >= f.value + kArmijo * alpha * slope && ft.value > f.value) break;
    if (std::isfinite(ft.value)) {
      const double curv = ft.value - f.value - slope * alpha;
      double next = curv < 0 ? -slope * alpha * alpha / (2 * curv) : 0.5 * alpha;
      alpha = std::clamp(next, 0.1 * alpha, 0.5 * alpha);
    } else {
      alpha *= 0.25;
    }
  }

  // Secant probe along a steepest-ascent step: exact for a quadratic.
  if (steepest) {
    const double slope_t = ft.gradient.dot(d);
    if (slope - slope_t > 0) {
      const double a_star = alpha * slope / (slope - slope_t);
      if (std::abs(a_star - alpha) > 1e-3 * alpha) {
        const ParamVector xs = x + a_star * d;
        ObjectiveValue fs = safe_eval(objective, xs, state);
        if (std::isfinite(fs.value) && fs.value > ft.value) {
          xt = xs;
          ft = std::move(fs);
        }
      }
    }
  }

  const Eigen::VectorXd sv = xt - x;
  const Eigen::VectorXd yv = g - ft.gradient;
  if (sv.dot(yv) > 1e-10 * sv.norm() * yv.norm()) {
    state.s.push_back(sv);
    state.y.push_back(yv);
    while (static_cast<int>(state.s.size()) > state.memory) {
      state.s.pop_front();
      state.y.pop_front();
    }
  }
  return {std::move(xt), std::move(ft)};
}

ObjectiveFunction ensemble_objective(const ControlProblem& problem, const Tolerance& tol) {
  EvalOptions opt;
  opt.tol = tol;
  opt.quadrature = problem.quadrature;
  opt.gradient = true;
  const auto* members = &problem.members;
  const int threads = problem.threads;
  return [members, opt, threads](const ParamVector& x) {
    EnsembleEvaluation e = ensemble_target_and_gradient(*members, x, opt, threads);
    return ObjectiveValue{e.value, std::move(e.gradient)};
  };
}

std::vector<MemberEvaluation> report_members(const ControlProblem& problem, const ParamVector& x,
                                             const Tolerance& tol, double* total) {
  EvalOptions opt;
  opt.tol = tol;
  opt.quadrature = problem.quadrature;
  opt.gradient = false;
  opt.all_metrics = true;
  opt.tip_angle = true;
  opt.tip_samples = problem.tip_samples;
  EnsembleEvaluation e = ensemble_target_and_gradient(problem.members, x, opt, problem.threads);
  if (total) *total = e.value;
  return std::move(e.members);
}

namespace {

struct AttemptOutcome {
  ParamVector x;
  ObjectiveValue f;
  OptimizeStatus status = OptimizeStatus::no_convergence;
  bool stalled = false;
};

AttemptOutcome run_attempt(const ControlProblem& p, const ObjectiveFunction& objective, ParamVector x, int attempt,
                           LineSearchState& state, OptimizedPulse& out) {
  AttemptOutcome r;
  r.f = safe_eval(objective, x, state);
  r.x = std::move(x);
  if (!std::isfinite(r.f.value)) {
    r.stalled = true;
    return r;
  }
  out.trace.push_back({attempt, 0, r.f.value, r.f.gradient.norm(), attempt > 0});
  state.reset();
  r.status = OptimizeStatus::max_iterations;
  for (int step = 1; step <= p.convergence.max_iterations; ++step) {
    if (r.f.gradient.norm() <= p.convergence.gradient_tol * std::max(1.0, std::abs(r.f.value))) {
      r.status = OptimizeStatus::gradient_tolerance;
      break;
    }
    if (p.convergence.target_value && r.f.value >= *p.convergence.target_value) {
      r.status = OptimizeStatus::target_reached;
      break;
    }
    try {
      StepResult s = line_search_step(r.x, r.f, state, objective);
      r.x = std::move(s.x);
      r.f = std::move(s.f);
    } catch (const StepUnderflow&) {
      r.status = OptimizeStatus::step_underflow;
      break;
    }
    ++out.iterations;
    out.trace.push_back({attempt, step, r.f.value, r.f.gradient.norm(), false});
    if (step == p.restart.patience && r.f.value <= p.restart.threshold) {
      r.stalled = true;
      return r;
    }
  }
  if (r.f.value <= p.restart.threshold && r.status != OptimizeStatus::target_reached) r.stalled = true;
  return r;
}

}  // namespace

OptimizedPulse optimize(const ControlProblem& problem) {
  problem.validate();
  const ObjectiveFunction objective =
      problem.objective_hook ? problem.objective_hook : ensemble_objective(problem, problem.loop_tolerance);

  OptimizedPulse out;
  out.rng_seed = problem.rng_seed;
  out.loop_tolerance = problem.loop_tolerance;
  out.report_tolerance = problem.report_tolerance;
  out.quadrature = problem.quadrature;
  out.value = -std::numeric_limits<double>::infinity();

  LineSearchState state;
  state.memory = problem.memory;
  int attempt = 0;
  for (int start = 0; start < problem.multistart; ++start) {
    std::seed_seq seq{static_cast<std::uint32_t>(problem.rng_seed), static_cast<std::uint32_t>(problem.rng_seed >> 32),
                      static_cast<std::uint32_t>(start)};
    std::mt19937_64 rng(seq);
    if (problem.multistart == 1) rng.seed(problem.rng_seed);
    for (int restarts = 0;; ++restarts) {
      ParamVector x0 = (attempt == 0 && problem.initial_guess) ? *problem.initial_guess : draw_seed(problem, rng);
      AttemptOutcome r = run_attempt(problem, objective, std::move(x0), attempt, state, out);
      ++attempt;
      if (std::isfinite(r.f.value) && r.f.value > out.value) {
        out.value = r.f.value;
        out.x = r.x;
        out.status = r.stalled ? OptimizeStatus::no_convergence : r.status;
      }
      if (!r.stalled) break;
      if (restarts >= problem.restart.max_restarts) break;
      ++out.restarts;
    }
  }
  out.evaluations = state.evaluations;
  if (out.x.size() == 0) throw std::runtime_error("objective could not be evaluated at any seed");

  if (!problem.objective_hook) {
    out.report = report_members(problem, out.x, problem.report_tolerance, &out.report_value);
  } else {
    out.report_value = out.value;
  }
  return out;
}

}  // namespace adiabat
