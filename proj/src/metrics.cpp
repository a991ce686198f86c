#include "adiabat/metrics.hpp"

#include "adiabat/parallel.hpp"

#include <cmath>
#include <numbers>

namespace adiabat {

namespace {

using Vec4c = Eigen::Matrix<cplx, 4, 1>;

Vec4c pair_state(const SpinState& psi) {
  Vec4c out;
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) out[2 * i + k] = psi[i] * psi[k];
  return out;
}

Mat4c kron(const Mat2c& a, const Mat2c& b) {
  Mat4c out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
  return out;
}

struct KahanVector {
  Eigen::VectorXd sum, comp;
  explicit KahanVector(Eigen::Index n) : sum(Eigen::VectorXd::Zero(n)), comp(Eigen::VectorXd::Zero(n)) {}
  void add(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < sum.size(); ++i) {
      const double y = v[i] - comp[i];
      const double t = sum[i] + y;
      comp[i] = (t - sum[i]) - y;
      sum[i] = t;
    }
  }
};

double clamp_unit(double v, bool& clamped) {
  if (v > 1.0) {
    clamped = true;
    return 1.0;
  }
  return v;
}

}  // namespace

void MetricWeights::validate() const {
  for (double p : {p0, p_ad, p_per}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("metric weights must lie in [0, 1]");
  }
  if (std::abs(p0 + p_ad + p_per - 1.0) > 1e-12) {
    throw std::invalid_argument("metric weights must sum to 1, got " + std::to_string(p0 + p_ad + p_per));
  }
}

std::string to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::none: return "none";
    case PerturbationKind::sigma_z: return "sigma_z";
    case PerturbationKind::custom: return "custom";
    case PerturbationKind::rabi_proportional: return "rabi_proportional";
    case PerturbationKind::dipolar_pair: return "dipolar_pair";
  }
  return "none";
}

PerturbationKind perturbation_kind_from_string(const std::string& name) {
  for (auto k : {PerturbationKind::none, PerturbationKind::sigma_z, PerturbationKind::custom,
                 PerturbationKind::rabi_proportional, PerturbationKind::dipolar_pair}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown perturbation '" + name + "'");
}

Perturbation Perturbation::custom(const Mat2c& m) {
  if ((m - m.adjoint()).norm() > 1e-12 * std::max(1.0, m.norm())) {
    throw std::invalid_argument("custom perturbation must be Hermitian");
  }
  return {PerturbationKind::custom, m};
}

Mat4c dipolar_pair_operator() {
  return 2.0 * kron(pauli(2), pauli(2)) - kron(pauli(0), pauli(0)) - kron(pauli(1), pauli(1));
}

double fidelity_metric(const Mat2c& u, const SpinState& initial, const SpinState& target) {
  return std::norm(target.dot(u * initial));
}

double adiabaticity_metric(const DysonBlocks& blocks, const SpinState& initial, double duration) {
  const cplx z = initial.dot(blocks.U.adjoint() * blocks.proj * initial) / duration;
  if (std::abs(z.imag()) > 1e-6) {
    throw NonRealMetric("adiabaticity overlap has imaginary part " + std::to_string(z.imag()));
  }
  return z.real();
}

double combined_target(double phi0, double phi_ad, double phi_per, const MetricWeights& w) {
  return w.p0 * phi0 + w.p_ad * phi_ad + w.p_per * phi_per;
}

namespace {

/// Integrates a matrix-valued panel rule over [0, T]. Gauss-Legendre panels
/// of the base grid are bisected until both halves agree with the parent.
template <class Panel>
Eigen::MatrixXd integrate_panels(const Panel& panel, double T, const QuadratureSpec& spec, Eigen::Index rows,
                                 Eigen::Index cols) {
  if (spec.rule != QuadratureRule::gauss_legendre || spec.refine_tol <= 0) return panel(make_grid(spec, T));
  make_grid(spec, T);  // validates the node count
  const int panels = spec.nodes / spec.panel_order;
  const double h = T / panels;
  struct Piece {
    double a, b;
    Eigen::MatrixXd estimate;
    int depth;
  };
  std::vector<Piece> stack;
  Eigen::MatrixXd coarse = Eigen::MatrixXd::Zero(rows, cols);
  for (int p = 0; p < panels; ++p) {
    Piece piece{h * p, h * (p + 1), panel(gauss_legendre(spec.panel_order, h * p, h * (p + 1))), 0};
    coarse += piece.estimate;
    stack.push_back(std::move(piece));
  }
  Eigen::VectorXd scale(cols);
  for (Eigen::Index c = 0; c < cols; ++c) scale[c] = std::max(coarse.col(c).norm(), 1e-300);

  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(rows, cols);
  while (!stack.empty()) {
    Piece piece = std::move(stack.back());
    stack.pop_back();
    const double mid = 0.5 * (piece.a + piece.b);
    Eigen::MatrixXd left = panel(gauss_legendre(spec.panel_order, piece.a, mid));
    Eigen::MatrixXd right = panel(gauss_legendre(spec.panel_order, mid, piece.b));
    const Eigen::MatrixXd diff = left + right - piece.estimate;
    bool settled = piece.depth + 1 >= spec.refine_depth;
    if (!settled) {
      settled = true;
      for (Eigen::Index c = 0; c < cols && settled; ++c) settled = diff.col(c).norm() <= spec.refine_tol * scale[c];
    }
    if (settled) {
      total += left + right;
    } else {
      stack.push_back({piece.a, mid, std::move(left), piece.depth + 1});
      stack.push_back({mid, piece.b, std::move(right), piece.depth + 1});
    }
  }
  return total;
}

}  // namespace

int member_sign(const EnsembleMember& member, const ParamVector& x) {
  if (member.sign) return *member.sign;
  return select_sign(member.field(x, 0.0), member.initial, member.field.frequency_scale()).sign;
}

MemberEvaluation evaluate_member(const EnsembleMember& m, const ParamVector& x, const EvalOptions& opt) {
  MemberEvaluation out;
  out.label = m.label;
  const double T = m.field.duration();
  bool want_ad = opt.all_metrics || m.weights.p_ad > 0;
  bool want_tip = opt.tip_angle;
  const bool want_per = m.perturbation.active() && (opt.all_metrics || m.weights.p_per > 0);
  if (m.weights.p_per > 0 && !m.perturbation.active()) {
    throw ZeroPerturbation("p_per > 0 requires a perturbation Hamiltonian");
  }
  out.sign = m.sign.value_or(+1);
  if (want_ad || want_tip) {
    try {
      out.sign = member_sign(m, x);
    } catch (const AmbiguousAlignment&) {
      // diagnostics are optional when the member does not weight adiabaticity
      if (m.weights.p_ad > 0) throw;
      want_ad = want_tip = false;
    }
  }

  const FieldFunction field = [&m, &x](double t) { return m.field(x, t); };
  const std::vector<double> breakpoints = m.field.ansatz->breakpoints();
  const bool single_pert = want_per && !m.perturbation.pairwise();

  GeneratorConfig<2> cfg;
  cfg.projector = want_ad;
  cfg.sign = out.sign;
  cfg.frequency_scale = m.field.frequency_scale();
  if (single_pert) {
    if (m.perturbation.kind == PerturbationKind::rabi_proportional) {
      cfg.perturbation.op = [](const EffectiveField& b, double) { return Mat2c(b.x() * pauli(0)); };
      cfg.perturbation.partial = [](const EffectiveField&, double, int axis) {
        return axis == 0 ? pauli(0) : Mat2c(Mat2c::Zero());
      };
    } else {
      const Mat2c dh = m.perturbation.matrix;
      cfg.perturbation.op = [dh](const EffectiveField&, double) { return dh; };
    }
  }
  const auto traj = propagate<2>(field, T, cfg, opt.tol, breakpoints);
  const DysonBlocks& v = traj.final_blocks();

  const bool need_grid = opt.gradient || m.perturbation.kind == PerturbationKind::rabi_proportional;
  const QuadratureGrid grid = need_grid ? make_grid(opt.quadrature, T) : QuadratureGrid{};

  const cplx amp = m.target.dot(v.U * m.initial);
  out.phi0 = clamp_unit(std::norm(amp), out.clamped);
  if (want_ad) {
    out.has_ad = true;
    out.phi_ad = clamp_unit(adiabaticity_metric(v, m.initial, T), out.clamped);
  }

  double dyson_norm2 = 0;
  std::optional<VanLoanTrajectory<4>> pair_traj;
  if (want_per) {
    out.has_per = true;
    switch (m.perturbation.kind) {
      case PerturbationKind::sigma_z:
      case PerturbationKind::custom:
        out.normalization = T * operator_norm(m.perturbation.matrix);
        break;
      case PerturbationKind::dipolar_pair:
        out.normalization = T * operator_norm(dipolar_pair_operator());
        break;
      case PerturbationKind::rabi_proportional:
        for (std::size_t k = 0; k < grid.nodes.size(); ++k)
          out.normalization += grid.weights[k] * std::abs(field(grid.nodes[k]).x());
        break;
      case PerturbationKind::none: break;
    }
    if (m.perturbation.pairwise()) {
      GeneratorConfig<4> cfg4;
      cfg4.projector = false;
      cfg4.frequency_scale = cfg.frequency_scale;
      const Mat4c dd = dipolar_pair_operator();
      cfg4.perturbation.op = [dd](const EffectiveField&, double) { return dd; };
      pair_traj.emplace(propagate<4>(field, T, cfg4, opt.tol, breakpoints));
      const Vec4c psi2 = pair_state(m.initial);
      out.phi_per = perturbation_metric<4>(pair_traj->final_blocks().pert, psi2, out.normalization);
      dyson_norm2 = (pair_traj->final_blocks().pert * psi2).squaredNorm();
    } else {
      out.phi_per = perturbation_metric<2>(v.pert, m.initial, out.normalization);
      dyson_norm2 = (v.pert * m.initial).squaredNorm();
    }
  }
  out.phi = combined_target(out.phi0, out.phi_ad, out.phi_per, m.weights);

  if (want_tip) out.alpha_max = max_tip_angle(traj, m.initial, opt.tip_samples, out.sign).max;

  if (!opt.gradient) return out;

  const Eigen::Index n = m.field.ansatz->parameter_count();
  out.grad_phi0 = Eigen::VectorXd::Zero(n);
  out.grad_ad = Eigen::VectorXd::Zero(n);
  out.grad_per = Eigen::VectorXd::Zero(n);

  const Mat2c rho0 = m.initial * m.initial.adjoint();
  std::vector<VanLoanMatrix<2>> cotangents;
  {
    DysonBlocks c;
    c.U = Mat2c(2.0 * std::conj(amp) * m.initial * m.target.adjoint());
    c.proj.setZero();
    cotangents.push_back(cotangent_from_blocks(c));
  }
  if (out.has_ad) {
    DysonBlocks c;
    c.U = rho0 * v.proj.adjoint() / T;
    c.proj = rho0 * v.U.adjoint() / T;
    cotangents.push_back(cotangent_from_blocks(c));
  }
  const double n2 = out.normalization * out.normalization;
  if (out.has_per && !m.perturbation.pairwise()) {
    DysonBlocks c;
    c.U.setZero();
    c.pert = -2.0 / n2 * rho0 * v.pert.adjoint();
    cotangents.push_back(cotangent_from_blocks(c));
  }

  std::vector<VanLoanMatrix<4>> pair_cotangents;
  if (pair_traj) {
    const Vec4c psi2 = pair_state(m.initial);
    VanLoanBlocks<4> c;
    c.U.setZero();
    c.pert = -2.0 / n2 * psi2 * psi2.adjoint() * pair_traj->final_blocks().pert.adjoint();
    pair_cotangents.push_back(cotangent_from_blocks(c));
  }
  const auto k2 = static_cast<Eigen::Index>(cotangents.size());
  const Eigen::Index columns = k2 + (pair_traj ? 1 : 0);
  auto panel = [&](const QuadratureGrid& g) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, columns);
    const auto sens = field_sensitivities<2>(traj, cotangents, g);
    std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> sens4;
    if (pair_traj) sens4 = field_sensitivities<4>(*pair_traj, pair_cotangents, g);
    for (std::size_t k = 0; k < g.nodes.size(); ++k) {
      const FieldJacobian jt = m.field.jacobian(x, g.nodes[k]);
      acc.leftCols(k2) += g.weights[k] * (jt.transpose() * sens[k]);
      if (pair_traj) acc.col(k2) += g.weights[k] * (jt.transpose() * sens4[k].col(0));
    }
    return acc;
  };
  const Eigen::MatrixXd total = integrate_panels(panel, T, opt.quadrature, n, columns);
  {
    Eigen::Index col = 0;
    out.grad_phi0 = total.col(col++);
    if (out.has_ad) out.grad_ad = total.col(col++);
    if (out.has_per && !m.perturbation.pairwise()) out.grad_per = total.col(col++);
    if (pair_traj) out.grad_per = total.col(col++);
  }

  if (out.has_per && m.perturbation.kind == PerturbationKind::rabi_proportional) {
    // d/dx of -||D psi||^2 / N^2 through N = int |b_x| dt
    Eigen::VectorXd dn = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < grid.nodes.size(); ++k) {
      const double bx = field(grid.nodes[k]).x();
      if (bx != 0.0) dn += grid.weights[k] * (bx > 0 ? 1.0 : -1.0) * m.field.jacobian(x, grid.nodes[k]).row(0).transpose();
    }
    out.grad_per += 2.0 * dyson_norm2 / (n2 * out.normalization) * dn;
  }

  out.grad = m.weights.p0 * out.grad_phi0;
  if (out.has_ad) out.grad += m.weights.p_ad * out.grad_ad;
  if (out.has_per) out.grad += m.weights.p_per * out.grad_per;
  return out;
}

void validate_ensemble(const std::vector<EnsembleMember>& members) {
  if (members.empty()) throw std::invalid_argument("optimization set is empty");
  double total = 0;
  for (const auto& m : members) {
    if (!(m.weight >= 0.0 && m.weight <= 1.0)) {
      throw std::invalid_argument("member '" + m.label + "' weight must lie in [0, 1]");
    }
    m.weights.validate();
    total += m.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("member weights must sum to 1, got " + std::to_string(total));
  }
}

EnsembleEvaluation ensemble_target_and_gradient(const std::vector<EnsembleMember>& members, const ParamVector& x,
                                                const EvalOptions& options, int threads) {
  EnsembleEvaluation out;
  out.members.resize(members.size());
  parallel_for(members.size(), threads, [&](std::size_t i) {
    try {
      out.members[i] = evaluate_member(members[i], x, options);
    } catch (const MemberError&) {
      throw;
    } catch (const std::exception& e) {
      throw MemberError(members[i].label, e.what());
    }
  });
  double sum = 0, comp = 0;
  KahanVector grad(x.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    const double term = members[i].weight * out.members[i].phi;
    const double y = term - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    if (options.gradient) grad.add(members[i].weight * out.members[i].grad);
  }
  out.value = sum;
  if (options.gradient) out.gradient = grad.sum;
  return out;
}

TipAngleSeries max_tip_angle(const VanLoanTrajectory<2>& traj, const SpinState& initial, int samples, int sign) {
  if (samples < 2) throw std::invalid_argument("tip angle needs at least two samples");
  TipAngleSeries out;
  const double T = traj.duration();
  const double s = sign >= 0 ? 1.0 : -1.0;
  for (int i = 0; i < samples; ++i) {
    const double t = i == samples - 1 ? T : T * i / (samples - 1);
    const EffectiveField b = traj.field()(t);
    require_gap(b, traj.config().frequency_scale);
    const Vec3d mvec = bloch_vector(SpinState(traj.blocks(t).U * initial));
    const double c = std::clamp(s * b.dot(mvec) / (b.norm() * mvec.norm()), -1.0, 1.0);
    const double a = std::acos(c);
    out.times.push_back(t);
    out.angles.push_back(a);
    out.max = std::max(out.max, a);
  }
  return out;
}

}  // namespace adiabat
