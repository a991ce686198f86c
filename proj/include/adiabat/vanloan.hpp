// Van Loan block propagation for first-order Dyson terms.
//
// The generator on a D-dimensional system space is
//
//        | -iH    P     0    |
//   L =  |  0    -iH  -i dH  |
//        |  0     0    -iH   |
//
// and its time-ordered exponential carries U on the diagonal, D_U(iP) in
// block (1,2), D_U(dH) in block (2,3) and D_U(iP, dH) in block (1,3). Only the
// four distinct blocks are integrated; the strictly lower blocks are zero by
// construction and the three diagonal blocks are the same U.
#pragma once

#include "adiabat/ansatz.hpp"
#include "adiabat/ode.hpp"
#include "adiabat/quadrature.hpp"
#include "adiabat/spinalg.hpp"

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace adiabat {

template <int D>
using MatD = Eigen::Matrix<cplx, D, D>;

template <int D>
using VanLoanMatrix = Eigen::Matrix<cplx, 3 * D, 3 * D>;

using Mat4c = MatD<4>;

template <int D>
struct VanLoanBlocks {
  MatD<D> U = MatD<D>::Identity();
  MatD<D> proj = MatD<D>::Zero();   ///< D_U(iP; t)
  MatD<D> pert = MatD<D>::Zero();   ///< D_U(dH; t)
  MatD<D> mixed = MatD<D>::Zero();  ///< D_U(iP, dH; t)
};

using DysonBlocks = VanLoanBlocks<2>;

/// Perturbation Hamiltonian dH(b, t) on the system space, optionally
/// depending on the effective field.
template <int D>
struct PerturbationModel {
  std::function<MatD<D>(const EffectiveField&, double)> op;
  /// d(dH)/d(b_axis); leave empty when dH does not depend on b.
  std::function<MatD<D>(const EffectiveField&, double, int)> partial;

  bool active() const { return static_cast<bool>(op); }
};

template <int D>
struct GeneratorConfig {
  bool projector = true;
  int sign = +1;
  PerturbationModel<D> perturbation;
  /// Frequency scale for the gap threshold.
  double frequency_scale = 1.0;
};

/// System Hamiltonian: a single spin (D = 2) or two identical spins (D = 4).
template <int D>
MatD<D> system_hamiltonian(const EffectiveField& b) {
  static_assert(D == 2 || D == 4);
  if constexpr (D == 2) {
    return pauli_hamiltonian(b);
  } else {
    const Mat2c h = pauli_hamiltonian(b);
    const Mat2c id = Mat2c::Identity();
    Mat4c out;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) out(2 * i + k, 2 * j + l) = h(i, j) * id(k, l) + id(i, j) * h(k, l);
    return out;
  }
}

template <int D>
MatD<D> system_hamiltonian_partial(int axis) {
  EffectiveField e = EffectiveField::Zero();
  e[axis] = 1.0;
  return system_hamiltonian<D>(e);  // linear in b
}

template <int D>
void check_generator_config(const GeneratorConfig<D>& cfg) {
  if constexpr (D != 2) {
    if (cfg.projector) throw std::invalid_argument("eigenprojector blocks are defined for single spins only");
  }
}

/// Full 3D x 3D generator L(b, t).
template <int D>
VanLoanMatrix<D> assemble_generator(const EffectiveField& b, double t, const GeneratorConfig<D>& cfg) {
  check_generator_config(cfg);
  const cplx mi(0, -1);
  const MatD<D> a = mi * system_hamiltonian<D>(b);
  VanLoanMatrix<D> l = VanLoanMatrix<D>::Zero();
  for (int k = 0; k < 3; ++k) l.template block<D, D>(k * D, k * D) = a;
  if constexpr (D == 2) {
    if (cfg.projector) l.template block<D, D>(0, D) = eigenprojector(b, cfg.sign, cfg.frequency_scale);
  }
  if (cfg.perturbation.active()) l.template block<D, D>(D, 2 * D) = mi * cfg.perturbation.op(b, t);
  return l;
}

/// dL/d(b_axis) at (b, t).
template <int D>
VanLoanMatrix<D> generator_partial(const EffectiveField& b, double t, const GeneratorConfig<D>& cfg, int axis) {
  check_generator_config(cfg);
  const cplx mi(0, -1);
  const MatD<D> a = mi * system_hamiltonian_partial<D>(axis);
  VanLoanMatrix<D> l = VanLoanMatrix<D>::Zero();
  for (int k = 0; k < 3; ++k) l.template block<D, D>(k * D, k * D) = a;
  if constexpr (D == 2) {
    if (cfg.projector) l.template block<D, D>(0, D) = eigenprojector_partial(b, cfg.sign, axis, cfg.frequency_scale);
  }
  if (cfg.perturbation.active() && cfg.perturbation.partial) {
    l.template block<D, D>(D, 2 * D) = mi * cfg.perturbation.partial(b, t, axis);
  }
  return l;
}

template <int D>
VanLoanMatrix<D> assemble_from_blocks(const VanLoanBlocks<D>& v) {
  VanLoanMatrix<D> m = VanLoanMatrix<D>::Zero();
  for (int k = 0; k < 3; ++k) m.template block<D, D>(k * D, k * D) = v.U;
  m.template block<D, D>(0, D) = v.proj;
  m.template block<D, D>(D, 2 * D) = v.pert;
  m.template block<D, D>(0, 2 * D) = v.mixed;
  return m;
}

template <int D>
MatD<D> small_inverse(const MatD<D>& a) {
  if constexpr (D == 2) {
    return inverse2<double>(a);
  } else {
    return a.inverse();  // cofactor expansion for fixed 4x4
  }
}

/// Inverse of a Van Loan propagator by back-substitution on the block triangle.
template <int D>
VanLoanMatrix<D> block_inverse(const VanLoanBlocks<D>& v) {
  const MatD<D> ui = small_inverse<D>(v.U);
  VanLoanBlocks<D> inv;
  inv.U = ui;
  inv.proj = -ui * v.proj * ui;
  inv.pert = -ui * v.pert * ui;
  inv.mixed = ui * (v.proj * ui * v.pert - v.mixed) * ui;
  return assemble_from_blocks(inv);
}

using FieldFunction = std::function<EffectiveField(double)>;
using JacobianFunction = std::function<FieldJacobian(double)>;

template <int D>
class VanLoanTrajectory {
 public:
  static constexpr int kBlockSize = D * D;
  using State = Eigen::Matrix<double, 8 * D * D, 1>;

  VanLoanTrajectory(FieldFunction field, double duration, GeneratorConfig<D> cfg, Tolerance tol,
                    DenseSolution<State> solution)
      : field_(std::move(field)),
        duration_(duration),
        cfg_(std::move(cfg)),
        tol_(tol),
        solution_(std::move(solution)),
        final_(unpack(solution_.final())) {}

  double duration() const { return duration_; }
  const GeneratorConfig<D>& config() const { return cfg_; }
  const Tolerance& tolerance() const { return tol_; }
  const FieldFunction& field() const { return field_; }
  std::size_t step_count() const { return solution_.step_count(); }

  VanLoanBlocks<D> blocks(double t) const { return unpack(solution_(t)); }
  const VanLoanBlocks<D>& final_blocks() const { return final_; }
  VanLoanMatrix<D> matrix(double t) const { return assemble_from_blocks(blocks(t)); }
  VanLoanMatrix<D> inverse(double t) const { return block_inverse(blocks(t)); }

  static VanLoanBlocks<D> unpack(const State& y) {
    VanLoanBlocks<D> v;
    const cplx* p = reinterpret_cast<const cplx*>(y.data());
    v.U = Eigen::Map<const MatD<D>>(p);
    v.proj = Eigen::Map<const MatD<D>>(p + kBlockSize);
    v.pert = Eigen::Map<const MatD<D>>(p + 2 * kBlockSize);
    v.mixed = Eigen::Map<const MatD<D>>(p + 3 * kBlockSize);
    return v;
  }

 private:
  FieldFunction field_;
  double duration_;
  GeneratorConfig<D> cfg_;
  Tolerance tol_;
  DenseSolution<State> solution_;
  VanLoanBlocks<D> final_;
};

/// Integrates the Van Loan ODE on [0, T] with dense output.
template <int D>
VanLoanTrajectory<D> propagate(const FieldFunction& field, double duration, const GeneratorConfig<D>& cfg,
                               const Tolerance& tol, std::span<const double> breakpoints = {}) {
  check_generator_config(cfg);
  using Traj = VanLoanTrajectory<D>;
  using State = typename Traj::State;
  constexpr int B = Traj::kBlockSize;
  const bool with_proj = D == 2 && cfg.projector;
  const bool with_pert = cfg.perturbation.active();
  const cplx mi(0, -1);

  auto rhs = [&](double t, const State& y, State& dy) {
    const EffectiveField b = field(t);
    const MatD<D> a = mi * system_hamiltonian<D>(b);
    const cplx* p = reinterpret_cast<const cplx*>(y.data());
    cplx* q = reinterpret_cast<cplx*>(dy.data());
    Eigen::Map<const MatD<D>> u(p), v12(p + B), v23(p + 2 * B), v13(p + 3 * B);
    Eigen::Map<MatD<D>> du(q), dv12(q + B), dv23(q + 2 * B), dv13(q + 3 * B);
    du.noalias() = a * u;
    if (with_proj) {
      MatD<D> proj;
      if constexpr (D == 2) {
        try {
          proj = eigenprojector(b, cfg.sign, cfg.frequency_scale);
        } catch (const DegenerateField& e) {
          throw DegenerateField(std::string(e.what()) + " at t = " + std::to_string(t));
        }
      }
      dv12.noalias() = a * v12 + proj * u;
      if (with_pert) {
        dv13.noalias() = a * v13 + proj * v23;
      } else {
        dv13.setZero();
      }
    } else {
      dv12.setZero();
      dv13.setZero();
    }
    if (with_pert) {
      dv23.noalias() = a * v23 + mi * cfg.perturbation.op(b, t) * u;
    } else {
      dv23.setZero();
    }
  };

  State y0 = State::Zero();
  {
    cplx* p = reinterpret_cast<cplx*>(y0.data());
    Eigen::Map<MatD<D>>(p).setIdentity();
  }
  IntegratorOptions opt;
  opt.tol = tol;
  opt.dense = true;
  auto sol = integrate<State>(rhs, 0.0, duration, y0, opt, breakpoints);
  return Traj(field, duration, cfg, tol, std::move(sol));
}

template <int D>
VanLoanTrajectory<D> propagate(const MemberField& field, const ParamVector& x, const GeneratorConfig<D>& cfg,
                               const Tolerance& tol) {
  FieldFunction f = [field, x](double t) { return field(x, t); };
  const auto bps = field.ansatz->breakpoints();
  return propagate<D>(f, field.duration(), cfg, tol, bps);
}

/// delta V_T / delta b_axis(t) = V_T V_t^{-1} (dL/db_axis) V_t.
template <int D>
VanLoanMatrix<D> functional_derivative(const VanLoanTrajectory<D>& traj, double t, int axis) {
  const VanLoanBlocks<D> vt = traj.blocks(t);
  const VanLoanMatrix<D> dl = generator_partial<D>(traj.field()(t), t, traj.config(), axis);
  return assemble_from_blocks(traj.final_blocks()) * block_inverse(vt) * dl * assemble_from_blocks(vt);
}

/// dV_T/dx_n for every parameter, by quadrature of the chain-rule integral.
template <int D>
std::vector<VanLoanMatrix<D>> parameter_gradient(const VanLoanTrajectory<D>& traj, const JacobianFunction& jacobian,
                                                 const QuadratureGrid& grid) {
  std::vector<VanLoanMatrix<D>> out;
  for (std::size_t k = 0; k < grid.nodes.size(); ++k) {
    const double t = grid.nodes[k];
    const FieldJacobian j = jacobian(t);
    if (out.empty()) out.assign(j.cols(), VanLoanMatrix<D>::Zero());
    if (j.isZero(0.0)) continue;
    for (int axis = 0; axis < 3; ++axis) {
      if (j.row(axis).isZero(0.0)) continue;
      const VanLoanMatrix<D> fd = functional_derivative(traj, t, axis);
      for (Eigen::Index n = 0; n < j.cols(); ++n) {
        if (j(axis, n) != 0.0) out[n] += (grid.weights[k] * j(axis, n)) * fd;
      }
    }
  }
  return out;
}

/// Cotangent of a scalar function of V_T, laid out so that
/// d(phi) = Re tr(C dV_T). Block arguments are the coefficients of dU, dD(iP),
/// dD(dH) and dD(iP, dH).
template <int D>
VanLoanMatrix<D> cotangent_from_blocks(const VanLoanBlocks<D>& c) {
  VanLoanMatrix<D> m = VanLoanMatrix<D>::Zero();
  m.template block<D, D>(0, 0) = c.U;
  m.template block<D, D>(D, 0) = c.proj;
  m.template block<D, D>(2 * D, D) = c.pert;
  m.template block<D, D>(2 * D, 0) = c.mixed;
  return m;
}

/// Functional derivative densities d(phi_k)/d(b_axis(t)) at every grid node,
/// for each cotangent C_k. Result[node] is 3 x K.
template <int D>
std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> field_sensitivities(
    const VanLoanTrajectory<D>& traj, std::span<const VanLoanMatrix<D>> cotangents, const QuadratureGrid& grid) {
  const VanLoanMatrix<D> vT = assemble_from_blocks(traj.final_blocks());
  std::vector<VanLoanMatrix<D>> cv;
  cv.reserve(cotangents.size());
  for (const auto& c : cotangents) cv.push_back(c * vT);
  const auto K = static_cast<Eigen::Index>(cotangents.size());

  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> out(grid.nodes.size());
  for (std::size_t node = 0; node < grid.nodes.size(); ++node) {
    const double t = grid.nodes[node];
    const VanLoanBlocks<D> vt_blocks = traj.blocks(t);
    const VanLoanMatrix<D> vt = assemble_from_blocks(vt_blocks);
    const VanLoanMatrix<D> vt_inv = block_inverse(vt_blocks);
    const EffectiveField b = traj.field()(t);
    std::array<VanLoanMatrix<D>, 3> dl;
    for (int axis = 0; axis < 3; ++axis) dl[axis] = generator_partial<D>(b, t, traj.config(), axis);
    auto& s = out[node];
    s.resize(3, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      // Re tr(C V_T V_t^-1 dL V_t) = Re tr(M dL) with M = V_t C V_T V_t^-1
      const VanLoanMatrix<D> m = vt * cv[k] * vt_inv;
      for (int axis = 0; axis < 3; ++axis) s(axis, k) = (m.transpose().cwiseProduct(dl[axis])).sum().real();
    }
  }
  return out;
}

}  // namespace adiabat
