#include "adiabat/vanloan.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <random>

using namespace adiabat;

namespace {

const Tolerance kTight{1e-10, 1e-12};

GeneratorConfig<2> config(int sign, const Mat2c& dh, bool projector = true) {
  GeneratorConfig<2> cfg;
  cfg.sign = sign;
  cfg.projector = projector;
  if (dh.norm() > 0) cfg.perturbation.op = [dh](const EffectiveField&, double) { return dh; };
  return cfg;
}

VanLoanTrajectory<2> propagate_piecewise(const oracle::PiecewiseField& f, const GeneratorConfig<2>& cfg,
                                         const Tolerance& tol = kTight) {
  const auto bps = f.breakpoints();
  return propagate<2>([&f](double t) { return f(t); }, f.duration, cfg, tol, bps);
}

double block_err(const Mat2c& a, const Mat2c& b) { return oracle::rel_err_mat(a, b, 1e-12); }

}  // namespace

TEST_CASE("generator layout") {
  const Vec3d b(0, 0, 2.0);
  auto l = assemble_generator<2>(b, 0.0, config(+1, Mat2c::Zero()));
  CHECK(l.block<2, 2>(2, 4).norm() == 0.0);
  Mat2c up = Mat2c::Zero();
  up(0, 0) = 1;
  CHECK((l.block<2, 2>(0, 2) - up).norm() < 1e-15);
  const Mat2c sz = pauli(2);
  auto lp = assemble_generator<2>(Vec3d(0.3, -0.4, 1.1), 0.2, config(-1, sz));
  CHECK(lp.block<2, 2>(2, 0).norm() == 0.0);
  CHECK(lp.block<2, 2>(4, 0).norm() == 0.0);
  CHECK(lp.block<2, 2>(4, 2).norm() == 0.0);
  CHECK((lp.block<2, 2>(2, 4) - cplx(0, -1) * sz).norm() < 1e-15);
  CHECK((lp.block<2, 2>(0, 0) - lp.block<2, 2>(4, 4)).norm() == 0.0);
  CHECK_THROWS_AS(assemble_generator<2>(Vec3d(0, 0, 1e-20), 0.0, config(+1, sz)), DegenerateField);
}

TEST_CASE("generator partial matches finite differences") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  // b-dependent perturbation dH = b_x sigma_x
  GeneratorConfig<2> cfg;
  cfg.sign = +1;
  cfg.perturbation.op = [](const EffectiveField& b, double) { return Mat2c(b.x() * pauli(0)); };
  cfg.perturbation.partial = [](const EffectiveField&, double, int axis) {
    return axis == 0 ? pauli(0) : Mat2c(Mat2c::Zero());
  };
  for (int trial = 0; trial < 30; ++trial) {
    const Vec3d b(g(rng), g(rng), g(rng));
    for (int axis = 0; axis < 3; ++axis) {
      Vec3d bp = b, bm = b;
      const double h = 1e-6;
      bp[axis] += h;
      bm[axis] -= h;
      const VanLoanMatrix<2> fd =
          (assemble_generator<2>(bp, 0, cfg) - assemble_generator<2>(bm, 0, cfg)) / cplx(2 * h);
      const VanLoanMatrix<2> an = generator_partial<2>(b, 0, cfg, axis);
      CHECK(oracle::rel_err_mat(an, fd) <= 1e-6);
    }
  }
  const auto pz = generator_partial<2>(Vec3d(0, 0, 1), 0, config(+1, Mat2c::Zero()), 2);
  CHECK(pz.block<2, 2>(0, 2).norm() == 0.0);
  const auto px = generator_partial<2>(Vec3d(0, 0, 1), 0, config(+1, Mat2c::Zero()), 0);
  CHECK((px.block<2, 2>(0, 2) - pauli(0) * cplx(0.5)).norm() < 1e-15);
}

TEST_CASE("constant field closed forms") {
  const double w = 1.3, T = 2.7;
  const Vec3d b(0, 0, w);
  const Mat2c sz = pauli(2);
  auto traj = propagate<2>([&](double) { return b; }, T, config(+1, sz), kTight);
  const auto& v = traj.final_blocks();
  Mat2c uT = Mat2c::Zero();
  uT(0, 0) = std::exp(cplx(0, w * T / 2));
  uT(1, 1) = std::exp(cplx(0, -w * T / 2));
  Mat2c p = Mat2c::Zero();
  p(0, 0) = 1;
  CHECK(block_err(v.U, uT) < 1e-9);
  CHECK(block_err(v.proj, T * p * uT) < 1e-9);
  CHECK(block_err(v.pert, cplx(0, -T) * sz * uT) < 1e-9);

  const auto b0 = traj.blocks(0.0);
  CHECK((b0.U - Mat2c::Identity()).norm() < 1e-15);
  CHECK(b0.proj.norm() + b0.pert.norm() + b0.mixed.norm() < 1e-15);

  auto free = propagate<2>([&](double) { return Vec3d(0.4, 0.2, w); }, T, config(+1, Mat2c::Zero()), kTight);
  CHECK(free.final_blocks().pert.norm() < 1e-12);
  CHECK(free.final_blocks().mixed.norm() < 1e-12);
}

TEST_CASE("oracle equivalence on piecewise-constant fields") {
  std::mt19937_64 rng(31);
  const Mat2c dh = (pauli(2) + 0.3 * pauli(0)).eval();
  for (int trial = 0; trial < 3; ++trial) {
    const auto f = oracle::random_piecewise_field(rng, 8, 3.0, 0.5, 5.0);
    const int sign = trial % 2 ? -1 : +1;
    const auto traj = propagate_piecewise(f, config(sign, dh));
    const auto ref = oracle::dyson_blocks(f, sign, dh);
    const auto& v = traj.final_blocks();
    CHECK(block_err(v.U, ref.U) <= 1e-6);
    CHECK(block_err(v.proj, ref.proj) <= 1e-6);
    CHECK(block_err(v.pert, ref.pert) <= 1e-6);
    CHECK(block_err(v.mixed, ref.mixed) <= 1e-6);
  }
}

TEST_CASE("structural invariants") {
  std::mt19937_64 rng(41);
  const Mat2c dh = pauli(2);
  const auto f = oracle::random_piecewise_field(rng, 8, 3.0, 0.5, 5.0);
  for (const Tolerance& tol : {Tolerance{1e-8, 1e-10}, kTight}) {
    const auto traj = propagate_piecewise(f, config(+1, dh), tol);
    const Mat2c u = traj.final_blocks().U;
    CHECK((u.adjoint() * u - Mat2c::Identity()).norm() <= 10 * tol.rel);
    std::uniform_real_distribution<double> ut(0, 3.0);
    for (int k = 0; k < 10; ++k) {
      const double t = ut(rng);
      const auto m = traj.matrix(t);
      CHECK((m * traj.inverse(t) - VanLoanMatrix<2>::Identity()).norm() < 1e-10);
      CHECK(m.block<2, 2>(2, 0).norm() == 0.0);
      CHECK(m.block<2, 2>(4, 0).norm() == 0.0);
      CHECK(m.block<2, 2>(4, 2).norm() == 0.0);
    }
  }

  // linear in dH
  const auto base = propagate_piecewise(f, config(+1, dh)).final_blocks();
  for (double c : {0.5, 2.0}) {
    const auto scaled = propagate_piecewise(f, config(+1, Mat2c(c * dh))).final_blocks();
    CHECK(block_err(scaled.pert, c * base.pert) < 1e-8);
    CHECK(block_err(scaled.mixed, c * base.mixed) < 1e-8);
  }

  // composition V_T = V_{T/2 -> T} V_{0 -> T/2}
  const double T = f.duration;
  auto first = propagate<2>([&](double t) { return f(t); }, T / 2, config(+1, dh), kTight, f.breakpoints());
  std::vector<double> late;
  for (double bp : f.breakpoints())
    if (bp > T / 2) late.push_back(bp - T / 2);
  auto second = propagate<2>([&](double t) { return f(t + T / 2); }, T / 2, config(+1, dh), kTight, late);
  const auto whole = propagate_piecewise(f, config(+1, dh));
  const auto composed = (assemble_from_blocks(second.final_blocks()) * assemble_from_blocks(first.final_blocks())).eval();
  CHECK(oracle::rel_err_mat(composed, assemble_from_blocks(whole.final_blocks())) < 1e-8);
}

TEST_CASE("functional derivative endpoint identity") {
  const Vec3d b(0.3, 0.5, 1.2);
  const auto cfg = config(+1, pauli(2));
  auto traj = propagate<2>([&](double) { return b; }, 2.0, cfg, kTight);
  for (int axis = 0; axis < 3; ++axis) {
    const auto fd = functional_derivative(traj, 2.0, axis);
    const auto expect = (generator_partial<2>(b, 2.0, cfg, axis) * assemble_from_blocks(traj.final_blocks())).eval();
    CHECK(oracle::rel_err_mat(fd, expect) < 1e-10);
  }
}

TEST_CASE("parameter gradient on a constant field equals trajectory perturbation") {
  auto ansatz = std::make_shared<ConstantFieldAnsatz>(2.0, 1.0);
  MemberField field{ansatz};
  ParamVector x(3);
  x << 0.2, -0.4, 1.1;
  const auto cfg = config(-1, pauli(2));
  const auto grid = make_grid(QuadratureSpec{}, 2.0);
  auto traj = propagate<2>(field, x, cfg, kTight);
  const auto grad = parameter_gradient<2>(traj, [&](double t) { return field.jacobian(x, t); }, grid);
  for (int n = 0; n < 3; ++n) {
    const double h = 1e-6 * (1 + std::abs(x[n]));
    ParamVector xp = x, xm = x;
    xp[n] += h;
    xm[n] -= h;
    const auto vp = assemble_from_blocks(propagate<2>(field, xp, cfg, kTight).final_blocks());
    const auto vm = assemble_from_blocks(propagate<2>(field, xm, cfg, kTight).final_blocks());
    const VanLoanMatrix<2> fd = (vp - vm) / cplx(2 * h);
    CHECK(oracle::rel_err_mat(grad[n], fd) <= 1e-5);
  }
}

TEST_CASE("parameter gradient of U(T) on the polynomial ansatz") {
  auto ansatz = std::make_shared<PolyAfpAnsatz>(10, 2.3 * 2 * std::numbers::pi, 1.0, 5.0);
  MemberField field{ansatz, 1.2, 0.0};
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-1, 1);
  ParamVector x(10);
  for (auto& v : x) v = u(rng);
  const auto cfg = config(-1, pauli(2));
  auto traj = propagate<2>(field, x, cfg, kTight);
  auto jac = [&](double t) { return field.jacobian(x, t); };
  const auto grad = parameter_gradient<2>(traj, jac, make_grid(QuadratureSpec{}, ansatz->duration()));
  for (int n = 0; n < 10; ++n) {
    const double h = 1e-6 * (1 + std::abs(x[n]));
    ParamVector xp = x, xm = x;
    xp[n] += h;
    xm[n] -= h;
    const Mat2c fd = (propagate<2>(field, xp, cfg, kTight).final_blocks().U -
                      propagate<2>(field, xm, cfg, kTight).final_blocks().U) /
                     cplx(2 * h);
    CHECK(oracle::rel_err_mat(Mat2c(grad[n].block<2, 2>(0, 0)), fd) <= 1e-4);
  }

  // grid refinement
  QuadratureSpec fine;
  fine.nodes = 512;
  const auto grad2 = parameter_gradient<2>(traj, jac, make_grid(fine, ansatz->duration()));
  double n1 = 0, n2 = 0;
  for (int n = 0; n < 10; ++n) {
    n1 += grad[n].squaredNorm();
    n2 += grad2[n].squaredNorm();
  }
  CHECK(std::abs(std::sqrt(n1) - std::sqrt(n2)) / std::sqrt(n2) < 1e-6);

  // zero Jacobian
  const auto zero = parameter_gradient<2>(
      traj, [](double) { return FieldJacobian(FieldJacobian::Zero(3, 10)); },
      make_grid(QuadratureSpec{}, ansatz->duration()));
  for (const auto& g : zero) CHECK(g.norm() == 0.0);
}

TEST_CASE("contracted sensitivities agree with the full gradient") {
  auto ansatz = std::make_shared<PolyAfpAnsatz>(6, 5.0, 1.0, 4.0);
  MemberField field{ansatz, 1.0, 0.1};
  ParamVector x(6);
  x << 0.5, -0.3, 0.2, 0.8, 0.1, -0.4;
  const auto cfg = config(-1, pauli(2));
  auto traj = propagate<2>(field, x, cfg, kTight);
  const auto grid = make_grid(QuadratureSpec{}, 5.0);
  const auto full = parameter_gradient<2>(traj, [&](double t) { return field.jacobian(x, t); }, grid);
  VanLoanBlocks<2> cb;
  cb.U << cplx(0.3, 0.1), cplx(-0.2, 0.5), cplx(0.7, 0), cplx(0.1, -0.9);
  cb.proj = cb.U.adjoint();
  cb.pert = cb.U * cplx(0, 1);
  cb.mixed = cb.U.transpose();
  const VanLoanMatrix<2> c = cotangent_from_blocks(cb);
  const std::vector<VanLoanMatrix<2>> cs{c};
  const auto sens = field_sensitivities<2>(traj, cs, grid);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(6);
  for (std::size_t k = 0; k < grid.nodes.size(); ++k) {
    g += grid.weights[k] * field.jacobian(x, grid.nodes[k]).transpose() * sens[k].col(0);
  }
  for (int n = 0; n < 6; ++n) {
    const double expect = (c * full[n]).trace().real();
    CHECK(g[n] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("two-spin system hamiltonian") {
  const Vec3d b(0.3, 0.2, 1.0);
  const Mat4c h = system_hamiltonian<4>(b);
  const Vec2c up = spin_up();
  Eigen::Vector4cd uu = Eigen::Vector4cd::Zero();
  uu[0] = 1;
  // <uu|H|uu> = 2 <u|h|u>
  CHECK(std::abs(uu.dot(h * uu) - 2.0 * up.dot(pauli_hamiltonian(b) * up)) < 1e-15);
  GeneratorConfig<4> cfg;
  cfg.projector = false;
  cfg.perturbation.op = [](const EffectiveField&, double) { return Mat4c(Mat4c::Identity()); };
  auto traj = propagate<4>([&](double) { return b; }, 1.5, cfg, kTight);
  const Mat4c u = traj.final_blocks().U;
  CHECK((u.adjoint() * u - Mat4c::Identity()).norm() < 1e-9);
  const Mat2c u2 = constant_field_propagator(b, 1.5);
  Mat4c kron;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) kron.block<2, 2>(2 * i, 2 * j) = u2(i, j) * u2;
  CHECK((u - kron).norm() < 1e-9);
  // identity perturbation: D = -i T U
  CHECK((traj.final_blocks().pert - cplx(0, -1.5) * kron).norm() < 1e-9);
  CHECK((traj.matrix(0.7) * traj.inverse(0.7) - VanLoanMatrix<4>::Identity()).norm() < 1e-10);
}
