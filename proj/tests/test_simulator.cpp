#include "adiabat/simulator.hpp"

#include "doctest.h"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

using namespace adiabat;

namespace {

constexpr double kPi = std::numbers::pi;

Pulse constant_pulse(const Vec3d& b, double T) {
  return {std::make_shared<ConstantFieldAnsatz>(T, std::max(1.0, b.head<2>().norm())), ParamVector(b)};
}

Pulse pi_pulse(double omega) { return constant_pulse(Vec3d(omega, 0, 0), kPi / omega); }

Pulse random_afp(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  ParamVector x(8);
  for (auto& v : x) v = u(rng);
  return {std::make_shared<PolyAfpAnsatz>(8, 2 * kPi * 2.3, 1.0, 5.0), x};
}

// Rabi formula for a square pulse of strength w at offset d, duration T.
double square_inversion(double w, double d, double T) {
  const double g = std::hypot(w, d);
  const double s = std::sin(g * T / 2);
  return w * w / (g * g) * s * s;
}

bool positive_semidefinite(const Eigen::MatrixXcd& rho, double tol = -1e-10) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
  return es.eigenvalues().minCoeff() >= tol;
}

Eigen::Matrix2cd devec(const Eigen::Vector4cd& v) {
  Eigen::Matrix2cd r;
  r << v[0], v[2], v[1], v[3];
  return r;
}

}  // namespace

TEST_CASE("Bloch trajectories for constant fields") {
  SUBCASE("field parallel to the magnetization leaves it fixed") {
    const auto tr = bloch_trajectory(constant_pulse(Vec3d(0, 0, 2), 3.0), 1.0, 0.0, spin_up(), 41);
    for (const auto& s : tr) {
      CHECK((s.m - Vec3d(0, 0, 1)).norm() < 1e-8);
      CHECK(s.alpha < 1e-8);
    }
  }
  SUBCASE("resonant pi pulse inverts") {
    const Pulse p = pi_pulse(2.0);
    const auto tr = bloch_trajectory(p, p.nominal_rabi(), 0.0, spin_up(), 21);
    CHECK(tr.back().m.z() == doctest::Approx(-1.0).epsilon(1e-10));
    for (const auto& s : tr) CHECK(s.m.norm() == doctest::Approx(1.0).epsilon(1e-8));
    // Nutation about x: m(t) = (0, sin(wt), cos(wt)) with H = -b.sigma/2.
    const auto& mid = tr[10];
    CHECK(std::abs(mid.m.z()) < 1e-9);
    CHECK(std::abs(std::abs(mid.m.y()) - 1.0) < 1e-9);
  }
}

TEST_CASE("Rabi sweep reports per-point metrics") {
  EnsembleMember tmpl;
  tmpl.perturbation = Perturbation::sigma_z();
  SUBCASE("aligned constant field is perfectly adiabatic") {
    const Pulse p = constant_pulse(Vec3d(0, 0, 3), 2.0);
    tmpl.target = spin_up();
    const auto pts = rabi_sweep(p, tmpl, {1.0, 1.5, 2.0});
    for (const auto& pt : pts) {
      CHECK(pt.error.empty());
      CHECK(pt.has_ad);
      CHECK(std::abs(pt.ad_infidelity) < 1e-8);
      CHECK(pt.alpha_max < 1e-8);
      CHECK(std::abs(pt.infidelity) < 1e-10);
    }
  }
  SUBCASE("single grid point matches a member evaluation") {
    const Pulse p = random_afp(3);
    const auto pts = rabi_sweep(p, tmpl, {1.3});
    EnsembleMember m = tmpl;
    m.field = p.member(1.3);
    EvalOptions opt;
    opt.tol = {1e-10, 1e-12};
    opt.gradient = false;
    opt.all_metrics = true;
    const auto e = evaluate_member(m, p.x, opt);
    REQUIRE(pts[0].error.empty());
    CHECK(pts[0].infidelity == doctest::Approx(1 - e.phi0).epsilon(1e-12));
    CHECK(pts[0].ad_infidelity == doctest::Approx(1 - e.phi_ad).epsilon(1e-12));
    CHECK(pts[0].per_infidelity == doctest::Approx(1 - e.phi_per).epsilon(1e-12));
  }
  SUBCASE("failing points are recorded and the sweep continues") {
    tmpl.perturbation = Perturbation::rabi_proportional();
    const Pulse p = constant_pulse(Vec3d(1, 0, 0.2), 1.0);
    const auto pts = rabi_sweep(p, tmpl, {0.0, 1.0});
    CHECK_FALSE(pts[0].error.empty());
    CHECK(pts[1].error.empty());
  }
}

TEST_CASE("Lorentzian offset nodes") {
  const double g = 1.0 / 70e-6;
  const auto nodes = lorentzian_nodes(g, 33, 5.0);
  REQUIRE(nodes.size() == 33);
  double w = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    w += nodes[i].weight;
    CHECK(std::abs(nodes[i].offset) < 5 * g);
    CHECK(nodes[i].offset == doctest::Approx(-nodes[32 - i].offset).epsilon(1e-12));
  }
  CHECK(w == doctest::Approx(1.0));
  CHECK(std::abs(nodes[16].offset) < 1e-9 * g);
  CHECK(lorentzian_nodes(0.0, 33, 5.0).size() == 1);
}

TEST_CASE("wait channel damps coherences by the closed-form factor") {
  const double tw = 52e-6, T2 = 364e-6;
  Eigen::Vector4cd rho(0.5, cplx(0.3, 0.2), cplx(0.3, -0.2), 0.5);
  const Eigen::Vector4cd out = wait_superoperator(1234.0, tw, T2) * rho;
  CHECK(std::abs(out[1]) == doctest::Approx(std::abs(rho[1]) * std::exp(-tw / T2)).epsilon(1e-14));
  CHECK(std::abs(out[0] + out[3] - 1.0) < 1e-15);
  CHECK(positive_semidefinite(devec(out)));
}

TEST_CASE("pulse trains") {
  PulseTrainConfig cfg;
  cfg.t_w = 52e-6;
  cfg.T2 = 364e-6;
  cfg.n_max = 10000;

  SUBCASE("perfect pi pulses keep the folded magnetization at one") {
    cfg.T2 = 1e30;
    const auto r = pulse_train_decay(pi_pulse(2 * kPi * 1e6), cfg);
    CHECK(r.curve.abscissa.front() == 0);
    CHECK(r.curve.ordinate.front() == doctest::Approx(1.0));
    for (double m : r.curve.ordinate) CHECK(m == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.accuracy == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("density matrices stay physical along the train") {
    const Pulse p = random_afp(5);
    const Mat2c u = pulse_unitary(p, 1.2, 0.3);
    CHECK((u * u.adjoint() - Mat2c::Identity()).norm() < 1e-14);
    const Eigen::Matrix4cd cycle = wait_superoperator(0.3, 0.7, 2.0) * unitary_superoperator(u);
    Eigen::Vector4cd rho(1, 0, 0, 0);
    for (int n = 1; n <= 200; ++n) {
      rho = cycle * rho;
      CHECK(std::abs(rho[0] + rho[3] - 1.0) < 1e-10);
      CHECK(positive_semidefinite(devec(rho)));
    }
  }
  SUBCASE("zero detuning offset sweep reproduces the train") {
    const Pulse p = random_afp(7);
    PulseTrainConfig c;
    c.t_w = 1.0;
    c.T2 = 5.0;
    c.T2_star = 10.0;
    c.offset_nodes = 5;
    c.counts = {0, 1, 3, 17};
    c.n_max = 17;
    const auto train = pulse_train_decay(p, c);
    const auto sweep = offset_sweep(p, 17, {0.0}, c);
    CHECK(sweep.ordinate[0] == doctest::Approx(train.curve.ordinate.back()).epsilon(1e-12));
  }
  SUBCASE("parity of the polynomial ansatz makes offset sweeps symmetric") {
    const Pulse p = random_afp(11);
    PulseTrainConfig c;
    c.t_w = 1.0;
    c.T2 = 5.0;
    c.T2_star = 10.0;
    c.offset_nodes = 7;
    const auto s = offset_sweep(p, 9, {-0.4, -0.1, 0.1, 0.4}, c);
    CHECK(s.ordinate[0] == doctest::Approx(s.ordinate[3]).epsilon(1e-3));
    CHECK(s.ordinate[1] == doctest::Approx(s.ordinate[2]).epsilon(1e-3));
  }
}

TEST_CASE("half-maximum half-width of a sampled Lorentzian") {
  ResponseCurve c;
  for (int i = -200; i <= 200; ++i) {
    const double x = i * 0.01;
    c.abscissa.push_back(x);
    c.ordinate.push_back(2.0 / (1 + x * x / 0.25));
  }
  CHECK(half_max_half_width(c) == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("dipolar coefficients") {
  const double d = dipolar_coefficient(Vec3d(0, 0, 2e-9), kGammaElectron);
  CHECK(std::abs(d) / (2 * kPi) == doctest::Approx(6.5e6).epsilon(2e-3));
  CHECK(d < 0);
  const Vec3d magic = Vec3d(std::sqrt(2.0), 0, 1).normalized() * 3e-9;
  CHECK(std::abs(dipolar_coefficient(magic, kGammaElectron)) < 1e-9 * std::abs(d));
  const Vec3d r(1e-9, 2e-9, -1.5e-9);
  CHECK(dipolar_coefficient(r, kGammaElectron) / dipolar_coefficient(2 * r, kGammaElectron) ==
        doctest::Approx(8.0).epsilon(1e-12));
  CHECK_THROWS(dipolar_coefficient(Vec3d::Zero(), kGammaElectron));
}

TEST_CASE("face-centred cube geometry is seeded") {
  const auto a = face_centred_cube(4e-9, 0.5e-9, 42), b = face_centred_cube(4e-9, 0.5e-9, 42);
  const auto c = face_centred_cube(4e-9, 0.5e-9, 43);
  REQUIRE(a.positions.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(a.positions[i] == b.positions[i]);
  CHECK(a.positions[3] != c.positions[3]);
  const auto ideal = face_centred_cube(4e-9, 0.0, 1);
  for (std::size_t i = 0; i < 7; ++i) CHECK((a.positions[i] - ideal.positions[i]).cwiseAbs().maxCoeff() <= 0.5e-9);
  const Eigen::MatrixXd d = ideal.couplings();
  CHECK(d.cwiseAbs().maxCoeff() / (2 * kPi) == doctest::Approx(6.5e6).epsilon(2e-3));
  CHECK((d - d.transpose()).norm() == 0.0);
}

TEST_CASE("dipolar Hamiltonian commutes with the collective flip") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Eigen::MatrixXd d = face_centred_cube(4e-9, 0.5e-9, seed).couplings() / 1e6;
    const Eigen::MatrixXcd h = dipolar_hamiltonian(d);
    const Eigen::MatrixXcd f = collective_flip(7);
    CHECK((h - h.adjoint()).norm() < 1e-12 * h.norm());
    CHECK((f * h - h * f).norm() < 1e-12 * h.norm());
  }
  Eigen::MatrixXd pair = Eigen::MatrixXd::Zero(2, 2);
  pair(0, 1) = pair(1, 0) = 2.0;
  // (d/2)(2zz - xx - yy) for two spins.
  CHECK((dipolar_hamiltonian(pair) - dipolar_pair_operator()).norm() < 1e-14);
}

TEST_CASE("multispin evolution") {
  SUBCASE("matches dense exponentiation for a constant field") {
    const Vec3d b(1.1, -0.4, 0.7);
    const double T = 2.0;
    const Pulse p = constant_pulse(b, T);
    Eigen::MatrixXd d(3, 3);
    d << 0, 0.8, -0.3, 0.8, 0, 0.5, -0.3, 0.5, 0;
    Eigen::MatrixXcd h = dipolar_hamiltonian(d);
    const Mat2c h1 = pauli_hamiltonian(b);
    const Mat2c id = Mat2c::Identity();
    for (int j = 0; j < 3; ++j) {
      Eigen::MatrixXcd term = Eigen::MatrixXcd::Ones(1, 1);
      for (int k = 0; k < 3; ++k) {
        const Mat2c& f = k == j ? h1 : id;
        Eigen::MatrixXcd next(term.rows() * 2, term.cols() * 2);
        for (Eigen::Index r = 0; r < term.rows(); ++r)
          for (Eigen::Index c = 0; c < term.cols(); ++c) next.block(2 * r, 2 * c, 2, 2) = term(r, c) * f;
        term = next;
      }
      h += term;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h);
    const Eigen::VectorXcd phase = (es.eigenvalues().cast<cplx>() * cplx(0, -T)).array().exp();
    const Eigen::MatrixXcd u = es.eigenvectors() * phase.asDiagonal() * es.eigenvectors().adjoint();
    const auto r = multispin_evolve(p, p.nominal_rabi(), d);
    CHECK((r.state - u.col(0)).norm() < 1e-9);
  }
  SUBCASE("norm, reduced states and the decoupled limit") {
    const Pulse p = random_afp(13);
    const auto single = bloch_trajectory(p, 1.4, 0.0, spin_up(), 2).back();
    const double phi0 = 0.5 * (1 - single.m.z());
    const auto one = multispin_evolve(p, 1.4, Eigen::MatrixXd::Zero(1, 1));
    CHECK(one.mean_fidelity == doctest::Approx(phi0).epsilon(1e-10));
    const auto free3 = multispin_evolve(p, 1.4, Eigen::MatrixXd::Zero(3, 3));
    CHECK(std::abs(free3.mean_fidelity - phi0) < 1e-10);

    const Eigen::MatrixXd d = face_centred_cube(4e-9, 0.5e-9, 9).couplings() * 1e-7;
    const auto r = multispin_evolve(p, 1.4, d);
    CHECK(std::abs(r.state.squaredNorm() - 1.0) < 1e-10);
    for (int j = 0; j < 7; ++j) {
      const Mat2c rho = reduced_density(r.state, 7, j);
      CHECK(std::abs(rho.trace() - 1.0) < 1e-10);
      CHECK(positive_semidefinite(rho));
      CHECK(rho(1, 1).real() == doctest::Approx(r.down_fidelity[static_cast<std::size_t>(j)]).epsilon(1e-12));
    }
  }
  SUBCASE("more than seven spins are rejected") {
    SpinGeometry g;
    for (int i = 0; i < 8; ++i) g.positions.push_back(Vec3d(i * 1e-9, 0, 0));
    CHECK_THROWS_AS(multispin_dipolar_sim(pi_pulse(1.0), g, {1.0}), DimensionTooLarge);
    CHECK_THROWS_AS(multispin_evolve(pi_pulse(1.0), 1.0, Eigen::MatrixXd::Zero(8, 8)), DimensionTooLarge);
  }
}

TEST_CASE("selectivity profile of a square pulse") {
  const double w = 2.0;
  const Pulse p = pi_pulse(w);
  const double T = p.duration();
  std::vector<double> offsets;
  for (int i = -400; i <= 400; ++i) offsets.push_back(i * 0.01);
  const auto prof = selectivity_profile(p, EnsembleMember{}, offsets, 3);
  for (std::size_t i = 0; i < offsets.size(); i += 37)
    CHECK(prof.curve.ordinate[i] == doctest::Approx(std::pow(square_inversion(w, offsets[i], T), 3)).epsilon(1e-8));
  CHECK(prof.curve.ordinate[400] == doctest::Approx(1.0).epsilon(1e-10));

  // Band edge from the closed form by bisection.
  auto level = [&](double target) {
    double lo = 0, hi = 4;
    for (int k = 0; k < 100; ++k) {
      const double mid = 0.5 * (lo + hi);
      (std::pow(square_inversion(w, mid, T), 3) >= target ? lo : hi) = mid;
    }
    return lo;
  };
  CHECK(prof.band_width == doctest::Approx(2 * level(0.1)).epsilon(1e-3));
  CHECK(prof.edge_width == doctest::Approx(level(0.1) - level(0.9)).epsilon(1e-2));
  CHECK_THROWS(selectivity_profile(p, EnsembleMember{}, offsets, 0));
}

TEST_CASE("weighted signal") {
  ResponseCurve zeta;
  for (int i = 0; i <= 10; ++i) {
    zeta.abscissa.push_back(1.0 + 0.1 * i);
    zeta.ordinate.push_back(1.0);
  }
  ResponseCurve p;
  for (int i = 0; i <= 20; ++i) {
    p.abscissa.push_back(1.0 + 0.05 * i);
    p.ordinate.push_back(1.0 + std::sin(i));
  }
  CHECK(weighted_signal(zeta, p) == doctest::Approx(1.0).epsilon(1e-14));

  for (std::size_t i = 0; i < zeta.size(); ++i) zeta.ordinate[i] = 0.3 + zeta.abscissa[i] * zeta.abscissa[i];
  ResponseCurve delta = p;
  std::fill(delta.ordinate.begin(), delta.ordinate.end(), 0.0);
  delta.ordinate[8] = 5.0;  // abscissa 1.4 coincides with a response node
  CHECK(weighted_signal(zeta, delta) == doctest::Approx(0.3 + 1.4 * 1.4).epsilon(1e-14));

  ResponseCurve uniform = p;
  std::fill(uniform.ordinate.begin(), uniform.ordinate.end(), 2.0);
  for (std::size_t i = 0; i < zeta.size(); ++i) zeta.ordinate[i] = zeta.abscissa[i];
  CHECK(weighted_signal(zeta, uniform) == doctest::Approx(1.5).epsilon(1e-14));

  ResponseCurve far;
  far.abscissa = {5.0, 6.0};
  far.ordinate = {1.0, 1.0};
  CHECK_THROWS_AS(weighted_signal(zeta, far), EmptyOverlap);
}
