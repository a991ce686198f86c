// Closed-form spin-1/2 algebra: Pauli Hamiltonians, eigenprojectors, norms and
// Bloch-vector conversions. Everything here is a pure function of its inputs.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace adiabat {

template <typename Scalar>
using Complex = std::complex<Scalar>;

template <typename Scalar>
using Mat2 = Eigen::Matrix<Complex<Scalar>, 2, 2>;

template <typename Scalar>
using Vec2 = Eigen::Matrix<Complex<Scalar>, 2, 1>;

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

using cplx = Complex<double>;
using Mat2c = Mat2<double>;
using Vec2c = Vec2<double>;
using Vec3d = Vec3<double>;

/// Effective field b = (omega_1I, omega_1Q, delta_omega) in rad/s.
using EffectiveField = Vec3d;

/// Pure spin-1/2 state (c_up, c_down).
using SpinState = Vec2c;

struct DegenerateField : std::runtime_error {
  explicit DegenerateField(const std::string& what) : std::runtime_error(what) {}
};

struct AmbiguousAlignment : std::runtime_error {
  explicit AmbiguousAlignment(const std::string& what) : std::runtime_error(what) {}
};

/// Magnitude threshold below which a field is treated as a closed gap.
/// Relative to the caller's characteristic frequency scale.
inline constexpr double kFieldEpsilonRelative = 1e-9;
inline constexpr double kAlignmentEpsilon = 1e-6;

template <typename Scalar = double>
Mat2<Scalar> pauli(int axis) {
  using C = Complex<Scalar>;
  Mat2<Scalar> s;
  switch (axis) {
    case 0: s << C(0), C(1), C(1), C(0); break;
    case 1: s << C(0), C(0, -1), C(0, 1), C(0); break;
    case 2: s << C(1), C(0), C(0), C(-1); break;
    default: throw std::out_of_range("pauli axis must be 0, 1 or 2");
  }
  return s;
}

/// b . sigma
template <typename Scalar>
Mat2<Scalar> field_dot_sigma(const Vec3<Scalar>& b) {
  using C = Complex<Scalar>;
  Mat2<Scalar> m;
  m << C(b.z()), C(b.x(), -b.y()), C(b.x(), b.y()), C(-b.z());
  return m;
}

/// H(b) = -b . sigma / 2. Eigenvalues are +-|b|/2.
template <typename Scalar>
Mat2<Scalar> pauli_hamiltonian(const Vec3<Scalar>& b) {
  return field_dot_sigma(b) * Complex<Scalar>(Scalar(-0.5));
}

template <typename Scalar>
void require_gap(const Vec3<Scalar>& b, Scalar scale) {
  const Scalar threshold = Scalar(kFieldEpsilonRelative) * scale;
  if (!(b.norm() > threshold)) {
    throw DegenerateField("effective field magnitude " + std::to_string(double(b.norm())) +
                          " is below the gap threshold " + std::to_string(double(threshold)));
  }
}

/// Projector (1 + sign * b.sigma/|b|)/2 onto the eigenstate along sign*b.
/// `scale` is the problem's characteristic frequency, used for the gap check.
template <typename Scalar>
Mat2<Scalar> eigenprojector(const Vec3<Scalar>& b, int sign, Scalar scale = Scalar(1)) {
  require_gap(b, scale);
  const Scalar s = sign >= 0 ? Scalar(1) : Scalar(-1);
  Mat2<Scalar> p = field_dot_sigma<Scalar>(b * (s / b.norm()));
  p(0, 0) += Scalar(1);
  p(1, 1) += Scalar(1);
  return p * Complex<Scalar>(Scalar(0.5));
}

/// d/db_alpha of eigenprojector(b, sign).
template <typename Scalar>
Mat2<Scalar> eigenprojector_partial(const Vec3<Scalar>& b, int sign, int axis,
                                    Scalar scale = Scalar(1)) {
  require_gap(b, scale);
  const Scalar n2 = b.squaredNorm();
  const Scalar n = std::sqrt(n2);
  const Scalar s = sign >= 0 ? Scalar(1) : Scalar(-1);
  Mat2<Scalar> d = pauli<Scalar>(axis) - field_dot_sigma<Scalar>(b) * Complex<Scalar>(b[axis] / n2);
  return d * Complex<Scalar>(s / (Scalar(2) * n));
}

struct SignChoice {
  int sign;
  double overlap;
};

/// Picks the eigenprojector sign whose eigenstate best matches psi0.
template <typename Scalar>
SignChoice select_sign(const Vec3<Scalar>& b0, const Vec2<Scalar>& psi0, Scalar scale = Scalar(1)) {
  const auto plus = std::real(psi0.dot(eigenprojector(b0, +1, scale) * psi0));
  const auto minus = std::real(psi0.dot(eigenprojector(b0, -1, scale) * psi0));
  const Scalar norm = psi0.squaredNorm();
  if (std::abs(plus / norm - Scalar(0.5)) < Scalar(kAlignmentEpsilon) &&
      std::abs(minus / norm - Scalar(0.5)) < Scalar(kAlignmentEpsilon)) {
    throw AmbiguousAlignment("initial state is equidistant from both eigenstates of H(b(0))");
  }
  return plus >= minus ? SignChoice{+1, double(plus / norm)} : SignChoice{-1, double(minus / norm)};
}

/// Largest absolute eigenvalue of a Hermitian matrix of any size.
template <typename Derived>
typename Derived::RealScalar operator_norm(const Eigen::MatrixBase<Derived>& a) {
  using Real = typename Derived::RealScalar;
  if (a.rows() == 0) return Real(0);
  if (a.rows() == 2 && a.cols() == 2) {
    // eigenvalues of [[p, q], [q*, r]]
    const Real p = std::real(a(0, 0)), r = std::real(a(1, 1));
    const Real mean = (p + r) / 2;
    const Real rad = std::hypot((p - r) / 2, std::abs(a(0, 1)));
    return std::max(std::abs(mean + rad), std::abs(mean - rad));
  }
  using Plain = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::SelfAdjointEigenSolver<Plain> solver(Plain(a), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// (<sigma_x>, <sigma_y>, <sigma_z>) for a pure state.
template <typename Scalar>
Vec3<Scalar> bloch_vector(const Vec2<Scalar>& psi) {
  const Complex<Scalar> cross = std::conj(psi[0]) * psi[1];
  return Vec3<Scalar>(Scalar(2) * std::real(cross), Scalar(2) * std::imag(cross),
                      std::norm(psi[0]) - std::norm(psi[1]));
}

/// (<sigma_x>, <sigma_y>, <sigma_z>) for a 2x2 density matrix.
template <typename Scalar>
Vec3<Scalar> bloch_vector(const Mat2<Scalar>& rho) {
  return Vec3<Scalar>(Scalar(2) * std::real(rho(1, 0)), Scalar(2) * std::imag(rho(1, 0)),
                      std::real(rho(0, 0) - rho(1, 1)));
}

/// State with polar angle theta and azimuth phi on the Bloch sphere.
template <typename Scalar = double>
Vec2<Scalar> state_from_bloch_angles(Scalar theta, Scalar phi) {
  Vec2<Scalar> psi;
  psi << Complex<Scalar>(std::cos(theta / 2)), std::polar(std::sin(theta / 2), phi);
  return psi;
}

template <typename Scalar = double>
Vec2<Scalar> state_from_bloch_vector(const Vec3<Scalar>& n) {
  const Scalar theta = std::acos(std::clamp(n.z() / n.norm(), Scalar(-1), Scalar(1)));
  const Scalar phi = std::atan2(n.y(), n.x());
  return state_from_bloch_angles(theta, phi);
}

inline SpinState spin_up() { return SpinState(cplx(1), cplx(0)); }
inline SpinState spin_down() { return SpinState(cplx(0), cplx(1)); }

/// exp(-i H dt) for H = -b.sigma/2, in closed form.
template <typename Scalar>
Mat2<Scalar> constant_field_propagator(const Vec3<Scalar>& b, Scalar dt) {
  const Scalar n = b.norm();
  Mat2<Scalar> u = Mat2<Scalar>::Identity();
  if (n == Scalar(0)) return u;
  const Scalar half = n * dt / 2;
  // exp(+i (|b| dt/2) n.sigma) = cos + i sin n.sigma
  u *= Complex<Scalar>(std::cos(half));
  u += field_dot_sigma<Scalar>(b / n) * Complex<Scalar>(0, std::sin(half));
  return u;
}

/// Closed-form 2x2 inverse via the adjugate.
template <typename Scalar>
Mat2<Scalar> inverse2(const Mat2<Scalar>& a) {
  const Complex<Scalar> det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  Mat2<Scalar> inv;
  inv << a(1, 1), -a(0, 1), -a(1, 0), a(0, 0);
  return inv / det;
}

}  // namespace adiabat
