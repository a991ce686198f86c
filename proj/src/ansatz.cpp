#include "adiabat/ansatz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace adiabat {

namespace {

double sech2(double a) {
  const double c = std::cosh(a);
  return 1.0 / (c * c);
}

/// sum_{k=0}^{n-1} c[k] v^k by Horner.
double horner(const double* c, int n, double v) {
  double acc = 0;
  for (int k = n - 1; k >= 0; --k) acc = acc * v + c[k];
  return acc;
}

}  // namespace

double FieldAnsatz::check_arguments(const ParamVector& x, double t) const {
  if (x.size() != parameter_count()) {
    throw DomainError(family() + ": expected " + std::to_string(parameter_count()) + " parameters, got " +
                      std::to_string(x.size()));
  }
  const double T = duration();
  const double slack = 1e-12 * T;
  if (!(t >= -slack && t <= T + slack)) {
    throw DomainError(family() + ": time " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  }
  return std::clamp(t, 0.0, T);
}

// ---------------------------------------------------------------------------

PolyAfpAnsatz::PolyAfpAnsatz(int parameters, double duration, double omega1_max, double offset_max)
    : n_(parameters), duration_(duration), omega1_max_(omega1_max), offset_max_(offset_max) {
  if (n_ < 2 || n_ % 2 != 0) throw DomainError("poly_afp: parameter count must be even and >= 2");
  if (!(duration_ > 0) || !(omega1_max_ > 0) || !(offset_max_ > 0)) {
    throw DomainError("poly_afp: duration, omega1_max and offset_max must be positive");
  }
}

std::pair<double, double> PolyAfpAnsatz::arguments(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  const int half = n_ / 2;
  const double s = t / duration_;
  const double u = 1.0 - 2.0 * s;
  const double v = u * u;
  // a_x = sum_n x_n (1 - v^n) = (1 - v) sum_k v^k c_k,  c_k = sum_{n>k} x_n
  double acc = 0, suffix = 0;
  for (int k = half - 1; k >= 0; --k) {
    suffix += x[k];
    acc = acc * v + suffix;
  }
  const double a_x = 4.0 * s * (1.0 - s) * acc;
  // a_z = sum_m x_{half+m} u^{2m-1} = u * sum_m x_{half+m} v^{m-1}
  const double a_z = u * horner(x.data() + half, half, v);
  return {a_x, a_z};
}

EffectiveField PolyAfpAnsatz::field(const ParamVector& x, double t) const {
  const auto [a_x, a_z] = arguments(x, t);
  return {omega1_max_ * std::tanh(a_x), 0.0, offset_max_ * std::tanh(a_z)};
}

FieldJacobian PolyAfpAnsatz::jacobian(const ParamVector& x, double t) const {
  const auto [a_x, a_z] = arguments(x, t);
  t = std::clamp(t, 0.0, duration_);
  const int half = n_ / 2;
  const double u = 1.0 - 2.0 * t / duration_;
  const double v = u * u;
  const double gx = omega1_max_ * sech2(a_x);
  const double gz = offset_max_ * sech2(a_z);
  FieldJacobian j = FieldJacobian::Zero(3, n_);
  const double w = 4.0 * (t / duration_) * (1.0 - t / duration_);  // 1 - v
  double geo = 1.0;  // 1 + v + ... + v^{n-1}
  double vp = 1.0;
  double up = u;  // u^{2m-1}
  for (int k = 0; k < half; ++k) {
    j(0, k) = gx * w * geo;
    j(2, half + k) = gz * up;
    vp *= v;
    geo += vp;
    up *= v;
  }
  return j;
}

// ---------------------------------------------------------------------------

double bridge_polynomial(const ParamVector& x, int m, int m_end, double xi, double xi_end, double t,
                         double duration) {
  if (m < 0 || m >= m_end || m_end > x.size()) {
    throw DomainError("bridge_polynomial: index range (" + std::to_string(m) + ", " + std::to_string(m_end) +
                      "] invalid for " + std::to_string(x.size()) + " parameters");
  }
  if (!(t >= 0 && t <= duration)) throw DomainError("bridge_polynomial: time outside [0, T]");
  const double s = t / duration;
  const double u = 1.0 - 2.0 * s;
  const double poly = horner(x.data() + m, m_end - m, u);
  return s * (1.0 - s) * poly + s * (xi_end - xi) + xi;
}

ArbitraryStateAnsatz::ArbitraryStateAnsatz(int parameters, double duration, double omega1_max, double offset_max,
                                           const Vec3d& initial_axis, const Vec3d& final_axis)
    : n_(parameters),
      duration_(duration),
      omega1_max_(omega1_max),
      offset_max_(offset_max),
      initial_(initial_axis),
      final_(final_axis) {
  if (n_ < 3 || n_ % 3 != 0) throw DomainError("arbitrary_state: parameter count must be a positive multiple of 3");
  if (!(duration_ > 0) || !(omega1_max_ > 0) || !(offset_max_ > 0)) {
    throw DomainError("arbitrary_state: duration, omega1_max and offset_max must be positive");
  }
  for (const Vec3d* axis : {&initial_, &final_}) {
    if (std::abs(axis->norm() - 1.0) > 1e-12) throw DomainError("arbitrary_state: axes must be unit vectors");
  }
  const double zscale = omega1_max_ / (std::numbers::sqrt2 * offset_max_);
  auto boundary = [&](const Vec3d& n) {
    const Vec3d args(n.x(), n.y(), zscale * n.z());
    for (int i = 0; i < 3; ++i) {
      if (!(std::abs(args[i]) < 1.0)) {
        throw DomainError("arbitrary_state: inverse-tanh argument " + std::to_string(args[i]) +
                          " outside (-1, 1)");
      }
    }
    return Vec3d(std::atanh(args.x()), std::atanh(args.y()), std::atanh(args.z()));
  };
  start_ = boundary(initial_);
  end_ = boundary(final_);
}

EffectiveField ArbitraryStateAnsatz::field(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  const int k = n_ / 3;
  const double amp = omega1_max_ / std::numbers::sqrt2;
  return {amp * std::tanh(bridge_polynomial(x, 0, k, start_.x(), end_.x(), t, duration_)),
          amp * std::tanh(bridge_polynomial(x, k, 2 * k, start_.y(), end_.y(), t, duration_)),
          offset_max_ * std::tanh(bridge_polynomial(x, 2 * k, n_, start_.z(), end_.z(), t, duration_))};
}

FieldJacobian ArbitraryStateAnsatz::jacobian(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  const int k = n_ / 3;
  const double s = t / duration_;
  const double u = 1.0 - 2.0 * s;
  const double envelope = s * (1.0 - s);
  const double amp = omega1_max_ / std::numbers::sqrt2;
  const double scales[3] = {amp, amp, offset_max_};
  FieldJacobian j = FieldJacobian::Zero(3, n_);
  for (int axis = 0; axis < 3; ++axis) {
    const double f = bridge_polynomial(x, axis * k, (axis + 1) * k, start_[axis], end_[axis], t, duration_);
    const double g = scales[axis] * sech2(f) * envelope;
    double up = 1.0;
    for (int i = 0; i < k; ++i) {
      j(axis, axis * k + i) = g * up;
      up *= u;
    }
  }
  return j;
}

// ---------------------------------------------------------------------------

BaselineAnsatz::BaselineAnsatz(BaselineFamily family, double duration, double omega1_max, double offset_max)
    : family_(family), duration_(duration), omega1_max_(omega1_max), offset_max_(offset_max) {
  if (!(duration_ > 0) || !(omega1_max_ > 0) || !(offset_max_ > 0)) {
    throw DomainError("baseline: duration, omega1_max and offset_max must be positive");
  }
}

EffectiveField BaselineAnsatz::field(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  const double shape = x[0];
  const double v = 2.0 * t / duration_ - 1.0;
  if (family_ == BaselineFamily::wurst) {
    const double c = std::abs(std::cos(std::numbers::pi * t / duration_));
    return {omega1_max_ * (1.0 - std::pow(c, shape)), 0.0, offset_max_ * v};
  }
  const double s = shape * v;
  return {omega1_max_ / std::cosh(s), 0.0, offset_max_ * std::tanh(s) / std::tanh(shape)};
}

FieldJacobian BaselineAnsatz::jacobian(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  const double shape = x[0];
  const double v = 2.0 * t / duration_ - 1.0;
  FieldJacobian j = FieldJacobian::Zero(3, 1);
  if (family_ == BaselineFamily::wurst) {
    const double c = std::abs(std::cos(std::numbers::pi * t / duration_));
    j(0, 0) = c > 0 ? -omega1_max_ * std::pow(c, shape) * std::log(c) : 0.0;
    return j;
  }
  const double s = shape * v;
  const double tb = std::tanh(shape);
  j(0, 0) = -omega1_max_ * std::tanh(s) / std::cosh(s) * v;
  j(2, 0) = offset_max_ * (sech2(s) * v * tb - std::tanh(s) * sech2(shape)) / (tb * tb);
  return j;
}

EffectiveField baseline_field(const BaselineWaveform& w, double t) {
  BaselineAnsatz ansatz(w.family, w.duration, w.omega1_max, w.offset_max);
  ParamVector x(1);
  x << w.shape;
  return ansatz.field(x, t);
}

// ---------------------------------------------------------------------------

ConstantFieldAnsatz::ConstantFieldAnsatz(double duration, double scale) : duration_(duration), scale_(scale) {
  if (!(duration_ > 0) || !(scale_ > 0)) throw DomainError("constant: duration and scale must be positive");
}

EffectiveField ConstantFieldAnsatz::field(const ParamVector& x, double t) const {
  check_arguments(x, t);
  return x.head<3>();
}

FieldJacobian ConstantFieldAnsatz::jacobian(const ParamVector& x, double t) const {
  check_arguments(x, t);
  return FieldJacobian::Identity(3, 3);
}

PiecewiseConstantAnsatz::PiecewiseConstantAnsatz(int segments, double duration, double scale)
    : segments_(segments), duration_(duration), scale_(scale) {
  if (segments_ < 1) throw DomainError("piecewise_constant: need at least one segment");
  if (!(duration_ > 0) || !(scale_ > 0)) throw DomainError("piecewise_constant: duration and scale must be positive");
}

int PiecewiseConstantAnsatz::segment_of(double t) const {
  const int s = static_cast<int>(std::floor(t / duration_ * segments_));
  return std::clamp(s, 0, segments_ - 1);
}

EffectiveField PiecewiseConstantAnsatz::field(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  return x.segment<3>(3 * segment_of(t));
}

FieldJacobian PiecewiseConstantAnsatz::jacobian(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  FieldJacobian j = FieldJacobian::Zero(3, 3 * segments_);
  j.block<3, 3>(0, 3 * segment_of(t)).setIdentity();
  return j;
}

std::vector<double> PiecewiseConstantAnsatz::breakpoints() const {
  std::vector<double> b;
  for (int s = 1; s < segments_; ++s) b.push_back(duration_ * s / segments_);
  return b;
}

// ---------------------------------------------------------------------------

SampledWaveform::SampledWaveform(std::vector<double> times, std::vector<EffectiveField> samples, double nominal_rabi)
    : times_(std::move(times)), samples_(std::move(samples)), nominal_rabi_(nominal_rabi) {
  if (times_.size() < 2 || times_.size() != samples_.size()) {
    throw DomainError("sampled waveform needs at least two samples with matching times");
  }
  if (std::abs(times_.front()) > 1e-12 * times_.back()) throw DomainError("sampled waveform must start at t = 0");
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) throw DomainError("sampled waveform times must be strictly increasing");
  }
  if (!(nominal_rabi_ > 0)) throw DomainError("sampled waveform nominal Rabi frequency must be positive");
  times_.front() = 0.0;
  // Catmull-Rom style slopes, one-sided at the ends
  const std::size_t n = times_.size();
  slopes_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
    slopes_[i] = (samples_[hi] - samples_[lo]) / (times_[hi] - times_[lo]);
  }
}

EffectiveField SampledWaveform::field(const ParamVector& x, double t) const {
  t = check_arguments(x, t);
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  std::size_t i = it == times_.begin() ? 0 : std::size_t(it - times_.begin()) - 1;
  if (i + 1 >= times_.size()) i = times_.size() - 2;
  const double h = times_[i + 1] - times_[i];
  const double s = (t - times_[i]) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  return h00 * samples_[i] + h10 * h * slopes_[i] + h01 * samples_[i + 1] + h11 * h * slopes_[i + 1];
}

FieldJacobian SampledWaveform::jacobian(const ParamVector& x, double t) const {
  check_arguments(x, t);
  return FieldJacobian::Zero(3, 0);
}

std::vector<WaveformSample> sample_waveform(const FieldAnsatz& ansatz, const ParamVector& x, int count) {
  if (count < 2) throw DomainError("waveform sampling needs at least two samples");
  std::vector<WaveformSample> out;
  out.reserve(count);
  const double T = ansatz.duration();
  for (int i = 0; i < count; ++i) {
    const double t = (i == count - 1) ? T : T * i / (count - 1);
    out.push_back({t, ansatz.field(x, t)});
  }
  return out;
}

}  // namespace adiabat
