// Waveform parametrizations: control parameters x and time t map to the
// effective field b(x, t) together with its analytic 3xN Jacobian.
#pragma once

#include "adiabat/spinalg.hpp"

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adiabat {

using ParamVector = Eigen::VectorXd;
using FieldJacobian = Eigen::Matrix<double, 3, Eigen::Dynamic>;

struct DomainError : std::invalid_argument {
  explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

class FieldAnsatz {
 public:
  virtual ~FieldAnsatz() = default;

  virtual std::string family() const = 0;
  virtual Eigen::Index parameter_count() const = 0;
  virtual double duration() const = 0;
  /// Nominal maximum Rabi frequency (rad/s); ensemble members scale relative to it.
  virtual double nominal_rabi() const = 0;
  /// Characteristic frequency used for gap thresholds.
  virtual double frequency_scale() const { return nominal_rabi(); }

  virtual EffectiveField field(const ParamVector& x, double t) const = 0;
  virtual FieldJacobian jacobian(const ParamVector& x, double t) const = 0;

  /// Times where b(x, t) may be discontinuous.
  virtual std::vector<double> breakpoints() const { return {}; }

 protected:
  /// Validates dim(x) and t in [0, T]; returns t clamped against round-off.
  double check_arguments(const ParamVector& x, double t) const;
};

/// Amplitude / offset waveforms with tanh soft clipping of an even polynomial
/// (amplitude, pinned to zero at both ends) and an odd polynomial (offset)
/// around T/2. The first N/2 parameters drive the amplitude.
class PolyAfpAnsatz final : public FieldAnsatz {
 public:
  PolyAfpAnsatz(int parameters, double duration, double omega1_max, double offset_max);

  std::string family() const override { return "poly_afp"; }
  Eigen::Index parameter_count() const override { return n_; }
  double duration() const override { return duration_; }
  double nominal_rabi() const override { return omega1_max_; }
  double offset_max() const { return offset_max_; }

  EffectiveField field(const ParamVector& x, double t) const override;
  FieldJacobian jacobian(const ParamVector& x, double t) const override;

  /// Polynomial arguments (a_x, a_z) before clipping.
  std::pair<double, double> arguments(const ParamVector& x, double t) const;

 private:
  int n_;
  double duration_, omega1_max_, offset_max_;
};

/// f(t) = (t/T)(1 - t/T) sum_{n=m+1}^{m'} x_n (1 - 2t/T)^{n-m-1} + (t/T)(xi' - xi) + xi,
/// with 1-based parameter indices. Endpoint values are xi and xi' exactly.
double bridge_polynomial(const ParamVector& x, int m, int m_end, double xi, double xi_end, double t,
                         double duration);

/// General state-to-state ansatz: three clipped bridge polynomials whose
/// endpoints align b(x, 0) with n and b(x, T) with n'.
class ArbitraryStateAnsatz final : public FieldAnsatz {
 public:
  ArbitraryStateAnsatz(int parameters, double duration, double omega1_max, double offset_max,
                       const Vec3d& initial_axis, const Vec3d& final_axis);

  std::string family() const override { return "arbitrary_state"; }
  Eigen::Index parameter_count() const override { return n_; }
  double duration() const override { return duration_; }
  double nominal_rabi() const override { return omega1_max_; }

  EffectiveField field(const ParamVector& x, double t) const override;
  FieldJacobian jacobian(const ParamVector& x, double t) const override;

  const Vec3d& initial_axis() const { return initial_; }
  const Vec3d& final_axis() const { return final_; }

 private:
  int n_;
  double duration_, omega1_max_, offset_max_;
  Vec3d initial_, final_;
  Vec3d start_, end_;  // (alpha, beta, gamma) and primed
};

enum class BaselineFamily { wurst, sech_tanh };

struct BaselineWaveform {
  BaselineFamily family = BaselineFamily::wurst;
  /// WURST index k or sech truncation beta.
  double shape = 20.0;
  double duration = 1.0;
  double omega1_max = 1.0;
  double offset_max = 1.0;
};

/// Literature reference waveforms. The single parameter is the shape
/// constant so the same optimizer can tune it.
class BaselineAnsatz final : public FieldAnsatz {
 public:
  BaselineAnsatz(BaselineFamily family, double duration, double omega1_max, double offset_max);

  std::string family() const override { return family_ == BaselineFamily::wurst ? "wurst" : "sech_tanh"; }
  BaselineFamily baseline_family() const { return family_; }
  Eigen::Index parameter_count() const override { return 1; }
  double duration() const override { return duration_; }
  double nominal_rabi() const override { return omega1_max_; }
  double offset_max() const { return offset_max_; }

  EffectiveField field(const ParamVector& x, double t) const override;
  FieldJacobian jacobian(const ParamVector& x, double t) const override;

 private:
  BaselineFamily family_;
  double duration_, omega1_max_, offset_max_;
};

EffectiveField baseline_field(const BaselineWaveform& w, double t);

/// b(x, t) = x: three parameters held for the whole duration.
class ConstantFieldAnsatz final : public FieldAnsatz {
 public:
  ConstantFieldAnsatz(double duration, double scale);

  std::string family() const override { return "constant"; }
  Eigen::Index parameter_count() const override { return 3; }
  double duration() const override { return duration_; }
  double nominal_rabi() const override { return scale_; }

  EffectiveField field(const ParamVector& x, double t) const override;
  FieldJacobian jacobian(const ParamVector& x, double t) const override;

 private:
  double duration_, scale_;
};

/// S equal segments; x holds (bx, by, bz) per segment.
class PiecewiseConstantAnsatz final : public FieldAnsatz {
 public:
  PiecewiseConstantAnsatz(int segments, double duration, double scale);

  std::string family() const override { return "piecewise_constant"; }
  Eigen::Index parameter_count() const override { return 3 * segments_; }
  double duration() const override { return duration_; }
  double nominal_rabi() const override { return scale_; }
  int segments() const { return segments_; }
  int segment_of(double t) const;

  EffectiveField field(const ParamVector& x, double t) const override;
  FieldJacobian jacobian(const ParamVector& x, double t) const override;
  std::vector<double> breakpoints() const override;

 private:
  int segments_;
  double duration_, scale_;
};

/// A tabulated waveform (e.g. loaded from CSV), interpolated with cubic
/// Hermite splines. Takes no parameters.
class SampledWaveform final : public FieldAnsatz {
 public:
  SampledWaveform(std::vector<double> times, std::vector<EffectiveField> samples, double nominal_rabi);

  std::string family() const override { return "sampled"; }
  Eigen::Index parameter_count() const override { return 0; }
  double duration() const override { return times_.back(); }
  double nominal_rabi() const override { return nominal_rabi_; }

  EffectiveField field(const ParamVector& x, double t) const override;
  FieldJacobian jacobian(const ParamVector& x, double t) const override;

  const std::vector<double>& times() const { return times_; }
  const std::vector<EffectiveField>& samples() const { return samples_; }

 private:
  std::vector<double> times_;
  std::vector<EffectiveField> samples_;
  std::vector<EffectiveField> slopes_;
  double nominal_rabi_;
};

/// An ansatz as seen by one ensemble member: transverse components scaled by
/// the member's relative Rabi strength and a static resonance offset added.
struct MemberField {
  std::shared_ptr<const FieldAnsatz> ansatz;
  double rabi_scale = 1.0;
  double offset = 0.0;

  EffectiveField operator()(const ParamVector& x, double t) const {
    EffectiveField b = ansatz->field(x, t);
    b.x() *= rabi_scale;
    b.y() *= rabi_scale;
    b.z() += offset;
    return b;
  }

  FieldJacobian jacobian(const ParamVector& x, double t) const {
    FieldJacobian j = ansatz->jacobian(x, t);
    j.row(0) *= rabi_scale;
    j.row(1) *= rabi_scale;
    return j;
  }

  double duration() const { return ansatz->duration(); }
  double frequency_scale() const { return ansatz->frequency_scale(); }
};

struct WaveformSample {
  double t;
  EffectiveField b;
};

/// K uniformly spaced samples on [0, T] (K >= 2).
std::vector<WaveformSample> sample_waveform(const FieldAnsatz& ansatz, const ParamVector& x, int count);

}  // namespace adiabat
