#include "adiabat/simulator.hpp"

#include "adiabat/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>

namespace adiabat {

namespace {

constexpr double kPi = std::numbers::pi;

double aligned_angle(const EffectiveField& b, const Vec3d& m, int sign) {
  const double nb = b.norm(), nm = m.norm();
  if (nb == 0.0 || nm == 0.0) return 0.0;
  return std::acos(std::clamp((sign >= 0 ? 1.0 : -1.0) * b.dot(m) / (nb * nm), -1.0, 1.0));
}

Eigen::Matrix4cd matrix_power(Eigen::Matrix4cd base, long n) {
  Eigen::Matrix4cd out = Eigen::Matrix4cd::Identity();
  while (n > 0) {
    if (n & 1) out = base * out;
    base = base * base;
    n >>= 1;
  }
  return out;
}

std::vector<long> default_counts(long n_max) {
  std::vector<long> out{0};
  for (int i = 0; i <= 64; ++i) {
    const long n = std::lround(std::pow(static_cast<double>(n_max), i / 64.0));
    if (n > out.back()) out.push_back(n);
  }
  if (out.back() != n_max) out.push_back(n_max);
  return out;
}

// Abscissa where the ordinate first drops below `level`, walking from `start`
// in direction `dir`; the last abscissa if it never does.
double crossing(const ResponseCurve& c, std::size_t start, int dir, double level) {
  std::size_t i = start;
  while (true) {
    const long next = static_cast<long>(i) + dir;
    if (next < 0 || next >= static_cast<long>(c.size())) return c.abscissa[i];
    const auto j = static_cast<std::size_t>(next);
    if (c.ordinate[j] < level) {
      const double y0 = c.ordinate[i], y1 = c.ordinate[j];
      const double f = y0 == y1 ? 0.0 : (y0 - level) / (y0 - y1);
      return c.abscissa[i] + f * (c.abscissa[j] - c.abscissa[i]);
    }
    i = j;
  }
}

std::size_t peak_index(const ResponseCurve& c) {
  if (c.size() == 0) throw std::invalid_argument("empty response curve");
  return static_cast<std::size_t>(std::max_element(c.ordinate.begin(), c.ordinate.end()) - c.ordinate.begin());
}

double interpolate(const ResponseCurve& c, double x) {
  const auto& a = c.abscissa;
  if (a.size() == 1) return c.ordinate[0];
  const auto it = std::upper_bound(a.begin(), a.end(), x);
  std::size_t j = std::clamp<std::size_t>(static_cast<std::size_t>(it - a.begin()), 1, a.size() - 1);
  const double f = (x - a[j - 1]) / (a[j] - a[j - 1]);
  return c.ordinate[j - 1] + f * (c.ordinate[j] - c.ordinate[j - 1]);
}

}  // namespace

MemberField Pulse::member(double omega1, double offset) const {
  return MemberField{ansatz, omega1 / ansatz->nominal_rabi(), offset};
}

Mat2c pulse_unitary(const Pulse& pulse, double omega1, double offset, const Tolerance& tol) {
  const MemberField field = pulse.member(omega1, offset);
  GeneratorConfig<2> cfg;
  cfg.projector = false;
  cfg.frequency_scale = field.frequency_scale();
  const Mat2c u = propagate<2>(field, pulse.x, cfg, tol).final_blocks().U;
  // Long trains amplify the integrator's unitarity drift; remove it.
  Eigen::JacobiSVD<Mat2c> svd(u, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().adjoint();
}

std::vector<BlochSample> bloch_trajectory(const Pulse& pulse, double omega1, double offset, const SpinState& initial,
                                          int samples, int sign, const Tolerance& tol) {
  if (samples < 2) throw std::invalid_argument("trajectory needs at least two samples");
  const MemberField field = pulse.member(omega1, offset);
  GeneratorConfig<2> cfg;
  cfg.projector = false;
  cfg.frequency_scale = field.frequency_scale();
  const auto traj = propagate<2>(field, pulse.x, cfg, tol);
  const double T = pulse.duration();
  std::vector<BlochSample> out(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    auto& s = out[static_cast<std::size_t>(i)];
    s.t = i == samples - 1 ? T : T * i / (samples - 1);
    const SpinState psi = traj.blocks(s.t).U * initial;
    s.m = bloch_vector(psi);
    s.b = field(pulse.x, s.t);
    s.alpha = aligned_angle(s.b, s.m, sign);
  }
  return out;
}

std::vector<RabiSweepPoint> rabi_sweep(const Pulse& pulse, const EnsembleMember& tmpl,
                                       const std::vector<double>& grid, const Tolerance& tol, int tip_samples,
                                       int threads) {
  std::vector<RabiSweepPoint> out(grid.size());
  EvalOptions opt;
  opt.tol = tol;
  opt.gradient = false;
  opt.all_metrics = true;
  opt.tip_angle = true;
  opt.tip_samples = tip_samples;
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    auto& p = out[i];
    p.omega1 = grid[i];
    try {
      EnsembleMember m = tmpl;
      m.field = pulse.member(grid[i], tmpl.field.offset);
      m.weights = MetricWeights{};
      const MemberEvaluation e = evaluate_member(m, pulse.x, opt);
      p.infidelity = 1.0 - e.phi0;
      p.has_ad = e.has_ad;
      p.has_per = e.has_per;
      p.ad_infidelity = e.has_ad ? 1.0 - e.phi_ad : 0.0;
      p.per_infidelity = e.has_per ? 1.0 - e.phi_per : 0.0;
      p.alpha_max = e.alpha_max.value_or(0.0);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
  });
  return out;
}

void PulseTrainConfig::validate() const {
  if (n_max < 1) throw std::invalid_argument("n_max must be at least 1");
  if (!(t_w > 0)) throw std::invalid_argument("t_w must be positive");
  if (!(T2 > 0)) throw std::invalid_argument("T2 must be positive");
  if (T2_star < 0) throw std::invalid_argument("T2* must be non-negative");
  if (offset_nodes < 1) throw std::invalid_argument("offset node count must be positive");
  if (rabi_values.size() != rabi_weights.size()) throw std::invalid_argument("rabi values and weights differ in length");
  for (double w : rabi_weights)
    if (w < 0) throw std::invalid_argument("rabi weights must be non-negative");
  for (long n : counts)
    if (n < 0) throw std::invalid_argument("pulse counts must be non-negative");
}

std::vector<OffsetNode> lorentzian_nodes(double hwhm, int count, double truncation) {
  if (count < 1) throw std::invalid_argument("node count must be positive");
  if (hwhm <= 0) return {{0.0, 1.0}};
  const double lo = 0.5 + std::atan(-truncation) / kPi;
  const double hi = 0.5 + std::atan(truncation) / kPi;
  std::vector<OffsetNode> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double u = lo + (i + 0.5) / count * (hi - lo);
    out[static_cast<std::size_t>(i)] = {hwhm * std::tan(kPi * (u - 0.5)), 1.0 / count};
  }
  return out;
}

Eigen::Matrix4cd unitary_superoperator(const Mat2c& u) {
  Eigen::Matrix4cd s;
  const Mat2c uc = u.conjugate();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) s.block<2, 2>(2 * i, 2 * j) = uc(i, j) * u;
  return s;
}

Eigen::Matrix4cd wait_superoperator(double offset, double t_w, double T2) {
  Eigen::Matrix4cd s = unitary_superoperator(constant_field_propagator(Vec3d(0, 0, offset), t_w));
  const double decay = std::exp(-t_w / T2);
  s.row(1) *= decay;
  s.row(2) *= decay;
  return s;
}

PulseTrainResult pulse_train_decay(const Pulse& pulse, const PulseTrainConfig& cfg) {
  cfg.validate();
  std::vector<long> counts = cfg.counts.empty() ? default_counts(cfg.n_max) : cfg.counts;
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());

  std::vector<double> rabi = cfg.rabi_values, rw = cfg.rabi_weights;
  if (rabi.empty()) {
    rabi = {pulse.nominal_rabi()};
    rw = {1.0};
  }
  double wsum = 0;
  for (double w : rw) wsum += w;
  if (!(wsum > 0)) throw std::invalid_argument("rabi weights sum to zero");

  const auto nodes = lorentzian_nodes(cfg.T2_star > 0 ? 1.0 / cfg.T2_star : 0.0, cfg.offset_nodes, cfg.truncation);
  const std::size_t jobs = rabi.size() * nodes.size();
  std::vector<std::vector<double>> partial(jobs, std::vector<double>(counts.size(), 0.0));

  Eigen::Vector4cd rho0(1, 0, 0, 0);
  parallel_for(jobs, cfg.threads, [&](std::size_t job) {
    const std::size_t r = job / nodes.size(), k = job % nodes.size();
    const double offset = cfg.detuning + nodes[k].offset;
    const Mat2c u = pulse_unitary(pulse, rabi[r], offset, cfg.tol);
    const Eigen::Matrix4cd cycle = wait_superoperator(offset, cfg.t_w, cfg.T2) * unitary_superoperator(u);
    const double w = rw[r] / wsum * nodes[k].weight;
    Eigen::Vector4cd rho = rho0;
    long done = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      rho = matrix_power(cycle, counts[c] - done) * rho;
      done = counts[c];
      const double mz = (rho[0] - rho[3]).real();
      partial[job][c] = w * (counts[c] % 2 == 0 ? mz : -mz);
    }
  });

  PulseTrainResult out;
  out.curve.abscissa.assign(counts.begin(), counts.end());
  out.curve.ordinate.assign(counts.size(), 0.0);
  for (const auto& p : partial)
    for (std::size_t c = 0; c < counts.size(); ++c) out.curve.ordinate[c] += p[c];

  // ln M = a + n ln A
  double sn = 0, sy = 0, snn = 0, sny = 0;
  int m = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 1 || out.curve.ordinate[c] <= 0) continue;
    const double n = static_cast<double>(counts[c]), y = std::log(out.curve.ordinate[c]);
    sn += n;
    sy += y;
    snn += n * n;
    sny += n * y;
    ++m;
  }
  if (m >= 2 && m * snn - sn * sn > 0) {
    const double slope = (m * sny - sn * sy) / (m * snn - sn * sn);
    out.accuracy = std::exp(slope);
    out.fit_intercept = (sy - slope * sn) / m;
  } else if (m == 1) {
    out.accuracy = std::exp(sy / sn);
  }
  return out;
}

ResponseCurve offset_sweep(const Pulse& pulse, long n_pulses, const std::vector<double>& detunings,
                           const PulseTrainConfig& cfg) {
  ResponseCurve out;
  out.abscissa = detunings;
  out.ordinate.resize(detunings.size());
  for (std::size_t i = 0; i < detunings.size(); ++i) {
    PulseTrainConfig c = cfg;
    c.detuning = detunings[i];
    c.counts = {n_pulses};
    c.n_max = std::max(1L, n_pulses);
    out.ordinate[i] = pulse_train_decay(pulse, c).curve.ordinate.back();
  }
  return out;
}

double half_max_half_width(const ResponseCurve& curve) {
  const std::size_t p = peak_index(curve);
  const double level = 0.5 * curve.ordinate[p];
  return 0.5 * (crossing(curve, p, +1, level) - crossing(curve, p, -1, level));
}

double dipolar_coefficient(const Vec3d& r, double gamma) {
  const double d = r.norm();
  if (!(d > 0)) throw std::invalid_argument("dipolar coupling needs distinct positions");
  const double c = r.z() / d;
  return kMu0 * gamma * gamma * kHbar / (8.0 * kPi * d * d * d) * (1.0 - 3.0 * c * c);
}

void SpinGeometry::validate() const {
  for (std::size_t j = 0; j < positions.size(); ++j)
    for (std::size_t k = j + 1; k < positions.size(); ++k)
      if (!((positions[j] - positions[k]).norm() > 0))
        throw std::invalid_argument("spins " + std::to_string(j) + " and " + std::to_string(k) + " coincide");
}

Eigen::MatrixXd SpinGeometry::couplings() const {
  validate();
  const auto n = static_cast<Eigen::Index>(positions.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = j + 1; k < n; ++k)
      d(j, k) = d(k, j) = dipolar_coefficient(positions[j] - positions[k], gamma);
  return d;
}

SpinGeometry face_centred_cube(double edge, double displacement, std::uint64_t seed, double gamma) {
  SpinGeometry g;
  g.gamma = gamma;
  g.positions.push_back(Vec3d::Zero());
  for (int axis = 0; axis < 3; ++axis) {
    for (double s : {-1.0, 1.0}) {
      Vec3d p = Vec3d::Zero();
      p[axis] = s * edge / 2;
      g.positions.push_back(p);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-displacement, displacement);
  for (auto& p : g.positions)
    for (int a = 0; a < 3; ++a) p[a] += u(rng);
  return g;
}

namespace {

int checked_spins(const Eigen::MatrixXd& d) {
  if (d.rows() != d.cols()) throw std::invalid_argument("coupling matrix must be square");
  if (d.rows() > kMaxSpins) {
    throw DimensionTooLarge(std::to_string(d.rows()) + " spins exceed the limit of " + std::to_string(kMaxSpins));
  }
  if (d.rows() < 1) throw std::invalid_argument("at least one spin is required");
  return static_cast<int>(d.rows());
}

inline int spin_bit(int spins, int j) { return spins - 1 - j; }

struct FlipTerm {
  std::uint32_t mask;
  double d;
};

}  // namespace

Eigen::MatrixXcd dipolar_hamiltonian(const Eigen::MatrixXd& couplings) {
  const int n = checked_spins(couplings);
  const Eigen::Index dim = Eigen::Index(1) << n;
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(dim, dim);
  for (Eigen::Index s = 0; s < dim; ++s) {
    for (int j = 0; j < n; ++j) {
      for (int k = j + 1; k < n; ++k) {
        const double d = couplings(j, k);
        const bool bj = (s >> spin_bit(n, j)) & 1, bk = (s >> spin_bit(n, k)) & 1;
        h(s, s) += bj == bk ? d : -d;
        if (bj != bk) h(s ^ ((Eigen::Index(1) << spin_bit(n, j)) | (Eigen::Index(1) << spin_bit(n, k))), s) += -d;
      }
    }
  }
  return h;
}

Eigen::MatrixXcd collective_flip(int spins) {
  if (spins > kMaxSpins) throw DimensionTooLarge("too many spins");
  const Eigen::Index dim = Eigen::Index(1) << spins;
  Eigen::MatrixXcd f = Eigen::MatrixXcd::Zero(dim, dim);
  for (Eigen::Index s = 0; s < dim; ++s) f(s ^ (dim - 1), s) = 1.0;
  return f;
}

MultispinResult multispin_evolve(const Pulse& pulse, double omega1, const Eigen::MatrixXd& couplings,
                                 const Tolerance& tol) {
  const int n = checked_spins(couplings);
  const std::uint32_t dim = 1u << n;
  const MemberField field = pulse.member(omega1);

  std::vector<double> diag(dim, 0.0);
  std::vector<FlipTerm> flips;
  for (int j = 0; j < n; ++j) {
    for (int k = j + 1; k < n; ++k) {
      const double d = couplings(j, k);
      if (d == 0.0) continue;
      flips.push_back({(1u << spin_bit(n, j)) | (1u << spin_bit(n, k)), d});
      for (std::uint32_t s = 0; s < dim; ++s) {
        const bool bj = (s >> spin_bit(n, j)) & 1, bk = (s >> spin_bit(n, k)) & 1;
        diag[s] += bj == bk ? d : -d;
      }
    }
  }

  const ParamVector& x = pulse.x;
  auto rhs = [&](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    const EffectiveField b = field(x, t);
    const cplx* p = reinterpret_cast<const cplx*>(y.data());
    cplx* q = reinterpret_cast<cplx*>(dy.data());
    const cplx minus_i(0, -1);
    for (std::uint32_t s = 0; s < dim; ++s) {
      const int downs = std::popcount(s);
      q[s] = (diag[s] - 0.5 * b.z() * (n - 2 * downs)) * p[s];
    }
    for (int j = 0; j < n; ++j) {
      const std::uint32_t bit = 1u << spin_bit(n, j);
      for (std::uint32_t s = 0; s < dim; ++s) {
        const double sj = (s & bit) ? -1.0 : 1.0;
        q[s ^ bit] += -0.5 * cplx(b.x(), sj * b.y()) * p[s];
      }
    }
    for (const auto& f : flips) {
      for (std::uint32_t s = 0; s < dim; ++s) {
        const std::uint32_t both = s & f.mask;
        if (both != 0 && both != f.mask) q[s ^ f.mask] -= f.d * p[s];
      }
    }
    for (std::uint32_t s = 0; s < dim; ++s) q[s] *= minus_i;
  };

  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(2 * dim);
  y0[0] = 1.0;
  IntegratorOptions opt;
  opt.tol = tol;
  opt.dense = false;
  const auto bps = pulse.ansatz->breakpoints();
  const auto sol = integrate<Eigen::VectorXd>(rhs, 0.0, pulse.duration(), y0, opt, bps);

  MultispinResult out;
  out.state = Eigen::Map<const Eigen::VectorXcd>(reinterpret_cast<const cplx*>(sol.final().data()), dim);
  out.down_fidelity.assign(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    const std::uint32_t bit = 1u << spin_bit(n, j);
    for (std::uint32_t s = 0; s < dim; ++s)
      if (s & bit) out.down_fidelity[static_cast<std::size_t>(j)] += std::norm(out.state[s]);
    out.mean_fidelity += out.down_fidelity[static_cast<std::size_t>(j)] / n;
  }
  return out;
}

Mat2c reduced_density(const Eigen::VectorXcd& state, int spins, int j) {
  const Eigen::Index dim = Eigen::Index(1) << spins;
  if (state.size() != dim) throw std::invalid_argument("state size does not match spin count");
  const Eigen::Index bit = Eigen::Index(1) << spin_bit(spins, j);
  Mat2c rho = Mat2c::Zero();
  for (Eigen::Index s = 0; s < dim; ++s) {
    if (s & bit) continue;
    const cplx up = state[s], down = state[s | bit];
    rho(0, 0) += up * std::conj(up);
    rho(0, 1) += up * std::conj(down);
    rho(1, 0) += down * std::conj(up);
    rho(1, 1) += down * std::conj(down);
  }
  return rho;
}

ResponseCurve multispin_dipolar_sim(const Pulse& pulse, const SpinGeometry& geometry,
                                    const std::vector<double>& grid, const Tolerance& tol, int threads) {
  if (static_cast<int>(geometry.positions.size()) > kMaxSpins) {
    throw DimensionTooLarge(std::to_string(geometry.positions.size()) + " spins exceed the limit of " +
                            std::to_string(kMaxSpins));
  }
  const Eigen::MatrixXd d = geometry.couplings();
  ResponseCurve out;
  out.abscissa = grid;
  out.ordinate.assign(grid.size(), 0.0);
  out.errors.assign(grid.size(), "");
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    try {
      out.ordinate[i] = multispin_evolve(pulse, grid[i], d, tol).mean_fidelity;
    } catch (const std::exception& e) {
      out.ordinate[i] = std::nan("");
      out.errors[i] = e.what();
    }
  });
  return out;
}

SelectivityProfile selectivity_profile(const Pulse& pulse, const EnsembleMember& tmpl,
                                       const std::vector<double>& offsets, int repetitions, const Tolerance& tol,
                                       int threads) {
  if (repetitions < 1) throw std::invalid_argument("repetition count must be at least 1");
  if (offsets.empty()) throw std::invalid_argument("offset grid is empty");
  SelectivityProfile out;
  out.curve.abscissa = offsets;
  out.curve.ordinate.assign(offsets.size(), 0.0);
  EvalOptions opt;
  opt.tol = tol;
  opt.gradient = false;
  const double rabi = tmpl.field.ansatz ? tmpl.field.rabi_scale * pulse.nominal_rabi() : pulse.nominal_rabi();
  parallel_for(offsets.size(), threads, [&](std::size_t i) {
    EnsembleMember m = tmpl;
    m.field = pulse.member(rabi, tmpl.field.offset + offsets[i]);
    m.weights = MetricWeights{};
    m.perturbation = Perturbation::none();
    const double phi0 = evaluate_member(m, pulse.x, opt).phi0;
    out.curve.ordinate[i] = std::pow(phi0, repetitions);
  });

  const std::size_t p = peak_index(out.curve);
  out.left_edge = crossing(out.curve, p, -1, 0.1);
  out.right_edge = crossing(out.curve, p, +1, 0.1);
  out.band_width = out.right_edge - out.left_edge;
  if (out.curve.ordinate[p] >= 0.9) {
    const double left = crossing(out.curve, p, -1, 0.9) - out.left_edge;
    const double right = out.right_edge - crossing(out.curve, p, +1, 0.9);
    out.edge_width = 0.5 * (left + right);
  } else {
    out.edge_width = std::nan("");
  }
  return out;
}

double weighted_signal(const ResponseCurve& response, const ResponseCurve& weights) {
  if (response.size() == 0 || weights.size() == 0) throw EmptyOverlap("empty response or weight table");
  for (double w : weights.ordinate)
    if (w < 0) throw std::invalid_argument("weights must be non-negative");
  const double lo = response.abscissa.front(), hi = response.abscissa.back();
  std::vector<double> xs, ps, zs;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double x = weights.abscissa[i];
    if (x < lo || x > hi) continue;
    xs.push_back(x);
    ps.push_back(weights.ordinate[i]);
    zs.push_back(interpolate(response, x));
  }
  if (xs.empty()) throw EmptyOverlap("weight table does not overlap the response abscissa");
  if (xs.size() == 1) {
    if (!(ps[0] > 0)) throw EmptyOverlap("weights vanish on the overlap");
    return zs[0];
  }
  double num = 0, den = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double h = 0.5 * (xs[i] - xs[i - 1]);
    num += h * (ps[i] * zs[i] + ps[i - 1] * zs[i - 1]);
    den += h * (ps[i] + ps[i - 1]);
  }
  if (!(den > 0)) throw EmptyOverlap("weights vanish on the overlap");
  return num / den;
}

}  // namespace adiabat
