#include "spinshelve/kinetics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <complex>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "spinshelve/model.hpp"

namespace spinshelve {

LaserProfile::LaserProfile(double k_max, double t_rise_ns, double t_fall_ns,
                           std::vector<LaserEdge> edges)
    : k_max_(k_max),
      t_rise_ns_(t_rise_ns),
      t_fall_ns_(t_fall_ns),
      edges_(std::move(edges)) {
  if (!(k_max_ >= 0.0)) throw ParameterError("k_max must be >= 0");
  if (!(t_rise_ns_ >= 0.0)) throw ParameterError("t_rise must be >= 0");
  if (!(t_fall_ns_ >= 0.0)) throw ParameterError("t_fall must be >= 0");
  for (std::size_t i = 1; i < edges_.size(); ++i) {
    if (!(edges_[i].t_ns > edges_[i - 1].t_ns)) {
      throw ParameterError("laser edge times must be strictly increasing");
    }
  }
  // Carry the rate across edges so flanks that get interrupted stay
  // continuous.
  value_at_edge_.resize(edges_.size());
  double value = 0.0;
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    if (i > 0) {
      const double dt = edges_[i].t_ns - edges_[i - 1].t_ns;
      value = edges_[i - 1].on
                  ? k_max_ + (value_at_edge_[i - 1] - k_max_) *
                                 (t_rise_ns_ > 0.0 ? std::exp(-dt / t_rise_ns_)
                                                   : 0.0)
                  : value_at_edge_[i - 1] *
                        (t_fall_ns_ > 0.0 ? std::exp(-dt / t_fall_ns_) : 0.0);
    }
    value_at_edge_[i] = value;
  }
}

int LaserProfile::segment_at(double t_ns) const {
  auto it = std::upper_bound(
      edges_.begin(), edges_.end(), t_ns,
      [](double t, const LaserEdge& e) { return t < e.t_ns; });
  return static_cast<int>(it - edges_.begin()) - 1;
}

double LaserProfile::segment_asymptote(int segment) const {
  if (segment < 0) return 0.0;
  return edges_[static_cast<std::size_t>(segment)].on ? k_max_ : 0.0;
}

double LaserProfile::segment_settle_time_ns(int segment, double tol) const {
  if (segment < 0) return -std::numeric_limits<double>::infinity();
  const auto& e = edges_[static_cast<std::size_t>(segment)];
  const double tau = e.on ? t_rise_ns_ : t_fall_ns_;
  const double gap =
      std::abs(value_at_edge_[static_cast<std::size_t>(segment)] -
               segment_asymptote(segment));
  const double floor = tol * std::max(k_max_, 1.0);
  if (tau <= 0.0 || gap <= floor) return e.t_ns;
  return e.t_ns + tau * std::log(gap / floor);
}

double LaserProfile::at(double t_ns) const {
  const int seg = segment_at(t_ns);
  if (seg < 0) return 0.0;
  const auto& e = edges_[static_cast<std::size_t>(seg)];
  const double dt = t_ns - e.t_ns;
  const double v0 = value_at_edge_[static_cast<std::size_t>(seg)];
  if (e.on) {
    if (t_rise_ns_ <= 0.0) return k_max_;
    return k_max_ + (v0 - k_max_) * std::exp(-dt / t_rise_ns_);
  }
  if (t_fall_ns_ <= 0.0) return 0.0;
  return v0 * std::exp(-dt / t_fall_ns_);
}

void Trajectory::push(double t, const Populations& p, double pl_value) {
  t_ns.push_back(t);
  pops.push_back(p);
  pl.push_back(pl_value);
}

void Trajectory::validate(double sum_tol) const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (i > 0 && !(t_ns[i] > t_ns[i - 1])) {
      throw ParameterError("trajectory times must be strictly increasing");
    }
    pops[i].assert_normalized(sum_tol);
    if (!(pl[i] >= 0.0)) throw ParameterError("trajectory pl must be >= 0");
  }
}

Matrix5 expm(const Matrix5& m) {
  using Complex5 = Eigen::Matrix<std::complex<double>, 5, 5>;

  Eigen::EigenSolver<Matrix5> solver(m);
  if (solver.info() == Eigen::Success) {
    const Complex5 v = solver.eigenvectors();
    Eigen::JacobiSVD<Complex5> svd(v);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (smin > 0.0 && smax / smin < 1e12) {
      Eigen::Matrix<std::complex<double>, 5, 1> ev =
          solver.eigenvalues().array().exp();
      const Complex5 result = v * ev.asDiagonal() * v.inverse();
      return result.real();
    }
  }
  // Near-defective spectrum: fall back to scaling and squaring.
  return m.exp();
}

Matrix5 const_propagator(const RateParams& params, double k_e, double dt_ns) {
  if (!(dt_ns >= 0.0)) throw ParameterError("dt must be >= 0");
  const Matrix5 m_ns = rate_matrix(params, k_e) * kNsToS;  // per-ns generator
  return expm(m_ns * dt_ns);
}

Populations propagate_const(const Populations& pops, const RateParams& params,
                            double k_e, double dt_ns) {
  if (dt_ns == 0.0) return pops;
  const Vector5 v = const_propagator(params, k_e, dt_ns) * pops.to_vector();
  return Populations::from_vector(v);
}

namespace {

// One cached exponential per (k_e, dt) pair; the profile integrator mostly
// asks for the same step length over and over inside a settled segment.
class PropagatorCache {
 public:
  explicit PropagatorCache(const RateParams& params) : params_(params) {}

  const Matrix5& get(double k_e, double dt_ns) {
    if (!valid_ || k_e != k_e_ || dt_ns != dt_ns_) {
      matrix_ = const_propagator(params_, k_e, dt_ns);
      k_e_ = k_e;
      dt_ns_ = dt_ns;
      valid_ = true;
    }
    return matrix_;
  }

 private:
  RateParams params_;
  Matrix5 matrix_;
  double k_e_ = -1.0;
  double dt_ns_ = -1.0;
  bool valid_ = false;
};

Vector5 rk4_step(const Vector5& y, const Matrix5& m0_ns,
                 const LaserProfile& profile, double t_ns, double h_ns) {
  // dp/dt = (M0 + k_e(t) * E) p with E the pumping coupling; apply the
  // pumping terms per stage instead of rebuilding the matrix.
  auto deriv = [&](double t, const Vector5& p) -> Vector5 {
    Vector5 d = m0_ns * p;
    const double k = profile.at(t) * kNsToS;
    d[kGs0] -= k * p[kGs0];
    d[kGs1] -= k * p[kGs1];
    d[kEs0] += k * p[kGs0];
    d[kEs1] += k * p[kGs1];
    return d;
  };
  const Vector5 k1 = deriv(t_ns, y);
  const Vector5 k2 = deriv(t_ns + 0.5 * h_ns, y + 0.5 * h_ns * k1);
  const Vector5 k3 = deriv(t_ns + 0.5 * h_ns, y + 0.5 * h_ns * k2);
  const Vector5 k4 = deriv(t_ns + h_ns, y + h_ns * k3);
  return y + (h_ns / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

Trajectory propagate_profile(const Populations& pops, const RateParams& params,
                             const LaserProfile& profile, double t0_ns,
                             double t1_ns, double dt_sample_ns,
                             const IntegratorOptions& options) {
  params.validate();
  if (!(t1_ns > t0_ns)) throw ParameterError("t1 must be > t0");
  if (!(dt_sample_ns > 0.0)) throw ParameterError("dt_sample must be > 0");
  if (!(options.dt_max_ns > 0.0)) throw ParameterError("dt_max must be > 0");

  // Breakpoints where the integrator switches regime: every edge plus the
  // point where each flank has settled to its asymptote.
  std::vector<double> breaks;
  for (std::size_t i = 0; i < profile.edges().size(); ++i) {
    const double te = profile.edges()[i].t_ns;
    const double ts =
        profile.segment_settle_time_ns(static_cast<int>(i), options.flat_tol_rel);
    if (te > t0_ns && te < t1_ns) breaks.push_back(te);
    if (ts > t0_ns && ts < t1_ns) breaks.push_back(ts);
  }
  std::sort(breaks.begin(), breaks.end());

  const Matrix5 m_dark_ns = rate_matrix(params, 0.0) * kNsToS;
  PropagatorCache cache(params);

  Vector5 state = pops.to_vector();
  double t = t0_ns;
  std::size_t next_break = 0;
  long clamp_count = 0;

  auto flat_here = [&](double at_t) -> bool {
    if (options.force_rk4) return false;
    const int seg = profile.segment_at(at_t);
    return at_t >=
           profile.segment_settle_time_ns(seg, options.flat_tol_rel) - 1e-12;
  };

  auto advance_to = [&](double target) {
    while (t < target - 1e-12) {
      while (next_break < breaks.size() && breaks[next_break] <= t + 1e-12) {
        ++next_break;
      }
      const double stop = (next_break < breaks.size() &&
                           breaks[next_break] < target - 1e-12)
                              ? breaks[next_break]
                              : target;
      const double span = stop - t;
      if (flat_here(t)) {
        const double k = profile.segment_asymptote(profile.segment_at(t));
        state = cache.get(k, span) * state;
      } else {
        // Explicit stepping must resolve the fastest rate present; the cap
        // shrinks below dt_max when the pump outruns it.
        const double rate_scale =
            (profile.k_max() + params.k_r +
             std::max(params.gamma0, params.gamma1) + params.kappa_sum() +
             params.k_sl_0to1 + params.k_sl_1to0) *
            kNsToS;
        const double h_cap =
            std::min(options.dt_max_ns,
                     rate_scale > 0.0 ? 0.1 / rate_scale : options.dt_max_ns);
        const int n = std::max(1, static_cast<int>(std::ceil(span / h_cap)));
        const double h = span / n;
        for (int i = 0; i < n; ++i) {
          state = rk4_step(state, m_dark_ns, profile, t + i * h, h);
        }
      }
      t = stop;
    }
    t = target;
  };

  auto record = [&](Trajectory& out) {
    Populations p = Populations::from_vector(state);
    double* comps[5] = {&p.gs0, &p.gs1, &p.es0, &p.es1, &p.is};
    for (double* c : comps) {
      if (*c < 0.0) {
        if (*c < -1e-9) {
          std::ostringstream os;
          os << "population went negative (" << *c << ") at t = " << t
             << " ns; integrator step too coarse";
          throw ParameterError(os.str());
        }
        *c = 0.0;
        ++clamp_count;
      }
    }
    out.push(t, p, params.k_r * (p.es0 + p.es1) * options.collection_efficiency);
  };

  Trajectory traj;
  record(traj);
  const auto n_samples =
      static_cast<long>(std::floor((t1_ns - t0_ns) / dt_sample_ns + 1e-9));
  for (long i = 1; i <= n_samples; ++i) {
    advance_to(t0_ns + i * dt_sample_ns);
    record(traj);
  }
  if (traj.t_ns.back() < t1_ns - 1e-9) {
    advance_to(t1_ns);
    record(traj);
  }
  traj.clamped_negative = clamp_count;
  return traj;
}

Populations mw_mix(const Populations& pops, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError("mixing fraction must lie in [0, 1], got " +
                         std::to_string(p));
  }
  Populations out = pops;
  out.gs0 = (1.0 - p) * pops.gs0 + p * pops.gs1;
  out.gs1 = p * pops.gs0 + (1.0 - p) * pops.gs1;
  return out;
}

double rabi_mixing_fraction(double tau_mw_ns, double rabi_period_ns,
                            double t2rho_ns) {
  if (!(rabi_period_ns > 0.0)) throw ParameterError("rabi period must be > 0");
  if (!(t2rho_ns > 0.0)) throw ParameterError("t2rho must be > 0");
  if (!(tau_mw_ns >= 0.0)) throw ParameterError("tau_mw must be >= 0");
  const double damping = std::exp(-tau_mw_ns / t2rho_ns);
  const double phase = 2.0 * M_PI * tau_mw_ns / rabi_period_ns;
  return 0.5 * (1.0 - damping * std::cos(phase));
}

Trajectory slice_trajectory(const Trajectory& traj, double t0_ns, double t1_ns,
                            bool rebase_to_zero) {
  Trajectory out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double t = traj.t_ns[i];
    if (t < t0_ns - 1e-9 || t > t1_ns + 1e-9) continue;
    out.push(rebase_to_zero ? t - t0_ns : t, traj.pops[i], traj.pl[i]);
  }
  out.clamped_negative = traj.clamped_negative;
  return out;
}

void append_trajectory(Trajectory& dst, const Trajectory& tail) {
  for (std::size_t i = 0; i < tail.size(); ++i) {
    if (!dst.t_ns.empty() && tail.t_ns[i] <= dst.t_ns.back() + 1e-12) continue;
    dst.push(tail.t_ns[i], tail.pops[i], tail.pl[i]);
  }
  dst.clamped_negative += tail.clamped_negative;
}

}  // namespace spinshelve
