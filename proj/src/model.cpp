#include "spinshelve/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace spinshelve {

namespace {

void require_nonnegative(double value, const char* name) {
  if (!(value >= 0.0)) {  // catches NaN as well
    throw ParameterError(std::string(name) + " must be >= 0, got " +
                         std::to_string(value));
  }
}

}  // namespace

void RateParams::validate() const {
  require_nonnegative(k_r, "k_r");
  require_nonnegative(gamma0, "gamma0");
  require_nonnegative(gamma1, "gamma1");
  require_nonnegative(kappa0, "kappa0");
  require_nonnegative(kappa1, "kappa1");
  require_nonnegative(k_sl_0to1, "k_sl_0to1");
  require_nonnegative(k_sl_1to0, "k_sl_1to0");
}

double RateParams::t_is_ns() const {
  const double ks = kappa_sum();
  if (ks <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / ks / kNsToS;
}

double RateParams::t1_ns() const {
  const double k = k_sl_0to1 + k_sl_1to0;
  if (k <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / k / kNsToS;
}

Vector5 Populations::to_vector() const {
  Vector5 v;
  v << gs0, gs1, es0, es1, is;
  return v;
}

Populations Populations::from_vector(const Vector5& v) {
  return Populations{v[kGs0], v[kGs1], v[kEs0], v[kEs1], v[kIs]};
}

bool Populations::is_normalized(double sum_tol, double comp_tol) const {
  const double comps[5] = {gs0, gs1, es0, es1, is};
  for (double c : comps) {
    if (!(c >= -comp_tol && c <= 1.0 + comp_tol)) return false;
  }
  return std::abs(sum() - 1.0) <= sum_tol;
}

void Populations::assert_normalized(double sum_tol) const {
  if (!is_normalized(sum_tol)) {
    std::ostringstream os;
    os << "populations not normalized: (" << gs0 << ", " << gs1 << ", " << es0
       << ", " << es1 << ", " << is << "), sum " << sum();
    throw ParameterError(os.str());
  }
}

void SpinSystemConfig::validate() const {
  rates.validate();
  if (!(d_gs_ghz > 0.0)) throw ParameterError("D_gs must be > 0");
  if (!(d_es_ghz > 0.0)) throw ParameterError("D_es must be > 0");
  if (!(thermal_ratio > 0.0)) throw ParameterError("thermal_ratio must be > 0");
}

Matrix5 rate_matrix(const RateParams& params, double k_e) {
  params.validate();
  require_nonnegative(k_e, "k_e");

  Matrix5 m = Matrix5::Zero();
  auto flow = [&m](int from, int to, double rate) {
    m(to, from) += rate;
    m(from, from) -= rate;
  };
  flow(kGs0, kEs0, k_e);
  flow(kGs1, kEs1, k_e);
  flow(kEs0, kGs0, params.k_r);
  flow(kEs1, kGs1, params.k_r);
  flow(kEs0, kIs, params.gamma0);
  flow(kEs1, kIs, params.gamma1);
  flow(kIs, kGs0, params.kappa0);
  flow(kIs, kGs1, params.kappa1);
  flow(kGs0, kGs1, params.k_sl_0to1);
  flow(kGs1, kGs0, params.k_sl_1to0);
  return m;
}

Populations thermal_populations(double thermal_ratio) {
  if (!(thermal_ratio > 0.0)) {
    throw ParameterError("thermal_ratio must be > 0, got " +
                         std::to_string(thermal_ratio));
  }
  Populations p;
  p.gs0 = 1.0 / (1.0 + thermal_ratio);
  p.gs1 = thermal_ratio / (1.0 + thermal_ratio);
  return p;
}

Populations steady_state(const RateParams& params, double k_e) {
  const Matrix5 m = rate_matrix(params, k_e);

  Eigen::FullPivLU<Matrix5> lu(m);
  lu.setThreshold(1e-12);  // relative to the largest pivot
  const auto dim = lu.dimensionOfKernel();
  if (dim != 1) {
    std::ostringstream os;
    os << "degenerate steady state: rate matrix has a " << dim
       << "-dimensional null space";
    if (k_e == 0.0 && params.k_sl_0to1 == 0.0 && params.k_sl_1to0 == 0.0) {
      os << " (k_e = 0 with zero spin-lattice rates disconnects the GS_0 and "
            "GS_1 subspaces)";
    }
    throw DegenerateSteadyStateError(os.str());
  }

  Eigen::Matrix<double, 5, Eigen::Dynamic> kernel = lu.kernel();
  Vector5 v = kernel.col(0);
  const double total = v.sum();
  if (std::abs(total) < 1e-300) {
    throw DegenerateSteadyStateError(
        "degenerate steady state: null vector has zero total population");
  }
  v /= total;
  // The physical steady state of a connected rate network is nonnegative;
  // clip rounding noise and reject anything worse.
  for (int i = 0; i < 5; ++i) {
    if (v[i] < 0.0) {
      if (v[i] < -1e-9) {
        throw DegenerateSteadyStateError(
            "steady-state solve produced a negative component");
      }
      v[i] = 0.0;
    }
  }
  v /= v.sum();
  return Populations::from_vector(v);
}

double weighted_isc_rate(const RateParams& params, double k_e) {
  const Populations ss = steady_state(params, k_e);
  const double es_total = ss.es0 + ss.es1;
  if (es_total <= 0.0) {
    throw ParameterError("weighted ISC rate undefined: empty excited state");
  }
  return (params.gamma0 * ss.es0 + params.gamma1 * ss.es1) / es_total;
}

double es_lifetime_ns(const RateParams& params, double k_e) {
  return 1.0 / (params.k_r + weighted_isc_rate(params, k_e)) / kNsToS;
}

double high_power_is_fraction(const RateParams& params) {
  params.validate();
  if (params.gamma0 <= 0.0 || params.gamma1 <= 0.0) {
    throw ParameterError("high-power limit requires positive ISC rates");
  }
  // S = kappa0/gamma0 + kappa1/gamma1; gammabar = kappa_sum/S, so
  // gammabar*T_IS = 1/S and the limit is 1/(1+S).
  const double s =
      params.kappa0 / params.gamma0 + params.kappa1 / params.gamma1;
  return 1.0 / (1.0 + s);
}

RateParams calibrate_rates(const CalibrationTargets& targets,
                           const CalibrationPriors& priors) {
  if (!(targets.t_is_ns > 0.0) || !(targets.tau_es_ns > 0.0) ||
      !(targets.k_exp > 0.0)) {
    throw ParameterError("calibration targets must be positive");
  }
  if (!(targets.is_fraction > 0.0 && targets.is_fraction < 1.0)) {
    throw ParameterError("is_fraction target must lie in (0, 1)");
  }
  if (!(priors.kappa_ratio > 0.0) || !(priors.gamma_ratio > 0.0)) {
    throw ParameterError("calibration priors must be positive");
  }

  const double kappa_sum = 1.0 / (targets.t_is_ns * kNsToS);
  const double tau_es_s = targets.tau_es_ns * kNsToS;

  RateParams p;
  p.kappa0 = kappa_sum * priors.kappa_ratio / (1.0 + priors.kappa_ratio);
  p.kappa1 = kappa_sum / (1.0 + priors.kappa_ratio);

  // Shelving ratio S fixed by the target IS occupation at k_exp.
  const double s = (1.0 / targets.is_fraction - 1.0) /
                   (1.0 + 1.0 / (targets.k_exp * tau_es_s));
  const double gammabar = kappa_sum / s;
  const double k_r = 1.0 / tau_es_s - gammabar;
  if (k_r < 0.0) {
    // k_r = 0 bounds the achievable IS occupation for the given lifetimes.
    const double s_min = kappa_sum * tau_es_s;
    const double f_max =
        1.0 / (1.0 + s_min * (1.0 + 1.0 / (targets.k_exp * tau_es_s)));
    std::ostringstream os;
    os << "infeasible calibration targets: is_fraction " << targets.is_fraction
       << " at k_exp " << targets.k_exp << " s^-1 requires k_r = " << k_r
       << " s^-1 < 0 given T_IS = " << targets.t_is_ns << " ns and tau_es = "
       << targets.tau_es_ns << " ns; maximum achievable is_fraction is "
       << f_max << " (residual " << targets.is_fraction - f_max << ")";
    throw CalibrationError(os.str());
  }
  p.k_r = k_r;
  p.gamma0 = (p.kappa0 + p.kappa1 / priors.gamma_ratio) / s;
  p.gamma1 = priors.gamma_ratio * p.gamma0;

  // Verify the contract on the assembled set before handing it out.
  const Populations ss = steady_state(p, targets.k_exp);
  const double tau_check = es_lifetime_ns(p, targets.k_exp);
  if (std::abs(ss.is - targets.is_fraction) > 1e-3 ||
      std::abs(tau_check - targets.tau_es_ns) > 1e-6 * targets.tau_es_ns) {
    std::ostringstream os;
    os << "calibration verification failed: n_is = " << ss.is << " (target "
       << targets.is_fraction << "), tau_es = " << tau_check << " ns (target "
       << targets.tau_es_ns << " ns)";
    throw CalibrationError(os.str());
  }
  return p;
}

RateParams with_spin_lattice(RateParams params, double t1_ns,
                             double thermal_ratio) {
  if (!(t1_ns > 0.0)) throw ParameterError("T1 must be > 0");
  if (!(thermal_ratio > 0.0)) throw ParameterError("thermal_ratio must be > 0");
  const double total = 1.0 / (t1_ns * kNsToS);
  params.k_sl_0to1 = total * thermal_ratio / (1.0 + thermal_ratio);
  params.k_sl_1to0 = total / (1.0 + thermal_ratio);
  return params;
}

}  // namespace spinshelve
