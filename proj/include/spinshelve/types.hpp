#pragma once

// Domain types for the optical cycle of an optically pumped triplet spin
// defect: a spin-split ground state (gs0, gs1), a spin-split excited state
// (es0, es1) and one metastable intermediate shelving state (is). The
// m_s = +1 and m_s = -1 sub-manifolds are merged, so index "1" always means
// the combined manifold. Rates are s^-1, times are ns, frequencies are GHz
// unless a name says otherwise.

#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace spinshelve {

using Matrix5 = Eigen::Matrix<double, 5, 5>;
using Vector5 = Eigen::Matrix<double, 5, 1>;

inline constexpr double kNsToS = 1e-9;

// Component order of every state vector, generator matrix and trajectory.
enum Level : int { kGs0 = 0, kGs1 = 1, kEs0 = 2, kEs1 = 3, kIs = 4 };

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateSteadyStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a trajectory never meets a threshold; carries the closest
// approach so callers can report how near the miss was.
struct NotReachedError : std::runtime_error {
  NotReachedError(const std::string& what, double closest)
      : std::runtime_error(what), closest_approach(closest) {}
  double closest_approach;
};

// The six model rates plus the ground-state spin-lattice pair.
struct RateParams {
  double k_r = 0.0;     // radiative decay ES -> GS, spin conserving
  double gamma0 = 0.0;  // ISC ES(m_s=0) -> IS
  double gamma1 = 0.0;  // ISC ES(m_s=+-1) -> IS
  double kappa0 = 0.0;  // IS -> GS(m_s=0)
  double kappa1 = 0.0;  // IS -> GS(m_s=+-1)
  double k_sl_0to1 = 0.0;  // GS spin-lattice relaxation m_s=0 -> +-1
  double k_sl_1to0 = 0.0;  // GS spin-lattice relaxation m_s=+-1 -> 0

  void validate() const;  // throws ParameterError on any negative rate

  double kappa_sum() const { return kappa0 + kappa1; }

  // Intermediate-state lifetime 1/(kappa0+kappa1), in ns.
  double t_is_ns() const;

  // Spin-lattice relaxation time 1/(k_sl_0to1+k_sl_1to0), in ns; +inf if
  // both rates are zero.
  double t1_ns() const;

  // gamma0 < gamma1 and kappa0 > kappa1. Violations are allowed (tests use
  // symmetric rates) but worth a warning when loading user configs.
  bool in_physical_regime() const { return gamma0 < gamma1 && kappa0 > kappa1; }
};

// Occupation fractions of the five levels. Normalized to the total
// population: components in [0,1], summing to 1.
struct Populations {
  double gs0 = 0.0;
  double gs1 = 0.0;
  double es0 = 0.0;
  double es1 = 0.0;
  double is = 0.0;

  double sum() const { return gs0 + gs1 + es0 + es1 + is; }

  Vector5 to_vector() const;
  static Populations from_vector(const Vector5& v);

  // Checks components in [-tol, 1+tol] and |sum-1| <= sum_tol.
  bool is_normalized(double sum_tol = 1e-9, double comp_tol = 1e-9) const;
  void assert_normalized(double sum_tol = 1e-9) const;  // throws ParameterError
};

struct SpinSystemConfig {
  RateParams rates;
  double d_gs_ghz = 3.49;  // GS zero-field splitting
  double d_es_ghz = 2.09;  // ES zero-field splitting
  // Hyperfine coupling to the nearest-neighbor nitrogen nuclei. There is
  // deliberately no default; spectrum synthesis refuses to run without it.
  std::optional<double> hyperfine_a_mhz;
  double thermal_ratio = 2.0;  // equilibrium m_s=+-1 : m_s=0 population ratio
  double temperature_label_k = 300.0;  // metadata only

  void validate() const;
};

}  // namespace spinshelve
