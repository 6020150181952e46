#pragma once

// Time propagation of the 5-level populations under piecewise-constant and
// ramped excitation, plus the microwave population operator.

#include <cstdint>
#include <vector>

#include "spinshelve/types.hpp"

namespace spinshelve {

struct LaserEdge {
  double t_ns = 0.0;
  bool on = false;
};

// Laser excitation rate k_e(t): exponential approach to k_max after an
// on-edge and to zero after an off-edge, continuous across edges that arrive
// before the previous flank has settled. t_rise = 0 (or t_fall = 0) gives an
// ideal step.
class LaserProfile {
 public:
  LaserProfile(double k_max, double t_rise_ns, double t_fall_ns,
               std::vector<LaserEdge> edges);

  double at(double t_ns) const;  // k_e at time t

  double k_max() const { return k_max_; }
  double t_rise_ns() const { return t_rise_ns_; }
  double t_fall_ns() const { return t_fall_ns_; }
  const std::vector<LaserEdge>& edges() const { return edges_; }

  // Index of the active edge segment at time t (-1 before the first edge).
  int segment_at(double t_ns) const;
  // Asymptotic rate of segment i (k_max while on, 0 while off).
  double segment_asymptote(int segment) const;
  // Time at which segment i is within tol*k_max of its asymptote.
  double segment_settle_time_ns(int segment, double tol) const;

 private:
  double k_max_;
  double t_rise_ns_;
  double t_fall_ns_;
  std::vector<LaserEdge> edges_;
  std::vector<double> value_at_edge_;  // k_e just as each edge fires
};

// Time-sampled populations and photoluminescence intensity
// pl = k_r * (es0 + es1) * collection_efficiency.
struct Trajectory {
  std::vector<double> t_ns;
  std::vector<Populations> pops;
  std::vector<double> pl;
  long clamped_negative = 0;  // samples with sub-tolerance negative components

  std::size_t size() const { return t_ns.size(); }
  void push(double t, const Populations& p, double pl_value);
  void validate(double sum_tol = 1e-9) const;
};

struct IntegratorOptions {
  double dt_max_ns = 0.05;   // internal RK4 step cap inside laser flanks
  bool force_rk4 = false;    // bypass the matrix-exponential fast path
  double flat_tol_rel = 1e-6;  // k_e flatness threshold for the fast path
  double collection_efficiency = 1.0;
};

// Exact propagation of the constant-coefficient system over dt via the
// matrix exponential (eigendecomposition, with a scaling-and-squaring
// fallback when the eigenvector basis is ill-conditioned).
Populations propagate_const(const Populations& pops, const RateParams& params,
                            double k_e, double dt_ns);

// exp(M * dt) for the generator at fixed k_e; exposed so steppers on a
// uniform grid can reuse one propagator.
Matrix5 const_propagator(const RateParams& params, double k_e, double dt_ns);

// Matrix exponential of a 5x5 generator given in 1/ns units.
Matrix5 expm(const Matrix5& m);

inline double k_e_at(const LaserProfile& profile, double t_ns) {
  return profile.at(t_ns);
}

// Integrates from t0 to t1 sampling every dt_sample ns (t1 is always
// included as the final sample). Laser flanks are integrated with RK4 at
// steps <= dt_max_ns; spans where k_e is settled to within flat_tol_rel of
// its asymptote use the exact constant-rate propagator.
Trajectory propagate_profile(const Populations& pops, const RateParams& params,
                             const LaserProfile& profile, double t0_ns,
                             double t1_ns, double dt_sample_ns,
                             const IntegratorOptions& options = {});

// Microwave population exchange between the ground-state spin manifolds:
// gs0' = (1-p) gs0 + p gs1, gs1' = p gs0 + (1-p) gs1.
Populations mw_mix(const Populations& pops, double p);

// Mixing fraction of a resonant microwave pulse of length tau_mw under
// damped Rabi driving: p = (1 - exp(-tau/t2rho) * cos(2 pi tau/period)) / 2.
double rabi_mixing_fraction(double tau_mw_ns, double rabi_period_ns,
                            double t2rho_ns);

// Trajectory utilities used by the experiment orchestrators.
Trajectory slice_trajectory(const Trajectory& traj, double t0_ns, double t1_ns,
                            bool rebase_to_zero);
void append_trajectory(Trajectory& dst, const Trajectory& tail);

}  // namespace spinshelve
