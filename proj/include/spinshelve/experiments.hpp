#pragma once

// Experiment orchestrators: each wires the pulse DSL, the propagator, the
// detector and the fit engine into one figure-style data pipeline.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "spinshelve/config.hpp"
#include "spinshelve/detector.hpp"
#include "spinshelve/fitting.hpp"
#include "spinshelve/kinetics.hpp"
#include "spinshelve/pulseseq.hpp"
#include "spinshelve/types.hpp"

namespace spinshelve {

struct NamedFit {
  std::string name;
  std::string model;
  FitResult result;
};

struct ExperimentReport {
  std::string protocol;
  std::string swept_variable;
  std::vector<double> sweep_values;
  // column name -> one value per sweep point
  std::map<std::string, std::vector<double>> metrics;
  std::vector<NamedFit> fits;
  std::vector<std::string> notes;
  std::string config_hash;
  std::uint64_t seed = 0;

  const FitResult* find_fit(const std::string& name) const;
  std::string to_json() const;
};

// The pulse programs behind the orchestrators, keyed fig2_recovery,
// fig3_init, fig4a_rabi, fig4c_t1, composite_train. The same texts ship as
// sequences/*.pseq.
const std::map<std::string, std::string>& protocol_sequences();

// PL-recovery protocol (init pulse, dark tau, read-out): overshoot ratio per
// (pump level, tau) and an exponential-recovery fit per level whose time
// constant estimates the shelving-state lifetime.
ExperimentReport pl_recovery_scan(const ExperimentConfig& config,
                                  const std::vector<double>& taus_ns,
                                  const std::vector<double>& k_e_levels);

// First time the ground-state polarization fraction gs0/(gs0+gs1) comes
// within 5% of its value in steady_state(params, k_e), with linear
// interpolation between samples. Throws NotReachedError (carrying the
// closest approach) when the trajectory never enters the band.
double t95_time(const Trajectory& traj, const RateParams& params, double k_e);

// Pump-rate sweep of the settling time plus a power-law fit over the
// sub-range k_e <= 1e11 s^-1.
ExperimentReport initialization_scan(const ExperimentConfig& config,
                                     const std::vector<double>& k_e_grid);

// Rabi oscillations vs microwave pulse length for each laser-off buffer;
// damped-sine amplitude per buffer and an exponential-recovery fit of
// amplitude vs buffer.
ExperimentReport rabi_buffer_scan(const ExperimentConfig& config,
                                  const std::vector<double>& buffers_ns,
                                  const std::vector<double>& mw_durations_ns,
                                  std::pair<double, double> window_ns);

// Spin-lattice relaxation protocol: contrast between the pi-pulse branch and
// the no-pulse reference vs dark time, fitted on the shelving-state scale
// (tau <= 200 ns) and on the microsecond scale.
ExperimentReport t1_scan(const ExperimentConfig& config,
                         const std::vector<double>& taus_ns);

// Distribution of the total nuclear spin projection for n_nuclei spins of
// magnitude spin: the (2*spin+1)-point uniform distribution convolved
// n_nuclei times, normalized.
std::vector<double> hyperfine_weights(int n_nuclei, double spin);

// Two hyperfine-split dip groups at D_gs -+ gamma_e*B. linewidth is the
// Gaussian FWHM of a single line; depth scales the summed dip of one group.
std::vector<double> odmr_spectrum(const SpinSystemConfig& system,
                                  const std::vector<double>& f_grid_ghz,
                                  double b_field_mt, double linewidth_mhz,
                                  double depth);

ExperimentReport odmr_spectrum_report(const ExperimentConfig& config,
                                      const std::vector<double>& f_grid_ghz,
                                      double b_field_mt, double linewidth_mhz,
                                      double depth);

// Default sweep grids (the CLI uses these when no overrides are given).
std::vector<double> default_fig2_taus();        // 2..150 ns step 2
std::vector<double> default_power_fractions();  // 0.1x .. 1x of k_exp
std::vector<double> default_fig3_grid();        // 1e6..1e13 s^-1, log
std::vector<double> default_fig4_buffers();     // 5..250 ns step 5
std::vector<double> default_fig4_mw_durations();
std::vector<double> default_t1_taus();          // 1 ns..100 us, log

// Generic timeline playback used by the simulate command: laser channel
// drives the pump, mw on-blocks apply instantaneous population exchanges
// with p = rabi_mixing_fraction(block length).
Trajectory simulate_timeline(const Timeline& timeline,
                             const ExperimentConfig& config, double k_max,
                             double dt_sample_ns);

// report.json plus the per-figure CSV for the protocol.
void write_experiment_files(const ExperimentReport& report,
                            const std::string& out_dir);

}  // namespace spinshelve
