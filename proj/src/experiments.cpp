#include "spinshelve/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "spinshelve/io.hpp"
#include "spinshelve/model.hpp"
#include "spinshelve/parallel.hpp"
#include "spinshelve/rng.hpp"

namespace spinshelve {

namespace {

constexpr double kGammaEGhzPerT = 28.024;  // electron gyromagnetic ratio

const char* kFig2Recovery = R"(# PL recovery: init pulse, dark period, read-out pulse
channels laser
sweep tau = 2ns .. 150ns step 2ns
block laser on 3000ns
block laser off tau
block laser on 3000ns
)";

const char* kFig3Init = R"(# population evolution under a long pump pulse
channels laser
sweep t_on = {6000ns}
block laser off 1ns
block laser on t_on
)";

const char* kFig4aRabi = R"(# Rabi with buffer: the microwave fires right at read-out
channels laser, mw, gate
sweep buffer = 5ns .. 150ns step 5ns
sweep tau_mw = 4ns .. 200ns step 4ns
sweep win = {60ns}
block laser on 3000ns
block laser off buffer
block laser on 3000ns
block mw off 3000ns
block mw off buffer
block mw on tau_mw
block gate off 3000ns
block gate off buffer
block gate on win
)";

const char* kFig4cT1 = R"(# spin-lattice relaxation with a pi-pulse reference branch
channels laser, mw, gate
sweep tau = {1000ns}
sweep pi_len = {40ns}
sweep win = {60ns}
block laser on 3000ns
block laser off tau
block laser on 3000ns
block mw off 3000ns
block mw off tau
block mw on pi_len
block gate off 3000ns
block gate off tau
block gate on win
)";

const char* kCompositeTrain = R"(# duty-cycle train: every read-out doubles as the next init pulse
channels laser
sweep tau = {150ns}
repeat 8 {
  block laser on 3000ns
  block laser off tau
}
)";

std::string format_rate(double k_e) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", k_e);
  return std::string(buf);
}

LaserProfile profile_from_timeline(const Timeline& timeline, double k_max,
                                   const ExperimentConfig& cfg) {
  auto it = timeline.channels.find("laser");
  if (it == timeline.channels.end()) {
    throw ParameterError("timeline has no 'laser' channel");
  }
  std::vector<LaserEdge> edges;
  edges.reserve(it->second.size());
  for (const auto& e : it->second) edges.push_back({e.t_ns, e.on});
  return LaserProfile(k_max, cfg.laser_t_rise_ns, cfg.laser_t_fall_ns,
                      std::move(edges));
}

struct MwEvent {
  double t_ns = 0.0;
  double duration_ns = 0.0;
};

std::vector<MwEvent> mw_events(const Timeline& timeline) {
  std::vector<MwEvent> events;
  auto it = timeline.channels.find("mw");
  if (it == timeline.channels.end()) return events;
  const auto& edges = it->second;
  for (std::size_t i = 0; i + 1 < edges.size(); i += 2) {
    events.push_back({edges[i].t_ns, edges[i + 1].t_ns - edges[i].t_ns});
  }
  return events;
}

Populations evolve_span(const RateParams& rates, const LaserProfile& prof,
                        const Populations& start, double t0, double t1,
                        const IntegratorOptions& opts) {
  if (t1 <= t0) return start;
  const Trajectory traj =
      propagate_profile(start, rates, prof, t0, t1, t1 - t0, opts);
  return traj.pops.back();
}

// Expected or shot-sampled counts in [0, window] of the read-out that starts
// at t_on. seed is consumed only in noisy mode.
double readout_window_counts(const RateParams& rates, const LaserProfile& prof,
                             const Populations& at_on, double t_on,
                             double window_ns, const ExperimentConfig& cfg,
                             std::uint64_t seed) {
  const double pad = 2.0 * cfg.bin_width_ns;
  const double dt = std::min(0.5, cfg.bin_width_ns / 2.0);
  const Trajectory traj =
      propagate_profile(at_on, rates, prof, t_on, t_on + window_ns + pad, dt,
                        cfg.integrator_options());
  const Trajectory slice =
      slice_trajectory(traj, t_on, t_on + window_ns + pad, true);
  TcspcHistogram hist = expected_counts(
      slice, cfg.bin_width_ns, cfg.noisy ? cfg.shots : 1, 1.0);
  if (cfg.noisy) hist = sample_counts(hist, seed);
  return integrate_window(hist, 0.0, window_ns);
}

void add_fit(ExperimentReport& report, const std::string& name,
             const FitModel& model, const FitResult& result) {
  report.fits.push_back({name, model.name(), result});
}

// Windowed counts of the fully equilibrated read-out, the tau-independent
// normalization for pulsed contrast. Reading the window mid-pulse would give
// the same number; this takes it directly from the lit steady state.
double steady_reference_counts(const ExperimentConfig& cfg, double window_ns,
                               std::uint64_t seed) {
  const RateParams& rates = cfg.system.rates;
  const LaserProfile always_on(cfg.k_exp, cfg.laser_t_rise_ns,
                               cfg.laser_t_fall_ns, {{0.0, true}});
  const Populations ss = steady_state(rates, cfg.k_exp);
  return readout_window_counts(rates, always_on, ss, 1000.0, window_ns, cfg,
                               seed);
}

// Read-out counts for a fully thermalized ground state mixed with fraction p,
// through the same turn-on flank the swept branches see. This is the infinite
// dark-time limit the spin-lattice relaxation drives everything toward.
double thermal_branch_counts(const ExperimentConfig& cfg, double p,
                             double window_ns, std::uint64_t seed) {
  const RateParams& rates = cfg.system.rates;
  const LaserProfile readout(cfg.k_exp, cfg.laser_t_rise_ns,
                             cfg.laser_t_fall_ns, {{0.0, true}});
  const Populations th =
      mw_mix(thermal_populations(cfg.system.thermal_ratio), p);
  return readout_window_counts(rates, readout, th, 0.0, window_ns, cfg, seed);
}

// Inverts the ground-state spin-lattice relaxation, which drives the signal
// toward its thermal value with time constant t1: given y(t) = y_th +
// (y0(t) - y_th) exp(-t/t1), returns y0(t).
double undo_spin_lattice(double y, double t_ns, double t1_ns, double y_th) {
  if (!std::isfinite(t1_ns)) return y;
  return (y - y_th) * std::exp(t_ns / t1_ns) + y_th;
}

}  // namespace

const FitResult* ExperimentReport::find_fit(const std::string& name) const {
  for (const auto& f : fits) {
    if (f.name == name) return &f.result;
  }
  return nullptr;
}

std::string ExperimentReport::to_json() const {
  nlohmann::ordered_json j;
  j["protocol"] = protocol;
  j["swept_variable"] = swept_variable;
  j["sweep_values"] = sweep_values;
  nlohmann::ordered_json m;
  for (const auto& [name, values] : metrics) m[name] = values;
  j["metrics"] = std::move(m);
  nlohmann::ordered_json fits_json = nlohmann::ordered_json::array();
  for (const auto& f : fits) {
    const FitModel model = FitModel::from_name(f.model);
    nlohmann::ordered_json fj;
    fj["name"] = f.name;
    fj["model"] = f.model;
    fj["formula"] = model.formula();
    nlohmann::ordered_json params;
    for (int i = 0; i < model.n_params(); ++i) {
      params[model.param_names()[static_cast<std::size_t>(i)]] =
          f.result.params[static_cast<std::size_t>(i)];
    }
    fj["params"] = std::move(params);
    fj["uncertainties"] = f.result.uncertainties;
    fj["chi2"] = f.result.chi2;
    fj["reduced_chi2"] = f.result.reduced_chi2;
    fj["iterations"] = f.result.iterations;
    fj["converged"] = f.result.converged;
    fj["message"] = f.result.message;
    fits_json.push_back(std::move(fj));
  }
  j["fits"] = std::move(fits_json);
  j["notes"] = notes;
  j["provenance"] = {{"config_hash", config_hash}, {"seed", seed}};
  return j.dump(2) + "\n";
}

const std::map<std::string, std::string>& protocol_sequences() {
  static const std::map<std::string, std::string> sequences = {
      {"fig2_recovery", kFig2Recovery},
      {"fig3_init", kFig3Init},
      {"fig4a_rabi", kFig4aRabi},
      {"fig4c_t1", kFig4cT1},
      {"composite_train", kCompositeTrain},
  };
  return sequences;
}

ExperimentReport pl_recovery_scan(const ExperimentConfig& config,
                                  const std::vector<double>& taus_ns,
                                  const std::vector<double>& k_e_levels) {
  if (taus_ns.empty()) throw ParameterError("tau sweep must not be empty");
  for (double tau : taus_ns) {
    if (!(tau > 0.0)) throw ParameterError("dark periods must be > 0");
  }
  if (k_e_levels.empty()) throw ParameterError("need at least one pump level");

  const SequenceSpec spec = parse_sequence(protocol_sequences().at("fig2_recovery"));
  const RateParams& rates = config.system.rates;
  const auto n_tau = taus_ns.size();
  const auto n_lvl = k_e_levels.size();

  std::vector<std::vector<double>> ratios(n_lvl,
                                          std::vector<double>(n_tau, 0.0));
  for_each_index(
      static_cast<int>(n_tau * n_lvl), config.jobs, [&](int flat) {
        const std::size_t li = static_cast<std::size_t>(flat) / n_tau;
        const std::size_t ti = static_cast<std::size_t>(flat) % n_tau;
        const Timeline tl =
            compile_sequence(spec, {{"tau", taus_ns[ti]}});
        const LaserProfile prof =
            profile_from_timeline(tl, k_e_levels[li], config);
        const double t_on = 3000.0 + taus_ns[ti];
        const Populations at_on =
            evolve_span(rates, prof, thermal_populations(config.system.thermal_ratio),
                        0.0, t_on, config.integrator_options());
        const double dt = std::min(0.5, config.bin_width_ns / 2.0);
        const Trajectory readout =
            propagate_profile(at_on, rates, prof, t_on, t_on + 3000.0, dt,
                              config.integrator_options());
        const Trajectory slice =
            slice_trajectory(readout, t_on, t_on + 3000.0, true);
        TcspcHistogram hist = expected_counts(slice, config.bin_width_ns,
                                              config.noisy ? config.shots : 1,
                                              1.0);
        if (config.noisy) {
          hist = sample_counts(
              hist, derive_seed(config.seed, static_cast<std::uint64_t>(flat)));
        }
        ratios[li][ti] = overshoot_ratio(hist, config.steady_window_start_ns,
                                         config.steady_window_end_ns,
                                         config.median_filter);
      });

  ExperimentReport report;
  report.protocol = "pl-recovery";
  report.swept_variable = "tau_ns";
  report.sweep_values = taus_ns;
  report.config_hash = config.config_hash;
  report.seed = config.seed;
  for (std::size_t li = 0; li < n_lvl; ++li) {
    const std::string tag = "ke" + format_rate(k_e_levels[li]);
    report.metrics["overshoot_ratio_" + tag] = ratios[li];
    if (n_tau >= 4) {
      const FitModel model(ModelKind::kExpRecovery);
      const FitResult r = fit(model, taus_ns, ratios[li]);
      add_fit(report, "recovery_" + tag, model, r);
    } else {
      report.notes.push_back("no fit for " + tag +
                             ": need at least 4 dark periods");
    }
  }
  report.notes.push_back("pump levels (s^-1): " + [&] {
    std::string s;
    for (double k : k_e_levels) s += format_rate(k) + " ";
    return s;
  }());
  return report;
}

double t95_time(const Trajectory& traj, const RateParams& params, double k_e) {
  if (traj.size() < 2) throw ParameterError("trajectory too short for t95");
  const Populations ss = steady_state(params, k_e);
  const double target = ss.gs0 / (ss.gs0 + ss.gs1);
  const double band = 0.05 * std::abs(target);
  auto frac = [](const Populations& p) {
    const double gs = p.gs0 + p.gs1;
    if (gs <= 0.0) {
      throw ParameterError("empty ground state while evaluating t95");
    }
    return p.gs0 / gs;
  };
  double closest = std::abs(frac(traj.pops.front()) - target);
  if (closest <= band) return traj.t_ns.front();
  for (std::size_t i = 1; i < traj.size(); ++i) {
    const double d = std::abs(frac(traj.pops[i]) - target);
    if (d <= band) {
      const double dp = std::abs(frac(traj.pops[i - 1]) - target);
      const double f = (dp - band) / (dp - d);
      return traj.t_ns[i - 1] + f * (traj.t_ns[i] - traj.t_ns[i - 1]);
    }
    closest = std::min(closest, d);
  }
  std::ostringstream os;
  os << "population never reached the 95% band: closest approach " << closest
     << " vs band " << band;
  throw NotReachedError(os.str(), closest);
}

namespace {

double settle_scale_ns(const RateParams& r) {
  const double fast = 0.5 * (r.gamma0 + r.gamma1) + r.k_r + r.kappa_sum();
  return fast > 0.0 ? 1.0 / fast / kNsToS : 1.0;
}

}  // namespace

ExperimentReport initialization_scan(const ExperimentConfig& config,
                                     const std::vector<double>& k_e_grid) {
  if (k_e_grid.size() < 3) {
    throw ParameterError("initialization scan needs at least 3 pump rates");
  }
  const SequenceSpec spec = parse_sequence(protocol_sequences().at("fig3_init"));
  const RateParams& rates = config.system.rates;

  std::vector<double> t95(k_e_grid.size(), 0.0);
  for_each_index(
      static_cast<int>(k_e_grid.size()), config.jobs, [&](int idx) {
        const double k = k_e_grid[static_cast<std::size_t>(idx)];
        const double duration = std::max(
            {6.0 * std::log(20.0) / (k * kNsToS),
             60.0 * settle_scale_ns(rates), 100.0});
        const Timeline tl = compile_sequence(spec, {{"t_on", duration}});
        // Population-evolution figure: the source simulation drives an ideal
        // square pulse, so the flanks are switched off here.
        ExperimentConfig square = config;
        square.laser_t_rise_ns = 0.0;
        square.laser_t_fall_ns = 0.0;
        const LaserProfile prof = profile_from_timeline(tl, k, square);
        const double dt = std::clamp(duration / 8000.0, 0.002, 4.0);
        const Trajectory traj = propagate_profile(
            thermal_populations(config.system.thermal_ratio), rates, prof, 0.0,
            1.0 + duration, dt, config.integrator_options());
        // measured from the turn-on edge at t = 1 ns
        t95[static_cast<std::size_t>(idx)] = t95_time(traj, rates, k) - 1.0;
      });

  ExperimentReport report;
  report.protocol = "init-time";
  report.swept_variable = "k_e_per_s";
  report.sweep_values = k_e_grid;
  report.metrics["t95_ns"] = t95;
  report.config_hash = config.config_hash;
  report.seed = config.seed;

  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < k_e_grid.size(); ++i) {
    if (k_e_grid[i] <= 1e11) {
      xs.push_back(k_e_grid[i]);
      ys.push_back(t95[i]);
    }
  }
  if (xs.size() >= 4) {
    const FitModel model(ModelKind::kPowerLaw);
    add_fit(report, "power_law_below_1e11", model, fit(model, xs, ys));
  } else {
    report.notes.push_back(
        "insufficient points below 1e11 s^-1 for the power-law fit");
  }
  return report;
}

namespace {

struct RabiBranchCounts {
  double reference = 0.0;  // no microwave
  double half = 0.0;       // fully dephased pulse, the oscillation midline
};

}  // namespace

ExperimentReport rabi_buffer_scan(const ExperimentConfig& config,
                                  const std::vector<double>& buffers_ns,
                                  const std::vector<double>& mw_durations_ns,
                                  std::pair<double, double> window_ns) {
  if (buffers_ns.empty() || mw_durations_ns.empty()) {
    throw ParameterError("rabi scan sweeps must not be empty");
  }
  if (!(window_ns.second > window_ns.first) || window_ns.first < 0.0) {
    throw ParameterError("invalid integration window");
  }
  const SequenceSpec spec = parse_sequence(protocol_sequences().at("fig4a_rabi"));
  const RateParams& rates = config.system.rates;
  const double win = window_ns.second - window_ns.first;
  const auto n_buf = buffers_ns.size();
  const auto n_mw = mw_durations_ns.size();

  // Contrast here is the windowed count difference normalized to the steady
  // read-out level. Normalizing per buffer instead would fold the reference's
  // own recovery transient into A(buffer) and skew its time constant.
  const double steady_ref = steady_reference_counts(
      config, win, derive_seed(config.seed, n_buf * (n_mw + 2)));

  std::vector<double> amplitude(n_buf, 0.0);
  std::vector<FitResult> sin_fits(n_buf);
  for_each_index(static_cast<int>(n_buf), config.jobs, [&](int bi) {
    const double buffer = buffers_ns[static_cast<std::size_t>(bi)];
    const Timeline tl = compile_sequence(
        spec,
        {{"buffer", buffer}, {"tau_mw", mw_durations_ns[0]}, {"win", win}});
    const LaserProfile prof =
        profile_from_timeline(tl, config.k_exp, config);
    const auto events = mw_events(tl);
    const double t_mw = events.empty() ? 3000.0 + buffer : events[0].t_ns;
    const Populations at_mw = evolve_span(
        rates, prof, thermal_populations(config.system.thermal_ratio), 0.0,
        t_mw, config.integrator_options());

    // seeds: one stripe per buffer; branch 0 = reference, 1 = midline,
    // 2 + k = microwave pulse k
    const auto stripe =
        static_cast<std::uint64_t>(bi) * (n_mw + 2);
    auto counts_at = [&](double p, std::uint64_t branch) {
      return readout_window_counts(
          rates, prof, mw_mix(at_mw, p), t_mw + window_ns.first, win, config,
          derive_seed(config.seed, stripe + branch));
    };
    const RabiBranchCounts base{counts_at(0.0, 0), counts_at(0.5, 1)};
    const double midline = (base.half - base.reference) / steady_ref;

    std::vector<double> centered(n_mw, 0.0);
    for (std::size_t mi = 0; mi < n_mw; ++mi) {
      const double p = rabi_mixing_fraction(
          mw_durations_ns[mi], config.rabi_period_ns, config.rabi_t2rho_ns);
      const double c =
          (counts_at(p, 2 + mi) - base.reference) / steady_ref;
      centered[mi] = c - midline;
    }
    FitOptions opts;
    opts.multistart = true;
    opts.seed = config.seed;
    const FitModel model(ModelKind::kDampedSin);
    FitResult r = fit(model, mw_durations_ns, centered, {}, std::nullopt, opts);
    amplitude[static_cast<std::size_t>(bi)] = std::abs(r.params[0]);
    sin_fits[static_cast<std::size_t>(bi)] = std::move(r);
  });

  ExperimentReport report;
  report.protocol = "rabi-buffer";
  report.swept_variable = "buffer_ns";
  report.sweep_values = buffers_ns;
  report.metrics["rabi_amplitude"] = amplitude;
  report.config_hash = config.config_hash;
  report.seed = config.seed;
  for (std::size_t bi = 0; bi < n_buf; ++bi) {
    add_fit(report, "damped_sin_buffer" + format_double(buffers_ns[bi]),
            FitModel(ModelKind::kDampedSin), sin_fits[bi]);
  }
  // The manipulable polarization also relaxes toward its thermal value
  // during the buffer; invert that known spin-lattice drift (amplitude at
  // thermal polarization measured through the same read-out) before reading
  // the shelving time constant off the recovery curve.
  const double t1_ns = rates.t1_ns();
  std::vector<double> detrended = amplitude;
  if (std::isfinite(t1_ns)) {
    const auto th_base = n_buf * (n_mw + 2) + 1;
    const double w_th0 = thermal_branch_counts(
        config, 0.0, win, derive_seed(config.seed, th_base));
    const double w_th1 = thermal_branch_counts(
        config, 1.0, win, derive_seed(config.seed, th_base + 1));
    // thermal polarization points the other way, hence the sign
    const double a_th = -std::abs(w_th1 - w_th0) / (2.0 * steady_ref);
    for (std::size_t bi = 0; bi < n_buf; ++bi) {
      detrended[bi] =
          undo_spin_lattice(amplitude[bi], buffers_ns[bi], t1_ns, a_th);
    }
    report.metrics["rabi_amplitude_sl_corrected"] = detrended;
    report.notes.push_back(
        "amplitude_recovery fitted after inverting the spin-lattice drift "
        "toward the thermal-state amplitude, T1 from the configured rates");
  }
  if (n_buf >= 4) {
    const FitModel model(ModelKind::kExpRecovery);
    add_fit(report, "amplitude_recovery", model,
            fit(model, buffers_ns, detrended));
  } else {
    report.notes.push_back("need at least 4 buffers for the recovery fit");
  }
  report.notes.push_back(
      "contrast curves centered on the fully dephased (p = 1/2) branch and "
      "normalized to the steady read-out level");
  return report;
}

namespace {

double calibrate_pi_duration(const ExperimentConfig& config) {
  // argmax of the simulated Rabi contrast magnitude, read-out windowing
  // included, at a buffer long enough to drain the shelving state.
  const RateParams& rates = config.system.rates;
  const double buffer =
      std::max(150.0, 8.0 * rates.t_is_ns());
  const SequenceSpec spec = parse_sequence(protocol_sequences().at("fig4a_rabi"));
  const double win = config.readout_window_ns;
  const Timeline tl = compile_sequence(
      spec, {{"buffer", buffer}, {"tau_mw", 4.0}, {"win", win}});
  const LaserProfile prof = profile_from_timeline(tl, config.k_exp, config);
  const double t_mw = 3000.0 + buffer;
  ExperimentConfig quiet = config;
  quiet.noisy = false;  // calibration always runs on expected values
  const Populations at_mw = evolve_span(
      rates, prof, thermal_populations(config.system.thermal_ratio), 0.0, t_mw,
      config.integrator_options());
  const double ref =
      readout_window_counts(rates, prof, at_mw, t_mw, win, quiet, 0);
  double best_tau = config.rabi_period_ns / 2.0;
  double best = -1.0;
  const double step = config.rabi_period_ns / 80.0;
  for (double tau = step; tau <= config.rabi_period_ns; tau += step) {
    const double p = rabi_mixing_fraction(tau, config.rabi_period_ns,
                                          config.rabi_t2rho_ns);
    const double c = std::abs(
        contrast(readout_window_counts(rates, prof, mw_mix(at_mw, p), t_mw,
                                       win, quiet, 0),
                 ref));
    if (c > best) {
      best = c;
      best_tau = tau;
    }
  }
  return best_tau;
}

}  // namespace

ExperimentReport t1_scan(const ExperimentConfig& config,
                         const std::vector<double>& taus_ns) {
  if (taus_ns.size() < 2) throw ParameterError("t1 scan needs several taus");
  const SequenceSpec spec = parse_sequence(protocol_sequences().at("fig4c_t1"));
  const RateParams& rates = config.system.rates;
  const double win = config.readout_window_ns;

  const double pi_len = calibrate_pi_duration(config);
  const double p_pi = rabi_mixing_fraction(pi_len, config.rabi_period_ns,
                                           config.rabi_t2rho_ns);

  // pi-minus-reference count difference, normalized to the steady read-out
  // level so the denominator carries no tau dependence of its own.
  const double steady_ref = steady_reference_counts(
      config, win, derive_seed(config.seed, 2 * taus_ns.size()));

  std::vector<double> contrast_tau(taus_ns.size(), 0.0);
  for_each_index(
      static_cast<int>(taus_ns.size()), config.jobs, [&](int idx) {
        const auto ti = static_cast<std::size_t>(idx);
        const Timeline tl = compile_sequence(
            spec, {{"tau", taus_ns[ti]}, {"pi_len", pi_len}, {"win", win}});
        const LaserProfile prof =
            profile_from_timeline(tl, config.k_exp, config);
        const double t_mw = 3000.0 + taus_ns[ti];
        const Populations at_mw = evolve_span(
            rates, prof, thermal_populations(config.system.thermal_ratio), 0.0,
            t_mw, config.integrator_options());
        const double w_ref = readout_window_counts(
            rates, prof, at_mw, t_mw, win, config,
            derive_seed(config.seed, 2 * ti));
        const double w_pi = readout_window_counts(
            rates, prof, mw_mix(at_mw, p_pi), t_mw, win, config,
            derive_seed(config.seed, 2 * ti + 1));
        contrast_tau[ti] = (w_pi - w_ref) / steady_ref;
      });

  ExperimentReport report;
  report.protocol = "t1";
  report.swept_variable = "tau_ns";
  report.sweep_values = taus_ns;
  report.metrics["contrast"] = contrast_tau;
  report.config_hash = config.config_hash;
  report.seed = config.seed;
  {
    std::ostringstream os;
    os << "pi pulse duration " << pi_len << " ns (p = " << p_pi << ")";
    report.notes.push_back(os.str());
  }

  auto subrange_fit = [&](double lo, double hi, ModelKind kind,
                          const std::string& name,
                          double detrend_t1_ns) -> const FitResult* {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < taus_ns.size(); ++i) {
      if (taus_ns[i] >= lo && taus_ns[i] <= hi) {
        xs.push_back(taus_ns[i]);
        double y = -contrast_tau[i];  // pi branch darkens the read-out
        if (std::isfinite(detrend_t1_ns)) {
          y *= std::exp(taus_ns[i] / detrend_t1_ns);
        }
        ys.push_back(y);
      }
    }
    if (xs.size() < 4) {
      report.notes.push_back("no " + name + " fit: too few points in range");
      return nullptr;
    }
    const auto [mn, mx] = std::minmax_element(ys.begin(), ys.end());
    const double scale = std::max(std::abs(*mn), std::abs(*mx));
    if (*mx - *mn <= 1e-9 * std::max(scale, 1e-12)) {
      report.notes.push_back("no " + name +
                             " fit: data is flat over the range");
      return nullptr;
    }
    const FitModel model(kind);
    add_fit(report, name, model, fit(model, xs, ys));
    return &report.fits.back().result;
  };
  const double inf = std::numeric_limits<double>::infinity();
  const FitResult* long_fit =
      subrange_fit(1000.0, 1e18, ModelKind::kExpDecay, "long_range", inf);
  // Two-stage analysis: the long branch measures the spin-lattice time; the
  // short branch is read after dividing that slow decay out.
  double t1_est = inf;
  if (long_fit && long_fit->converged && long_fit->params[2] > 0.0) {
    t1_est = long_fit->params[2];
    report.notes.push_back(
        "short_range fitted on -contrast rescaled by exp(+tau/T1) with T1 "
        "taken from the long_range fit");
  }
  subrange_fit(0.0, 200.0, ModelKind::kExpRecovery, "short_range", t1_est);
  return report;
}

std::vector<double> hyperfine_weights(int n_nuclei, double spin) {
  if (n_nuclei < 0) throw ParameterError("n_nuclei must be >= 0");
  const double twice = 2.0 * spin;
  if (!(spin > 0.0) || std::abs(twice - std::round(twice)) > 1e-9) {
    throw ParameterError("spin must be a positive half-integer");
  }
  const auto per_nucleus = static_cast<std::size_t>(std::lround(twice)) + 1;
  std::vector<double> weights{1.0};
  for (int n = 0; n < n_nuclei; ++n) {
    std::vector<double> next(weights.size() + per_nucleus - 1, 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) {
      for (std::size_t j = 0; j < per_nucleus; ++j) {
        next[i + j] += weights[i];
      }
    }
    weights = std::move(next);
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& w : weights) w /= total;
  return weights;
}

std::vector<double> odmr_spectrum(const SpinSystemConfig& system,
                                  const std::vector<double>& f_grid_ghz,
                                  double b_field_mt, double linewidth_mhz,
                                  double depth) {
  if (!system.hyperfine_a_mhz) {
    throw ConfigError(
        "odmr spectrum requires the config key 'hyperfine_A_mhz' (no default "
        "is shipped)");
  }
  if (!(linewidth_mhz > 0.0)) throw ParameterError("linewidth must be > 0");
  if (!(depth >= 0.0)) throw ParameterError("depth must be >= 0");
  const double a_ghz = *system.hyperfine_a_mhz * 1e-3;
  const double sigma_ghz = linewidth_mhz * 1e-3 / 2.3548200450309493;  // FWHM
  const double shift_ghz = kGammaEGhzPerT * b_field_mt * 1e-3;
  const std::vector<double> weights = hyperfine_weights(3, 1.0);
  const auto m_max = (static_cast<int>(weights.size()) - 1) / 2;

  std::vector<double> centers;
  if (shift_ghz > 0.0) {
    centers = {system.d_gs_ghz - shift_ghz, system.d_gs_ghz + shift_ghz};
  } else {
    centers = {system.d_gs_ghz};
  }
  std::vector<double> out(f_grid_ghz.size(), 0.0);
  for (std::size_t i = 0; i < f_grid_ghz.size(); ++i) {
    double dip = 0.0;
    for (double c : centers) {
      for (int m = -m_max; m <= m_max; ++m) {
        const double d = (f_grid_ghz[i] - c - m * a_ghz) / sigma_ghz;
        dip += weights[static_cast<std::size_t>(m + m_max)] *
               std::exp(-0.5 * d * d);
      }
    }
    out[i] = -depth * dip;
  }
  return out;
}

ExperimentReport odmr_spectrum_report(const ExperimentConfig& config,
                                      const std::vector<double>& f_grid_ghz,
                                      double b_field_mt, double linewidth_mhz,
                                      double depth) {
  ExperimentReport report;
  report.protocol = "odmr-spectrum";
  report.swept_variable = "f_ghz";
  report.sweep_values = f_grid_ghz;
  report.metrics["contrast"] =
      odmr_spectrum(config.system, f_grid_ghz, b_field_mt, linewidth_mhz, depth);
  report.config_hash = config.config_hash;
  report.seed = config.seed;
  std::ostringstream os;
  os << "B = " << b_field_mt << " mT, linewidth (FWHM) = " << linewidth_mhz
     << " MHz, depth = " << depth;
  report.notes.push_back(os.str());
  return report;
}

std::vector<double> default_fig2_taus() {
  std::vector<double> taus;
  for (double tau = 2.0; tau <= 150.0; tau += 2.0) taus.push_back(tau);
  return taus;
}

std::vector<double> default_power_fractions() { return {0.1, 0.25, 0.5, 1.0}; }

std::vector<double> default_fig3_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 35; ++i) {
    grid.push_back(1e6 * std::pow(10.0, static_cast<double>(i) / 5.0));
  }
  return grid;
}

std::vector<double> default_fig4_buffers() {
  std::vector<double> buffers;
  for (double b = 5.0; b <= 150.0; b += 5.0) buffers.push_back(b);
  return buffers;
}

std::vector<double> default_fig4_mw_durations() {
  std::vector<double> durations;
  for (double d = 4.0; d <= 200.0; d += 4.0) durations.push_back(d);
  return durations;
}

std::vector<double> default_t1_taus() {
  std::vector<double> taus;
  for (int i = 0; i <= 40; ++i) {
    taus.push_back(std::pow(10.0, static_cast<double>(i) / 8.0));
  }
  return taus;
}

Trajectory simulate_timeline(const Timeline& timeline,
                             const ExperimentConfig& config, double k_max,
                             double dt_sample_ns) {
  if (!(dt_sample_ns > 0.0)) throw ParameterError("dt_sample must be > 0");
  const LaserProfile prof = profile_from_timeline(timeline, k_max, config);
  const RateParams& rates = config.system.rates;
  const double total = timeline.total_duration_ns;
  if (!(total > 0.0)) throw ParameterError("timeline has zero duration");

  std::vector<MwEvent> events = mw_events(timeline);
  std::sort(events.begin(), events.end(),
            [](const MwEvent& a, const MwEvent& b) { return a.t_ns < b.t_ns; });

  Trajectory out;
  Populations state = thermal_populations(config.system.thermal_ratio);
  double cursor = 0.0;
  auto run_to = [&](double t_end) {
    if (t_end <= cursor) return;
    const Trajectory seg =
        propagate_profile(state, rates, prof, cursor, t_end, dt_sample_ns,
                          config.integrator_options());
    state = seg.pops.back();
    append_trajectory(out, seg);
    cursor = t_end;
  };
  for (const auto& ev : events) {
    run_to(std::min(ev.t_ns, total));
    const double p = rabi_mixing_fraction(ev.duration_ns, config.rabi_period_ns,
                                          config.rabi_t2rho_ns);
    state = mw_mix(state, p);
    if (config.mw_advances_time) {
      // the ground state keeps evolving in the dark for the pulse length
      state = propagate_const(state, rates, 0.0, ev.duration_ns);
    }
  }
  run_to(total);
  return out;
}

void write_experiment_files(const ExperimentReport& report,
                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path dir(out_dir);
  write_text_atomic((dir / "report.json").string(), report.to_json());

  auto metric_columns = [&](std::vector<std::string>& header,
                            std::vector<std::vector<double>>& cols) {
    header.push_back(report.swept_variable);
    cols.push_back(report.sweep_values);
    for (const auto& [name, values] : report.metrics) {
      header.push_back(name);
      cols.push_back(values);
    }
  };

  std::string csv_name;
  if (report.protocol == "pl-recovery") {
    csv_name = "fig2c_overshoot_vs_tau.csv";
  } else if (report.protocol == "init-time") {
    csv_name = "fig3c_t95_vs_ke.csv";
  } else if (report.protocol == "rabi-buffer") {
    csv_name = "fig4b_amp_vs_buffer.csv";
  } else if (report.protocol == "t1") {
    csv_name = "fig4c_contrast_vs_tau.csv";
  } else if (report.protocol == "odmr-spectrum") {
    csv_name = "fig1c_spectrum.csv";
  }
  if (!csv_name.empty()) {
    std::vector<std::string> header;
    std::vector<std::vector<double>> cols;
    metric_columns(header, cols);
    write_csv_atomic((dir / csv_name).string(), header, cols);
  }
}

}  // namespace spinshelve
