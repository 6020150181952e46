#pragma once

// Conversion of trajectories into TCSPC-style histograms, Poisson shot
// noise, and the scalar metrics read off the histograms.

#include <cstdint>
#include <vector>

#include "spinshelve/kinetics.hpp"
#include "spinshelve/types.hpp"

namespace spinshelve {

struct TcspcHistogram {
  std::vector<double> bin_edges_ns;  // size bins + 1
  std::vector<double> counts;        // expected values, or integers when noisy
  long shots = 1;
  std::uint64_t seed = 0;
  bool noisy = false;

  std::size_t bins() const { return counts.size(); }
  double bin_width_ns() const {
    return bins() ? bin_edges_ns[1] - bin_edges_ns[0] : 0.0;
  }
  double start_ns() const { return bin_edges_ns.front(); }
  double end_ns() const { return bin_edges_ns.back(); }
};

// Expected photon count per bin: shots * efficiency * integral of pl over
// the bin (trapezoidal on the trajectory samples). Deterministic.
TcspcHistogram expected_counts(const Trajectory& traj, double bin_width_ns,
                               long shots, double efficiency);

// Poisson-draws every bin of an expected-value histogram; reproducible per
// seed.
TcspcHistogram sample_counts(const TcspcHistogram& expected,
                             std::uint64_t seed);

// Counts inside [t_start, t_end]; boundary bins contribute linear fractions.
double integrate_window(const TcspcHistogram& hist, double t_start_ns,
                        double t_end_ns);

// (signal - reference) / reference.
double contrast(double signal, double reference);

// Maximum bin value over the whole trace divided by the mean bin value over
// the steady window. The maximum is read after a 3-bin median filter unless
// median_filter is false (a raw max is biased upward in noisy mode).
double overshoot_ratio(const TcspcHistogram& hist, double steady_t0_ns,
                       double steady_t1_ns, bool median_filter = true);

}  // namespace spinshelve
