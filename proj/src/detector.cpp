#include "spinshelve/detector.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spinshelve/rng.hpp"

namespace spinshelve {

double Rng::normal() {
  // Marsaglia polar method; both values of the pair are consumed to keep the
  // stream position deterministic.
  while (true) {
    const double u = 2.0 * uniform() - 1.0;
    const double v = 2.0 * uniform() - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) {
      return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

long Rng::poisson(double mean) {
  if (!(mean >= 0.0)) return 0;
  if (mean == 0.0) return 0;
  if (mean < 30.0) {
    // Knuth multiplication.
    const double limit = std::exp(-mean);
    double prod = 1.0;
    long k = -1;
    do {
      ++k;
      prod *= uniform();
    } while (prod > limit);
    return k;
  }
  // PTRS transformed rejection (Hoermann 1993).
  const double b = 0.931 + 2.53 * std::sqrt(mean);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  while (true) {
    const double u = uniform() - 0.5;
    const double v = uniform();
    const double us = 0.5 - std::abs(u);
    const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<long>(kf);
    if (kf < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        kf * std::log(mean) - mean - std::lgamma(kf + 1.0)) {
      return static_cast<long>(kf);
    }
  }
}

TcspcHistogram expected_counts(const Trajectory& traj, double bin_width_ns,
                               long shots, double efficiency) {
  if (!(bin_width_ns > 0.0)) throw ParameterError("bin width must be > 0");
  if (shots < 1) throw ParameterError("shots must be >= 1");
  if (!(efficiency > 0.0 && efficiency <= 1.0)) {
    throw ParameterError("efficiency must lie in (0, 1]");
  }
  if (traj.size() < 2) {
    throw ParameterError("trajectory too short to histogram");
  }
  double max_step = 0.0;
  for (std::size_t i = 1; i < traj.size(); ++i) {
    max_step = std::max(max_step, traj.t_ns[i] - traj.t_ns[i - 1]);
  }
  if (bin_width_ns < max_step - 1e-12) {
    std::ostringstream os;
    os << "bin width " << bin_width_ns
       << " ns is below the trajectory sampling step " << max_step << " ns";
    throw ParameterError(os.str());
  }

  const double t0 = traj.t_ns.front();
  const double span = traj.t_ns.back() - t0;
  const auto nbins =
      static_cast<std::size_t>(std::ceil(span / bin_width_ns - 1e-9));
  TcspcHistogram hist;
  hist.shots = shots;
  hist.counts.assign(std::max<std::size_t>(nbins, 1), 0.0);
  hist.bin_edges_ns.resize(hist.counts.size() + 1);
  for (std::size_t b = 0; b < hist.bin_edges_ns.size(); ++b) {
    hist.bin_edges_ns[b] = t0 + static_cast<double>(b) * bin_width_ns;
  }

  // Trapezoid integral of the piecewise-linear pl, split at bin boundaries.
  const double scale = static_cast<double>(shots) * efficiency;
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    double a = traj.t_ns[i];
    const double bnd = traj.t_ns[i + 1];
    const double pa = traj.pl[i];
    const double pb = traj.pl[i + 1];
    const double inv = 1.0 / (bnd - a);
    while (a < bnd - 1e-15) {
      auto bin = static_cast<std::size_t>(
          std::min<double>(std::floor((a - t0) / bin_width_ns + 1e-12),
                           static_cast<double>(hist.counts.size() - 1)));
      const double cut = std::min(bnd, hist.bin_edges_ns[bin + 1]);
      const double fa = (a - traj.t_ns[i]) * inv;
      const double fb = (cut - traj.t_ns[i]) * inv;
      const double ya = pa + (pb - pa) * fa;
      const double yb = pa + (pb - pa) * fb;
      hist.counts[bin] += scale * 0.5 * (ya + yb) * (cut - a);
      a = cut;
    }
  }
  return hist;
}

TcspcHistogram sample_counts(const TcspcHistogram& expected,
                             std::uint64_t seed) {
  if (expected.noisy) {
    throw ParameterError("sample_counts needs an expected-value histogram");
  }
  TcspcHistogram out = expected;
  out.noisy = true;
  out.seed = seed;
  Rng rng(seed);
  for (auto& c : out.counts) {
    c = static_cast<double>(rng.poisson(c));
  }
  return out;
}

double integrate_window(const TcspcHistogram& hist, double t_start_ns,
                        double t_end_ns) {
  if (!(t_start_ns <= t_end_ns)) {
    throw ParameterError("window start must be <= end");
  }
  if (t_start_ns < hist.start_ns() - 1e-9 || t_end_ns > hist.end_ns() + 1e-9) {
    std::ostringstream os;
    os << "window [" << t_start_ns << ", " << t_end_ns
       << "] ns lies outside the histogram range [" << hist.start_ns() << ", "
       << hist.end_ns() << "] ns";
    throw ParameterError(os.str());
  }
  double total = 0.0;
  for (std::size_t b = 0; b < hist.bins(); ++b) {
    const double lo = hist.bin_edges_ns[b];
    const double hi = hist.bin_edges_ns[b + 1];
    const double ov_lo = std::max(lo, t_start_ns);
    const double ov_hi = std::min(hi, t_end_ns);
    if (ov_hi <= ov_lo) continue;
    total += hist.counts[b] * (ov_hi - ov_lo) / (hi - lo);
  }
  return total;
}

double contrast(double signal, double reference) {
  if (!(reference > 0.0)) {
    throw ParameterError("contrast reference must be > 0");
  }
  return (signal - reference) / reference;
}

double overshoot_ratio(const TcspcHistogram& hist, double steady_t0_ns,
                       double steady_t1_ns, bool median_filter) {
  if (!(steady_t1_ns > steady_t0_ns)) {
    throw ParameterError("steady window must be nonempty");
  }
  if (steady_t0_ns < hist.start_ns() - 1e-9 ||
      steady_t1_ns > hist.end_ns() + 1e-9) {
    throw ParameterError("steady window outside histogram range");
  }
  const auto& c = hist.counts;
  double peak = 0.0;
  for (std::size_t b = 0; b < c.size(); ++b) {
    double v = c[b];
    if (median_filter && b > 0 && b + 1 < c.size()) {
      const double x = c[b - 1], y = c[b], z = c[b + 1];
      v = std::max(std::min(x, y), std::min(std::max(x, y), z));
    }
    peak = std::max(peak, v);
  }
  const double steady_counts =
      integrate_window(hist, steady_t0_ns, steady_t1_ns);
  const double mean_bin =
      steady_counts / (steady_t1_ns - steady_t0_ns) * hist.bin_width_ns();
  if (!(mean_bin > 0.0)) {
    throw ParameterError("steady-state window has zero mean intensity");
  }
  return peak / mean_bin;
}

}  // namespace spinshelve
