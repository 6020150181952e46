// Times the sweep kernels with the serial reference loop (jobs = 1) against
// the OpenMP path, and checks that both produce identical reports.

#include <chrono>
#include <cstdio>
#include <string>

#include "spinshelve/config.hpp"
#include "spinshelve/experiments.hpp"
#include "spinshelve/parallel.hpp"

using namespace spinshelve;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

template <class Fn>
double timed(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return seconds_since(t0);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string preset = argc > 1 ? argv[1] : "room_temperature";
  ExperimentConfig serial = load_experiment_config(preset);
  serial.jobs = 1;
  ExperimentConfig parallel = serial;
  parallel.jobs = default_jobs();

  std::printf("sweep benchmark: serial reference vs OpenMP (%d threads)\n",
              parallel.jobs);

  std::vector<double> levels;
  for (double f : default_power_fractions()) levels.push_back(f * serial.k_exp);

  std::string serial_json, parallel_json;
  const double t_serial = timed([&] {
    serial_json = pl_recovery_scan(serial, default_fig2_taus(), levels).to_json();
  });
  const double t_parallel = timed([&] {
    parallel_json =
        pl_recovery_scan(parallel, default_fig2_taus(), levels).to_json();
  });
  std::printf("pl-recovery  serial %7.3f s | parallel %7.3f s | speedup %.2fx | identical %s\n",
              t_serial, t_parallel, t_serial / t_parallel,
              serial_json == parallel_json ? "yes" : "NO");

  const double t_serial3 = timed([&] {
    serial_json = initialization_scan(serial, default_fig3_grid()).to_json();
  });
  const double t_parallel3 = timed([&] {
    parallel_json =
        initialization_scan(parallel, default_fig3_grid()).to_json();
  });
  std::printf("init-time    serial %7.3f s | parallel %7.3f s | speedup %.2fx | identical %s\n",
              t_serial3, t_parallel3, t_serial3 / t_parallel3,
              serial_json == parallel_json ? "yes" : "NO");

  const auto buffers = default_fig4_buffers();
  const auto durations = default_fig4_mw_durations();
  const double t_serial4 = timed([&] {
    serial_json =
        rabi_buffer_scan(serial, buffers, durations, {0.0, 60.0}).to_json();
  });
  const double t_parallel4 = timed([&] {
    parallel_json =
        rabi_buffer_scan(parallel, buffers, durations, {0.0, 60.0}).to_json();
  });
  std::printf("rabi-buffer  serial %7.3f s | parallel %7.3f s | speedup %.2fx | identical %s\n",
              t_serial4, t_parallel4, t_serial4 / t_parallel4,
              serial_json == parallel_json ? "yes" : "NO");
  return 0;
}
