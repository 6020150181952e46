#pragma once

// Plain-text key/value parameter files, preset resolution and the run
// configuration shared by the experiment pipelines and the CLI.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spinshelve/kinetics.hpp"
#include "spinshelve/types.hpp"

namespace spinshelve {

// `key = value` lines, '#' comments. Values stay strings until queried.
class KeyValueFile {
 public:
  static KeyValueFile parse_text(const std::string& text,
                                 const std::string& origin = "<string>");
  static KeyValueFile load(const std::string& path);

  bool has(const std::string& key) const;
  double get_number(const std::string& key) const;  // ConfigError if missing
  double get_number_or(const std::string& key, double fallback) const;
  std::string get_string(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }
  const std::string& origin() const { return origin_; }

 private:
  std::map<std::string, std::string> entries_;
  std::string origin_;
};

// Everything a simulation or experiment run needs. Loaded from a preset
// file plus command-line overrides.
struct ExperimentConfig {
  SpinSystemConfig system;
  double k_exp = 2.7e7;              // full-power pump rate, s^-1
  double laser_t_rise_ns = 0.5;
  double laser_t_fall_ns = 0.79;
  double collection_efficiency = 1.0;
  double rabi_period_ns = 80.0;
  double rabi_t2rho_ns = 56.0;
  double bin_width_ns = 1.0;
  double steady_window_start_ns = 2000.0;
  double steady_window_end_ns = 3000.0;
  double readout_window_ns = 60.0;
  bool median_filter = true;
  bool mw_advances_time = false;

  bool noisy = false;
  long shots = 10000;
  std::uint64_t seed = 0;
  int jobs = 1;

  IntegratorOptions integrator;

  std::string preset_name;
  std::string config_hash;  // FNV-1a over the canonical key/value dump

  IntegratorOptions integrator_options() const {
    IntegratorOptions o = integrator;
    o.collection_efficiency = collection_efficiency;
    return o;
  }
};

// Resolves a preset name or path: an existing path wins, then each entry of
// $SPINSHELVE_PRESETS (colon separated), then ./presets. Throws ConfigError
// naming the path when nothing matches.
std::string resolve_preset_path(const std::string& name_or_path);

// Loads a preset file into a config and stamps the config hash.
ExperimentConfig load_experiment_config(const std::string& preset_name_or_path);

// Canonical serialization of the physics content (used for hashing and for
// reproducing runs from a report).
std::string canonical_config_text(const ExperimentConfig& config);

// Recomputes config_hash from canonical_config_text.
void stamp_config_hash(ExperimentConfig& config);

std::uint64_t fnv1a64(const std::string& text);
std::string hash_hex(std::uint64_t value);

}  // namespace spinshelve
