#include "spinshelve/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace spinshelve {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse_text(const std::string& text,
                                      const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": empty key or value");
    }
    kv.entries_[key] = value;
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open parameter file '" + path + "'");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_text(buffer.str(), path);
}

bool KeyValueFile::has(const std::string& key) const {
  return entries_.count(key) > 0;
}

double KeyValueFile::get_number(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  }
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(it->second, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != it->second.size()) {
    throw ConfigError(origin_ + ": key '" + key + "' has non-numeric value '" +
                      it->second + "'");
  }
  return value;
}

double KeyValueFile::get_number_or(const std::string& key,
                                   double fallback) const {
  return has(key) ? get_number(key) : fallback;
}

std::string KeyValueFile::get_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  }
  return it->second;
}

std::string resolve_preset_path(const std::string& name_or_path) {
  namespace fs = std::filesystem;
  std::vector<std::string> tried;
  auto try_path = [&](const fs::path& p) -> std::optional<std::string> {
    tried.push_back(p.string());
    if (fs::exists(p) && fs::is_regular_file(p)) return p.string();
    return std::nullopt;
  };

  if (auto hit = try_path(name_or_path)) return *hit;

  std::vector<fs::path> roots;
  if (const char* env = std::getenv("SPINSHELVE_PRESETS")) {
    std::istringstream in(env);
    std::string part;
    while (std::getline(in, part, ':')) {
      if (!part.empty()) roots.emplace_back(part);
    }
  }
  roots.emplace_back("presets");
  for (const auto& root : roots) {
    if (auto hit = try_path(root / name_or_path)) return *hit;
    if (auto hit = try_path(root / (name_or_path + ".conf"))) return *hit;
  }
  std::ostringstream os;
  os << "preset '" << name_or_path << "' not found; tried:";
  for (const auto& t : tried) os << " " << t;
  throw ConfigError(os.str());
}

ExperimentConfig load_experiment_config(
    const std::string& preset_name_or_path) {
  const std::string path = resolve_preset_path(preset_name_or_path);
  const KeyValueFile kv = KeyValueFile::load(path);

  ExperimentConfig cfg;
  cfg.preset_name = path;
  RateParams& r = cfg.system.rates;
  r.k_r = kv.get_number("k_r");
  r.gamma0 = kv.get_number("gamma0");
  r.gamma1 = kv.get_number("gamma1");
  r.kappa0 = kv.get_number("kappa0");
  r.kappa1 = kv.get_number("kappa1");
  r.k_sl_0to1 = kv.get_number_or("k_sl_0to1", 0.0);
  r.k_sl_1to0 = kv.get_number_or("k_sl_1to0", 0.0);
  cfg.system.d_gs_ghz = kv.get_number_or("D_gs_ghz", 3.49);
  cfg.system.d_es_ghz = kv.get_number_or("D_es_ghz", 2.09);
  cfg.system.thermal_ratio = kv.get_number_or("thermal_ratio", 2.0);
  cfg.system.temperature_label_k = kv.get_number_or("temperature_k", 300.0);
  if (kv.has("hyperfine_A_mhz")) {
    cfg.system.hyperfine_a_mhz = kv.get_number("hyperfine_A_mhz");
  }
  cfg.k_exp = kv.get_number_or("k_exp", cfg.k_exp);
  cfg.laser_t_rise_ns = kv.get_number_or("laser_t_rise_ns", cfg.laser_t_rise_ns);
  cfg.laser_t_fall_ns = kv.get_number_or("laser_t_fall_ns", cfg.laser_t_fall_ns);
  cfg.collection_efficiency =
      kv.get_number_or("collection_efficiency", cfg.collection_efficiency);
  cfg.rabi_period_ns = kv.get_number_or("rabi_period_ns", cfg.rabi_period_ns);
  cfg.rabi_t2rho_ns = kv.get_number_or("rabi_t2rho_ns", cfg.rabi_t2rho_ns);

  cfg.system.validate();
  if (r.k_sl_1to0 > 0.0) {
    const double balance = r.k_sl_0to1 / r.k_sl_1to0;
    if (std::abs(balance - cfg.system.thermal_ratio) >
        1e-6 * cfg.system.thermal_ratio) {
      throw ConfigError(path +
                        ": spin-lattice rates violate detailed balance "
                        "against thermal_ratio");
    }
  }
  if (!r.in_physical_regime()) {
    std::cerr << "warning: " << path
              << ": rates leave the physical regime (expected gamma0 < gamma1 "
                 "and kappa0 > kappa1)\n";
  }
  stamp_config_hash(cfg);
  return cfg;
}

std::string canonical_config_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const RateParams& r = c.system.rates;
  os << "k_r=" << r.k_r << "\ngamma0=" << r.gamma0 << "\ngamma1=" << r.gamma1
     << "\nkappa0=" << r.kappa0 << "\nkappa1=" << r.kappa1
     << "\nk_sl_0to1=" << r.k_sl_0to1 << "\nk_sl_1to0=" << r.k_sl_1to0
     << "\nD_gs_ghz=" << c.system.d_gs_ghz
     << "\nD_es_ghz=" << c.system.d_es_ghz;
  if (c.system.hyperfine_a_mhz) {
    os << "\nhyperfine_A_mhz=" << *c.system.hyperfine_a_mhz;
  }
  os << "\nthermal_ratio=" << c.system.thermal_ratio << "\nk_exp=" << c.k_exp
     << "\nlaser_t_rise_ns=" << c.laser_t_rise_ns
     << "\nlaser_t_fall_ns=" << c.laser_t_fall_ns
     << "\ncollection_efficiency=" << c.collection_efficiency
     << "\nrabi_period_ns=" << c.rabi_period_ns
     << "\nrabi_t2rho_ns=" << c.rabi_t2rho_ns
     << "\nbin_width_ns=" << c.bin_width_ns << "\nsteady_window=["
     << c.steady_window_start_ns << "," << c.steady_window_end_ns
     << "]\nreadout_window_ns=" << c.readout_window_ns
     << "\nmedian_filter=" << c.median_filter
     << "\nmw_advances_time=" << c.mw_advances_time << "\nnoisy=" << c.noisy
     << "\nshots=" << c.shots << "\nseed=" << c.seed
     << "\ndt_max_ns=" << c.integrator.dt_max_ns
     << "\nforce_rk4=" << c.integrator.force_rk4 << "\n";
  return os.str();
}

void stamp_config_hash(ExperimentConfig& config) {
  config.config_hash = hash_hex(fnv1a64(canonical_config_text(config)));
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return std::string(buf);
}

}  // namespace spinshelve
