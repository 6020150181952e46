// spinshelve command-line interface: rate-model simulation, the five
// experiment pipelines, curve fitting and pulse-sequence compilation.
//
// Exit codes: 0 success, 1 input/validation error, 2 usage error,
// 3 fit non-convergence.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spinshelve/config.hpp"
#include "spinshelve/experiments.hpp"
#include "spinshelve/io.hpp"
#include "spinshelve/model.hpp"
#include "spinshelve/parallel.hpp"
#include "spinshelve/pulseseq.hpp"

namespace fs = std::filesystem;
using namespace spinshelve;

namespace {

struct GlobalOptions {
  std::string preset = "room_temperature";
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool noise = false;
  long shots = 10000;
  int jobs = 0;
  bool gnuplot = false;
};

ExperimentConfig make_config(const GlobalOptions& g) {
  ExperimentConfig cfg = load_experiment_config(g.preset);
  cfg.seed = g.seed;
  cfg.noisy = g.noise;
  cfg.shots = g.shots;
  cfg.jobs = g.jobs > 0 ? g.jobs : default_jobs();
  stamp_config_hash(cfg);
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// metadata sidecar keeps the wall-clock stamp out of the data files
void write_sidecar(const std::string& out_dir, const ExperimentConfig& cfg,
                   const std::string& command) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["preset"] = cfg.preset_name;
  j["config_hash"] = cfg.config_hash;
  j["seed"] = cfg.seed;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  j["timestamp_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  write_text_atomic((fs::path(out_dir) / "run_meta.json").string(),
                    j.dump(2) + "\n");
  write_text_atomic((fs::path(out_dir) / "config_canonical.txt").string(),
                    canonical_config_text(cfg));
}

Bindings parse_bindings(const std::vector<std::string>& raw) {
  Bindings b;
  for (const auto& item : raw) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("--bind expects name=value[ns|us], got '" + item +
                           "'");
    }
    const std::string name = item.substr(0, eq);
    std::string value = item.substr(eq + 1);
    double scale = 1.0;
    if (value.size() >= 2 && value.substr(value.size() - 2) == "us") {
      scale = 1000.0;
      value.resize(value.size() - 2);
    } else if (value.size() >= 2 && value.substr(value.size() - 2) == "ns") {
      value.resize(value.size() - 2);
    }
    std::size_t used = 0;
    const double num = std::stod(value, &used);
    if (used != value.size()) {
      throw ParameterError("malformed binding value in '" + item + "'");
    }
    b[name] = num * scale;
  }
  return b;
}

void emit_gnuplot(const std::string& out_dir, const std::string& csv,
                  const std::string& xlabel, const std::string& ylabel,
                  bool logx = false) {
  std::ostringstream os;
  os << "set datafile separator ','\n";
  os << "set key autotitle columnhead\n";
  os << "set xlabel '" << xlabel << "'\nset ylabel '" << ylabel << "'\n";
  if (logx) os << "set logscale x\n";
  os << "plot for [col=2:*] '" << csv << "' using 1:col with linespoints\n";
  os << "pause -1\n";
  const std::string name = csv.substr(0, csv.size() - 4) + ".gp";
  write_text_atomic((fs::path(out_dir) / name).string(), os.str());
}

int cmd_simulate(const GlobalOptions& g, const std::string& pseq_path,
                 const std::vector<std::string>& binds,
                 std::optional<double> tau_ns, std::optional<double> ke,
                 double dt_sample) {
  ExperimentConfig cfg = make_config(g);
  if (!(dt_sample > 0.0)) throw ParameterError("--dt must be > 0");
  const SequenceSpec spec = parse_sequence(read_file(pseq_path));
  Bindings bindings = parse_bindings(binds);
  if (tau_ns) bindings["tau"] = *tau_ns;
  // fill unbound sweep variables from their first declared value
  for (const auto& sweep : spec.sweeps) {
    if (!bindings.count(sweep.name)) {
      const auto values = sweep.values();
      if (!values.empty()) bindings[sweep.name] = values.front();
    }
  }
  const Timeline tl = compile_sequence(spec, bindings);
  const double k_max = ke ? *ke : cfg.k_exp;
  const Trajectory traj = simulate_timeline(tl, cfg, k_max, dt_sample);

  std::vector<double> gs0, gs1, es0, es1, is;
  for (const auto& p : traj.pops) {
    gs0.push_back(p.gs0);
    gs1.push_back(p.gs1);
    es0.push_back(p.es0);
    es1.push_back(p.es1);
    is.push_back(p.is);
  }
  write_csv_atomic((fs::path(g.out_dir) / "trajectory.csv").string(),
                   {"t_ns", "n_gs0", "n_gs1", "n_es0", "n_es1", "n_is", "pl"},
                   {traj.t_ns, gs0, gs1, es0, es1, is, traj.pl});
  write_text_atomic((fs::path(g.out_dir) / "timeline.json").string(),
                    timeline_to_json(tl));
  write_sidecar(g.out_dir, cfg, "simulate");
  if (g.gnuplot) emit_gnuplot(g.out_dir, "trajectory.csv", "t (ns)", "value");
  std::cout << "wrote " << (fs::path(g.out_dir) / "trajectory.csv").string()
            << " (" << traj.size() << " samples, k_e = " << k_max
            << " s^-1)\n";
  return 0;
}

void print_fit_line(const ExperimentReport& report, const std::string& name,
                    const std::string& param, const std::string& label,
                    double scale = 1.0, const std::string& unit = "ns") {
  const FitResult* fr = report.find_fit(name);
  if (!fr) return;
  const FitModel model = FitModel::from_name("exp_recovery");
  (void)model;
  // parameter index by name lookup
  for (const auto& f : report.fits) {
    if (f.name != name) continue;
    const FitModel m = FitModel::from_name(f.model);
    for (int i = 0; i < m.n_params(); ++i) {
      if (m.param_names()[static_cast<std::size_t>(i)] == param) {
        std::printf("  %s = %.4g %s%s\n", label.c_str(),
                    f.result.params[static_cast<std::size_t>(i)] * scale,
                    unit.c_str(), f.result.converged ? "" : " [not converged]");
      }
    }
  }
}

int cmd_experiment(const GlobalOptions& g, const std::string& name,
                   std::optional<double> hyperfine_a, double b_field_mt,
                   double linewidth_mhz, double depth,
                   std::optional<double> window_ns) {
  static const std::vector<std::string> known = {
      "pl-recovery", "init-time", "rabi-buffer", "t1", "odmr-spectrum"};
  if (std::find(known.begin(), known.end(), name) == known.end()) {
    std::cerr << "unknown experiment '" << name << "'; valid names:";
    for (const auto& n : known) std::cerr << " " << n;
    std::cerr << "\n";
    return 2;
  }
  ExperimentConfig cfg = make_config(g);
  if (hyperfine_a) {
    cfg.system.hyperfine_a_mhz = *hyperfine_a;
    stamp_config_hash(cfg);
  }
  if (window_ns) {
    cfg.readout_window_ns = *window_ns;
    stamp_config_hash(cfg);
  }

  ExperimentReport report;
  if (name == "pl-recovery") {
    std::vector<double> levels;
    for (double f : default_power_fractions()) levels.push_back(f * cfg.k_exp);
    report = pl_recovery_scan(cfg, default_fig2_taus(), levels);
    write_experiment_files(report, g.out_dir);
    std::printf("pl-recovery: fitted IS lifetimes per pump level\n");
    for (const auto& f : report.fits) {
      if (f.name.rfind("recovery_", 0) == 0) {
        std::printf("  T_IS ~= %.4g ns  (%s)%s\n", f.result.params[2],
                    f.name.c_str() + 9,
                    f.result.converged ? "" : " [not converged]");
      }
    }
  } else if (name == "init-time") {
    report = initialization_scan(cfg, default_fig3_grid());
    write_experiment_files(report, g.out_dir);
    if (const FitResult* fr = report.find_fit("power_law_below_1e11")) {
      std::printf("init-time: power-law exponent a = %.3f, t0 = %.3g ns\n",
                  fr->params[2], fr->params[0]);
    }
  } else if (name == "rabi-buffer") {
    const double win = window_ns ? *window_ns : cfg.readout_window_ns;
    report = rabi_buffer_scan(cfg, default_fig4_buffers(),
                              default_fig4_mw_durations(), {0.0, win});
    write_experiment_files(report, g.out_dir);
    if (const FitResult* fr = report.find_fit("amplitude_recovery")) {
      std::printf(
          "rabi-buffer: amplitude recovery time constant = %.4g ns "
          "(plateau %.4g)\n",
          fr->params[2], fr->params[0]);
    }
  } else if (name == "t1") {
    report = t1_scan(cfg, default_t1_taus());
    write_experiment_files(report, g.out_dir);
    print_fit_line(report, "short_range", "T", "short-range constant");
    if (const FitResult* fr = report.find_fit("long_range")) {
      std::printf("  T_1 = %.4g us\n", fr->params[2] / 1000.0);
    }
  } else {  // odmr-spectrum
    std::vector<double> grid;
    for (double f = 2.9; f <= 4.1 + 1e-9; f += 0.001) grid.push_back(f);
    report = odmr_spectrum_report(cfg, grid, b_field_mt, linewidth_mhz, depth);
    write_experiment_files(report, g.out_dir);
    std::printf("odmr-spectrum: %zu points, dip groups at %.3f / %.3f GHz\n",
                grid.size(), cfg.system.d_gs_ghz - 0.028024 * b_field_mt,
                cfg.system.d_gs_ghz + 0.028024 * b_field_mt);
  }
  write_sidecar(g.out_dir, cfg, "experiment " + name);
  if (g.gnuplot) {
    const bool logx = name == "init-time" || name == "t1";
    std::string csv;
    for (const auto& entry : fs::directory_iterator(g.out_dir)) {
      const std::string fn = entry.path().filename().string();
      if (fn.rfind("fig", 0) == 0 && fn.size() > 4 &&
          fn.substr(fn.size() - 4) == ".csv") {
        csv = fn;
      }
    }
    if (!csv.empty()) {
      emit_gnuplot(g.out_dir, csv, report.swept_variable, "value", logx);
    }
  }
  return 0;
}

int cmd_fit(const GlobalOptions& g, const std::string& model_name,
            const std::string& csv_path) {
  FitModel model = [&] {
    try {
      return FitModel::from_name(model_name);
    } catch (const ParameterError& e) {
      std::cerr << e.what() << "\n";
      std::exit(2);
    }
  }();
  const XyData data = read_xy_csv(csv_path);
  const FitResult result =
      fit(model, data.x, data.y, data.sigma, std::nullopt, {});

  nlohmann::ordered_json j;
  j["model"] = model.name();
  j["formula"] = model.formula();
  nlohmann::ordered_json params;
  nlohmann::ordered_json uncertainties;
  for (int i = 0; i < model.n_params(); ++i) {
    const auto& pname = model.param_names()[static_cast<std::size_t>(i)];
    params[pname] = result.params[static_cast<std::size_t>(i)];
    uncertainties[pname] = result.uncertainties[static_cast<std::size_t>(i)];
  }
  j["params"] = std::move(params);
  j["uncertainties"] = std::move(uncertainties);
  j["chi2"] = result.chi2;
  j["reduced_chi2"] = result.reduced_chi2;
  j["iterations"] = result.iterations;
  j["converged"] = result.converged;
  j["message"] = result.message;
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  write_text_atomic((fs::path(g.out_dir) / "fit_result.json").string(), text);
  return result.converged ? 0 : 3;
}

int cmd_compile(const GlobalOptions& g, const std::string& pseq_path,
                const std::vector<std::string>& binds,
                const std::string& sweep_arg) {
  const SequenceSpec spec = parse_sequence(read_file(pseq_path));
  const Bindings base = parse_bindings(binds);

  if (sweep_arg.empty()) {
    Bindings bindings = base;
    const Timeline tl = compile_sequence(spec, bindings);
    const std::string path = (fs::path(g.out_dir) / "timeline.json").string();
    write_text_atomic(path, timeline_to_json(tl));
    for (const auto& w : tl.warnings) std::cerr << "note: " << w << "\n";
    std::cout << "wrote " << path << "\n";
    return 0;
  }
  // --sweep name=start:stop:step (ns)
  const auto eq = sweep_arg.find('=');
  if (eq == std::string::npos) {
    throw ParameterError("--sweep expects name=start:stop:step");
  }
  const std::string var = sweep_arg.substr(0, eq);
  double start = 0, stop = 0, step = 0;
  {
    const std::string rest = sweep_arg.substr(eq + 1);
    char unit1[3] = "", unit2[3] = "", unit3[3] = "";
    const int got =
        std::sscanf(rest.c_str(), "%lf%2[a-z]:%lf%2[a-z]:%lf%2[a-z]", &start,
                    unit1, &stop, unit2, &step, unit3);
    if (got < 5) throw ParameterError("--sweep expects name=start:stop:step");
    auto scale = [](const char* u) -> double {
      if (u[0] == '\0' || std::string(u) == "ns") return 1.0;
      if (std::string(u) == "us") return 1000.0;
      throw ParameterError("unknown unit in --sweep");
    };
    start *= scale(unit1);
    stop *= scale(unit2);
    step *= scale(unit3);
  }
  std::vector<double> values;
  for (double v = start; v <= stop + 1e-9; v += step) values.push_back(v);
  const auto expanded = expand_sweep(spec, var, values, base);
  int index = 0;
  for (const auto& [bindings, tl] : expanded) {
    char name[64];
    std::snprintf(name, sizeof(name), "timeline_%04d.json", index++);
    write_text_atomic((fs::path(g.out_dir) / name).string(),
                      timeline_to_json(tl));
  }
  std::cout << "wrote " << expanded.size() << " timeline files to " << g.out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "spinshelve: optical-cycle dynamics of optically pumped triplet spin "
      "defects (5-level rate model, pulse protocols, fits)"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--preset", g.preset, "parameter preset name or path");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--seed", g.seed, "RNG seed for noisy mode");
  app.add_flag("--noise", g.noise, "enable Poisson shot noise");
  app.add_option("--shots", g.shots, "repetitions in noisy mode");
  app.add_option("--jobs", g.jobs, "parallel sweep workers (0 = auto)");
  app.add_flag("--gnuplot", g.gnuplot, "emit a gnuplot script next to the CSVs");

  auto* sim = app.add_subcommand("simulate", "integrate a pulse sequence");
  sim->fallthrough();
  std::string pseq_path;
  std::vector<std::string> binds;
  std::optional<double> tau_ns, ke;
  double dt_sample = 1.0;
  sim->add_option("--pseq", pseq_path, "pulse sequence file (.pseq)")
      ->required();
  sim->add_option("--bind", binds, "variable binding name=value[ns|us]");
  sim->add_option("--tau", tau_ns, "shortcut for --bind tau=<ns>");
  sim->add_option("--ke", ke, "pump rate k_e in s^-1 (default: preset k_exp)");
  sim->add_option("--dt", dt_sample, "sampling step in ns");

  auto* exp = app.add_subcommand("experiment", "run a figure pipeline");
  exp->fallthrough();
  std::string exp_name;
  std::optional<double> hyperfine_a, window_ns;
  double b_field_mt = 10.7, linewidth_mhz = 20.0, depth = 0.05;
  exp->add_option("name", exp_name,
                  "pl-recovery | init-time | rabi-buffer | t1 | odmr-spectrum")
      ->required();
  exp->add_option("--hyperfine-a", hyperfine_a,
                  "hyperfine splitting in MHz (odmr-spectrum)");
  exp->add_option("--b-field", b_field_mt, "magnetic field in mT");
  exp->add_option("--linewidth", linewidth_mhz, "single-line FWHM in MHz");
  exp->add_option("--depth", depth, "summed dip depth");
  exp->add_option("--window", window_ns, "read-out integration window in ns");

  auto* fit_cmd = app.add_subcommand("fit", "fit a model to CSV data");
  fit_cmd->fallthrough();
  std::string model_name, csv_path;
  fit_cmd->add_option("model", model_name, "fit model name")->required();
  fit_cmd->add_option("csv", csv_path, "2- or 3-column CSV (x, y[, sigma])")
      ->required();

  auto* compile_cmd =
      app.add_subcommand("compile", "compile a pulse sequence to JSON");
  compile_cmd->fallthrough();
  std::string compile_path, sweep_arg;
  std::vector<std::string> compile_binds;
  compile_cmd->add_option("pseq", compile_path, "pulse sequence file")
      ->required();
  compile_cmd->add_option("--bind", compile_binds,
                          "variable binding name=value[ns|us]");
  compile_cmd->add_option("--sweep", sweep_arg,
                          "expand a sweep: name=start:stop:step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      return cmd_simulate(g, pseq_path, binds, tau_ns, ke, dt_sample);
    }
    if (exp->parsed()) {
      return cmd_experiment(g, exp_name, hyperfine_a, b_field_mt,
                            linewidth_mhz, depth, window_ns);
    }
    if (fit_cmd->parsed()) {
      return cmd_fit(g, model_name, csv_path);
    }
    if (compile_cmd->parsed()) {
      return cmd_compile(g, compile_path, compile_binds, sweep_arg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
