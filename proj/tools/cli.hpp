#ifndef SPHEREFLOW_TOOLS_CLI_HPP
#define SPHEREFLOW_TOOLS_CLI_HPP

// Command-line front end. Exit codes: 0 success, 1 usage or configuration
// error, 2 runtime or validation failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sphereflow/experiments.hpp"
#include "sphereflow/io.hpp"
#include "sphereflow/overlap.hpp"

namespace sphereflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

inline constexpr const char* kOutDirEnv = "SPHEREFLOW_OUT_DIR";

/// Usage / configuration problems (exit 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runtime problems that should be reported with exit 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Flat key = value file; '#' starts a comment. Keys may be written with or
/// without the leading "--".
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

/// "a,b,c" or "lo:step:hi".
inline std::vector<double> parse_real_list(const std::string& s) {
  std::vector<double> out;
  try {
    if (s.find(':') != std::string::npos) {
      std::vector<double> parts;
      std::stringstream ss(s);
      std::string tok;
      while (std::getline(ss, tok, ':')) parts.push_back(std::stod(tok));
      if (parts.size() != 3) throw ConfigError("range must be lo:step:hi, got '" + s + "'");
      return linear_grid(parts[0], parts[2], parts[1]);
    }
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(std::stod(tok));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse list '" + s + "'");
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

inline std::vector<std::size_t> parse_count_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (double v : parse_real_list(s)) {
    if (v < 0 || v != std::floor(v)) throw ConfigError("expected non-negative integers in '" + s + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

/// Options shared by every command.
struct CommonOptions {
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

/// Options of the token-simulation sweeps.
struct SweepOptions {
  std::optional<std::size_t> trials;
  std::size_t layers = 100;
  std::optional<double> horizon;
  std::string attention;
  std::string noise = "gaussian";
  double sigma = 1.0;
  double truncation = 6.0;
  double tol = 1e-3;
  bool plot = false;
  bool paper_scale = false;
};

inline void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "flat key = value file; flags override its values");
  sub->add_option("--out", o.out_dir, "output directory (default: $SPHEREFLOW_OUT_DIR or ./results)");
  sub->add_option("--seed", o.seed, "experiment seed")->capture_default_str();
  sub->add_option("--workers", o.workers, "worker threads, 0 = all cores")->capture_default_str();
}

inline void add_sweep(CLI::App* sub, SweepOptions& o) {
  sub->add_option("--trials", o.trials, "trajectories per cell");
  sub->add_option("--L", o.layers, "layers per unit time")->capture_default_str();
  sub->add_option("--T", o.horizon, "final time");
  sub->add_option("--attention", o.attention, "softmax | unnormalized")
      ->check(CLI::IsMember({"softmax", "unnormalized"}));
  sub->add_option("--noise", o.noise, "gaussian | truncated_gaussian | uniform | rademacher")
      ->check(CLI::IsMember({"gaussian", "truncated_gaussian", "uniform", "rademacher"}))
      ->capture_default_str();
  sub->add_option("--sigma", o.sigma, "noise standard deviation")->capture_default_str();
  sub->add_option("--truncation", o.truncation, "truncation level of truncated_gaussian")->capture_default_str();
  sub->add_option("--tol", o.tol, "detector tolerance")->capture_default_str();
  sub->add_flag("--plot", o.plot, "also write an SVG figure");
  sub->add_flag("--paper-scale", o.paper_scale, "use the large reference trial counts");
}

inline SweepCommon to_common(const SweepOptions& s, const CommonOptions& c, std::size_t default_trials,
                             std::size_t paper_trials, double default_horizon, AttentionKind default_attention) {
  SweepCommon out;
  out.trials = s.trials ? *s.trials : (s.paper_scale ? paper_trials : default_trials);
  out.layers = s.layers;
  out.horizon = s.horizon.value_or(default_horizon);
  out.noise = NoiseSpec{noise_kind_from_string(s.noise), s.sigma, s.truncation};
  out.noise.validate();
  out.attention = s.attention.empty() ? default_attention : attention_kind_from_string(s.attention);
  out.detector.tol = s.tol;
  out.detector.validate();
  out.seed = c.seed;
  out.workers = c.workers;
  return out;
}

inline std::filesystem::path resolve_out_dir(const CommonOptions& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "results";
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p.parent_path(), ec);
  if (ec) throw RuntimeFailure("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + p.string() + "'");
  return out;
}

inline void finish_output(std::ofstream& out, const std::filesystem::path& p) {
  out.close();
  if (!out) throw RuntimeFailure("write failed for '" + p.string() + "'");
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  auto out = open_output(p);
  out << text;
  finish_output(out, p);
}

inline void emit_result(const ExperimentResult& r, const CommonOptions& c, bool plot, std::ostream& log) {
  const auto dir = resolve_out_dir(c);
  const auto csv = dir / (r.metadata.experiment + ".csv");
  {
    std::ostringstream os;
    write_result_csv(os, r);
    write_text(csv, os.str());
  }
  write_text(dir / (r.metadata.experiment + ".json"), result_json(r).dump(2) + "\n");
  log << "wrote " << csv.string() << " (" << r.cells.size() << " cells)\n";
  if (plot) {
    std::ostringstream os;
    write_result_svg(os, r);  // throws "nothing to plot" on empty results
    const auto svg = dir / (r.metadata.experiment + ".svg");
    write_text(svg, os.str());
    log << "wrote " << svg.string() << "\n";
  }
  for (const Cell& cell : r.cells) {
    if (cell.failed()) {
      throw RuntimeFailure("cell " + detail::format_list(cell.coords) + ": " + std::to_string(cell.aborted) + " of " +
                           std::to_string(cell.trials) + " trajectories aborted (" + cell.abort_message + ")");
    }
  }
}

// ---------------------------------------------------------------------------

struct SimulateOptions {
  std::string mode = "full";
  std::size_t d = 4;
  std::size_t n = 2;
  double beta = 1.0;
  std::size_t layers = 100;
  double horizon = 50.0;
  std::size_t trials = 1;
  std::string attention = "softmax";
  std::string noise = "gaussian";
  double sigma = 1.0;
  double truncation = 6.0;
  double epsilon = 1.0;
  int substeps = 1;
  std::size_t stride = 0;
};

inline DynamicsMode parse_mode(const SimulateOptions& o) {
  if (o.mode == "full") return FullNoise{};
  if (o.mode == "hybrid") return Hybrid{o.epsilon};
  if (o.mode == "linearized") return Linearized{};
  if (o.mode == "continuous_full") return ContinuousFull{o.substeps};
  if (o.mode == "continuous_hybrid") return ContinuousHybrid{o.epsilon, o.substeps};
  throw ConfigError("unknown mode '" + o.mode + "'");
}

inline int cmd_simulate(const SimulateOptions& o, const CommonOptions& c, std::ostream& log) {
  SimParams p;
  p.d = o.d;
  p.n_tokens = o.n;
  p.layers = o.layers;
  p.horizon = o.horizon;
  p.attention = {attention_kind_from_string(o.attention), o.beta, std::nullopt};
  p.noise = NoiseSpec{noise_kind_from_string(o.noise), o.sigma, o.truncation};
  p.mode = parse_mode(o);
  p.snapshot_stride = o.stride;
  try {
    p.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto dir = resolve_out_dir(c) / "simulate";
  std::vector<Trajectory> trajs(o.trials);
  parallel_for(o.trials, c.workers, [&](std::size_t t) { trajs[t] = run(p, StreamKey{c.seed, t, 0}); });
  bool aborted = false;
  for (std::size_t t = 0; t < o.trials; ++t) {
    const auto base = dir / ("trajectory_" + std::to_string(t));
    std::ostringstream os;
    write_trajectory_csv(os, trajs[t]);
    write_text(base.string() + ".csv", os.str());
    write_text(base.string() + ".json", trajectory_json(trajs[t], c.seed).dump(2) + "\n");
    if (trajs[t].aborted()) {
      aborted = true;
      log << "trajectory " << t << " aborted at step " << trajs[t].abort->step << ": " << trajs[t].abort->message
          << "\n";
    }
  }
  log << "wrote " << o.trials << " trajectories to " << dir.string() << "\n";
  return aborted ? kExitFailure : kExitOk;
}

// ---------------------------------------------------------------------------

struct OracleOptions {
  std::string kind = "full_unnormalized";
  std::size_t d = 4;
  double beta = 1.0;
  double sigma = 1.0;
  double epsilon = 1.0;
  double z0 = 0.0;
  std::size_t points = 199;
};

inline nlohmann::json oracle_report(const OverlapModel& m, double z0) {
  const BoundaryReport b = boundary_report(m);
  nlohmann::json j;
  j["schema"] = "sphereflow/oracle/" + std::to_string(kCsvSchemaVersion);
  j["kind"] = to_string(m.kind);
  j["beta"] = m.beta;
  if (m.is_full()) {
    j["d"] = m.d;
    j["sigma"] = m.sigma;
    j["beta_c"] = critical_beta(static_cast<double>(m.d));
  } else {
    j["epsilon"] = m.epsilon;
  }
  j["epsilon_c"] = critical_epsilon(m.beta);
  j["exponent_plus"] = b.exponent_plus;
  j["exponent_minus"] = b.exponent_minus;
  j["plus_attracting"] = b.plus_attracting;
  j["minus_attracting"] = b.minus_attracting;
  j["scale_integrable_plus"] = b.scale_integrable_plus;
  j["scale_integrable_minus"] = b.scale_integrable_minus;
  j["z0"] = z0;
  try {
    j["antipodal_probability"] = antipodal_probability(m, z0);
  } catch (const InvalidArgument& e) {
    j["antipodal_probability"] = nullptr;
    j["antipodal_probability_note"] = e.what();
  }
  if (m.is_full()) j["antipodal_probability_uniform_start"] = antipodal_probability_uniform_start(m);
  j["code_version"] = kVersion;
  return j;
}

inline int cmd_oracle(const OracleOptions& o, const CommonOptions& c, std::ostream& log) {
  OverlapModel m;
  if (o.kind == "full_unnormalized") {
    m = OverlapModel::full_unnormalized(o.d, o.beta, o.sigma);
  } else if (o.kind == "full_softmax") {
    m = OverlapModel::full_softmax(o.d, o.beta, o.sigma);
  } else if (o.kind == "hybrid") {
    m = OverlapModel::hybrid(o.beta, o.epsilon);
  } else {
    throw ConfigError("unknown overlap kind '" + o.kind + "'");
  }
  try {
    m.validate();
    if (!(std::abs(o.z0) < 1.0)) throw InvalidArgument("z0 must lie in (-1, 1)");
    if (o.points < 1) throw InvalidArgument("points must be >= 1");
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto dir = resolve_out_dir(c);
  std::ostringstream os;
  write_oracle_csv(os, m, o.points);
  write_text(dir / "oracle.csv", os.str());
  const nlohmann::json report = oracle_report(m, o.z0);
  write_text(dir / "oracle.json", report.dump(2) + "\n");
  log << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ValidateOptions {
  bool quick = false;
  std::string inject_fault;
};

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline std::vector<CheckLine> run_validation(const ValidateOptions& o, const CommonOptions& c, std::ostream& log) {
  std::vector<CheckLine> checks;
  auto record = [&](CheckLine line) {
    log << (line.pass ? "PASS " : "FAIL ") << line.name << ": " << line.detail << "\n" << std::flush;
    checks.push_back(std::move(line));
  };
  const bool flip = o.inject_fault == "drift-sign";

  // One-step moments of the overlap against the overlap SDE.
  for (AttentionKind kind : {AttentionKind::Unnormalized, AttentionKind::Softmax}) {
    OverlapConsistencySpec s;
    s.attention = kind;
    s.samples = o.quick ? 20000 : 100000;
    s.seed = c.seed;
    s.workers = c.workers;
    // The fault targets the unnormalized drift only.
    s.predicted_drift_sign = (flip && kind == AttentionKind::Unnormalized) ? -1.0 : 1.0;
    double worst = 0.0;
    for (const auto& row : overlap_consistency_report(s))
      worst = std::max({worst, std::abs(row.mean_score), std::abs(row.variance_score)});
    record({std::string("overlap moments (") + to_string(kind) + ")", worst < 3.0,
            "max |standardized discrepancy| = " + format_real(worst)});
  }

  {
    LinearizationSpec s;
    s.trials = 2000;
    s.seed = c.seed;
    s.workers = c.workers;
    const auto rep = linearization_scaling(s);
    record({"linearization coupling", rep.slope <= -1.5, "log-log slope = " + format_real(rep.slope)});
  }

  {
    DistributionInvarianceSpec s;
    s.common.trials = o.quick ? 300 : 2000;
    s.common.horizon = o.quick ? 20.0 : 50.0;
    s.common.seed = c.seed;
    s.common.workers = c.workers;
    const auto r = distribution_invariance(s);
    const double z = max_pairwise_antipodal_z(r.cells);
    record({"distribution invariance", z < 3.0 && !r.any_failed(), "max pooled z = " + format_real(z)});
  }

  {
    ModeComparisonSpec s;
    s.common.trials = o.quick ? 300 : 2000;
    s.common.horizon = o.quick ? 100.0 : 200.0;
    s.common.seed = c.seed;
    s.common.workers = c.workers;
    const auto r = mode_comparison(s);
    const double z = max_pairwise_antipodal_z(r.cells);
    const double p = antipodal_probability(OverlapModel::full_unnormalized(s.d, s.beta), s.z0);
    double worst = 0.0;
    for (const Cell& cell : r.cells) worst = std::max(worst, std::abs(cell.antipodal_fraction().estimate - p));
    const double band = o.quick ? 0.08 : 0.03;
    record({"discrete vs Euler-Maruyama", z < 3.0 && worst <= band && !r.any_failed(),
            "pooled z = " + format_real(z) + ", max |fraction - oracle| = " + format_real(worst)});
  }
  return checks;
}

inline int cmd_validate(const ValidateOptions& o, const CommonOptions& c, std::ostream& log) {
  if (!o.inject_fault.empty() && o.inject_fault != "drift-sign")
    throw ConfigError("unknown fault '" + o.inject_fault + "' (known: drift-sign)");
  const auto checks = run_validation(o, c, log);
  nlohmann::json j;
  j["schema"] = "sphereflow/validate/" + std::to_string(kCsvSchemaVersion);
  j["quick"] = o.quick;
  j["seed"] = c.seed;
  if (!o.inject_fault.empty()) j["inject_fault"] = o.inject_fault;
  bool ok = true;
  for (const auto& ch : checks) {
    j["checks"].push_back({{"name", ch.name}, {"pass", ch.pass}, {"detail", ch.detail}});
    ok = ok && ch.pass;
  }
  j["pass"] = ok;
  write_text(resolve_out_dir(c) / "validate.json", j.dump(2) + "\n");
  log << (ok ? "validation passed" : "validation FAILED") << "\n";
  return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

/// Rewrites `args` so that values from a --config file come first and the
/// explicit flags (parsed later, last one wins) override them. Keys are
/// checked against the subcommand's options.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app) {
  if (args.size() < 2) return args;
  CLI::App* sub = nullptr;
  for (CLI::App* s : app.get_subcommands([](CLI::App*) { return true; }))
    if (s->get_name() == args[1]) sub = s;
  if (!sub) return args;
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> out{args[0], args[1]};
  for (const auto& [key, value] : read_config_file(path)) {
    if (key == "config") throw ConfigError("config files cannot include other config files");
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw ConfigError("unknown key '" + key + "' in " + path + " for command " + args[1]);
    out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

/// Parses and runs a command line. Diagnostics go to `err`, progress to `log`.
inline int run_cli(const std::vector<std::string>& raw_args, std::ostream& log = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Monte Carlo and analytic tools for noisy self-attention dynamics on the sphere", "sphereflow"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", std::string(kVersion));

  CommonOptions common;

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "run trajectories and write snapshot CSVs");
  add_common(simulate, common);
  simulate->add_option("--mode", sim.mode, "full | hybrid | linearized | continuous_full | continuous_hybrid")
      ->check(CLI::IsMember({"full", "hybrid", "linearized", "continuous_full", "continuous_hybrid"}))
      ->capture_default_str();
  simulate->add_option("--d", sim.d)->capture_default_str();
  simulate->add_option("--N", sim.n, "tokens")->capture_default_str();
  simulate->add_option("--beta", sim.beta)->capture_default_str();
  simulate->add_option("--L", sim.layers)->capture_default_str();
  simulate->add_option("--T", sim.horizon)->capture_default_str();
  simulate->add_option("--trials", sim.trials)->capture_default_str();
  simulate->add_option("--attention", sim.attention)
      ->check(CLI::IsMember({"softmax", "unnormalized"}))
      ->capture_default_str();
  simulate->add_option("--noise", sim.noise)
      ->check(CLI::IsMember({"gaussian", "truncated_gaussian", "uniform", "rademacher"}))
      ->capture_default_str();
  simulate->add_option("--sigma", sim.sigma)->capture_default_str();
  simulate->add_option("--truncation", sim.truncation)->capture_default_str();
  simulate->add_option("--epsilon", sim.epsilon, "hybrid noise amplitude")->capture_default_str();
  simulate->add_option("--substeps", sim.substeps, "Euler-Maruyama steps per layer")->capture_default_str();
  simulate->add_option("--stride", sim.stride, "snapshot stride in layers, 0 = L/10")->capture_default_str();

  SweepOptions sweep;
  std::string betas, ds, ns, epsilons;
  std::size_t d_single = 0, n_single = 50;
  double beta_single = 5.0;
  std::size_t stride = 0;

  auto* phase2d = app.add_subcommand("phase2d", "two-token antipodal fraction over (beta, d)");
  add_common(phase2d, common);
  add_sweep(phase2d, sweep);
  phase2d->add_option("--betas", betas, "list a,b,c or range lo:step:hi");
  phase2d->add_option("--ds", ds, "dimensions");

  auto* multitoken = app.add_subcommand("multitoken", "at-least-one-antipodal-pair fraction over (N, beta)");
  add_common(multitoken, common);
  add_sweep(multitoken, sweep);
  multitoken->add_option("--Ns", ns, "token counts");
  multitoken->add_option("--betas", betas);
  multitoken->add_option("--d", d_single);

  auto* hybrid = app.add_subcommand("hybrid", "hybrid-model phase diagram over (beta, epsilon)");
  add_common(hybrid, common);
  add_sweep(hybrid, sweep);
  hybrid->add_option("--betas", betas);
  hybrid->add_option("--epsilons", epsilons);
  hybrid->add_option("--d", d_single);

  auto* stability = app.add_subcommand("stability", "terminal-state fractions over time");
  add_common(stability, common);
  add_sweep(stability, sweep);
  stability->add_option("--N", n_single)->capture_default_str();
  stability->add_option("--d", d_single);
  stability->add_option("--beta", beta_single)->capture_default_str();
  stability->add_option("--stride", stride, "snapshot stride in layers, 0 = L/10");

  OracleOptions orc;
  auto* oracle = app.add_subcommand("oracle", "overlap SDE tables and boundary report");
  add_common(oracle, common);
  oracle->add_option("--kind", orc.kind, "full_unnormalized | full_softmax | hybrid")
      ->check(CLI::IsMember({"full_unnormalized", "full_softmax", "hybrid"}))
      ->capture_default_str();
  oracle->add_option("--d", orc.d)->capture_default_str();
  oracle->add_option("--beta", orc.beta)->capture_default_str();
  oracle->add_option("--sigma", orc.sigma)->capture_default_str();
  oracle->add_option("--epsilon", orc.epsilon)->capture_default_str();
  oracle->add_option("--z0", orc.z0)->capture_default_str();
  oracle->add_option("--points", orc.points, "grid points in (-1, 1)")->capture_default_str();

  ValidateOptions val;
  auto* validate = app.add_subcommand("validate", "cross-check the simulator against the analytic oracle");
  add_common(validate, common);
  validate->add_flag("--quick", val.quick, "reduced sample counts");
  validate->add_option("--inject-fault", val.inject_fault, "deliberately break a check (drift-sign)");

  std::vector<std::string> args;
  try {
    args = expand_config(raw_args, app);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    log << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    log << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim, common, log);
    if (oracle->parsed()) return cmd_oracle(orc, common, log);
    if (validate->parsed()) return cmd_validate(val, common, log);

    ExperimentResult result;
    try {
      if (phase2d->parsed()) {
        PhaseSweepSpec s;
        s.betas = betas.empty() ? linear_grid(0.25, 3.0, 0.25) : parse_real_list(betas);
        s.ds = ds.empty() ? std::vector<std::size_t>{4, 5, 6} : parse_count_list(ds);
        s.common = to_common(sweep, common, 2000, 40000, 500.0, AttentionKind::Softmax);
        for (auto& v : s.ds)
          if (v < 2) throw InvalidArgument("d must be >= 2");
        log << "phase2d: " << s.betas.size() * s.ds.size() << " cells x " << s.common.trials << " trajectories\n"
            << std::flush;
        result = phase_sweep_two_tokens(s);
      } else if (multitoken->parsed()) {
        MultiTokenSpec s;
        if (!ns.empty()) s.ns = parse_count_list(ns);
        if (!betas.empty()) s.betas = parse_real_list(betas);
        if (d_single) s.d = d_single;
        s.common = to_common(sweep, common, 1000, 10000, 50.0, AttentionKind::Softmax);
        log << "multitoken: " << s.ns.size() * s.betas.size() << " cells x " << s.common.trials << " trajectories\n"
            << std::flush;
        result = multi_token_sweep(s);
      } else if (hybrid->parsed()) {
        HybridSpec s;
        if (!betas.empty()) s.betas = parse_real_list(betas);
        if (!epsilons.empty()) s.epsilons = parse_real_list(epsilons);
        if (d_single) s.d = d_single;
        s.common = to_common(sweep, common, 1000, 1000, 50.0, AttentionKind::Unnormalized);
        if (sweep.paper_scale && betas.empty() && epsilons.empty()) {
          s.betas = linear_grid(0.0, 4.0, 0.25);
          s.epsilons = linear_grid(0.1, 2.5, 0.1);
        }
        if (s.common.noise.sigma != 1.0) throw InvalidArgument("hybrid mode requires --sigma 1");
        log << "hybrid: " << s.betas.size() * s.epsilons.size() << " cells x " << s.common.trials
            << " trajectories\n" << std::flush;
        result = hybrid_phase_diagram(s);
      } else if (stability->parsed()) {
        StabilitySpec s;
        s.n_tokens = n_single;
        if (d_single) s.d = d_single;
        s.beta = beta_single;
        s.snapshot_stride = stride;
        s.common = to_common(sweep, common, 500, 10000, 50.0, AttentionKind::Softmax);
        log << "stability: " << s.common.trials << " trajectories\n" << std::flush;
        result = stability_timeseries(s);
      }
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    emit_result(result, common, sweep.plot, log);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    // raised while rendering (e.g. "nothing to plot")
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

inline int run_cli(int argc, char** argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return run_cli(std::vector<std::string>(argv, argv + argc), log, err);
}

}  // namespace sphereflow::cli

#endif  // SPHEREFLOW_TOOLS_CLI_HPP
