#ifndef SPHEREFLOW_EXPERIMENTS_HPP
#define SPHEREFLOW_EXPERIMENTS_HPP

// Monte Carlo harness: terminal-state detection, parameter sweeps and the
// cross-checks between the token simulator and the overlap oracle.
//
// Seeding: a cell's seed is hash(experiment seed, cell coordinates) and
// trajectory t of the cell uses the key (cell seed, t, step). Adding cells to
// a grid never changes the draws of existing cells, and results do not
// depend on the worker count.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sphereflow/dynamics.hpp"
#include "sphereflow/errors.hpp"
#include "sphereflow/geometry.hpp"
#include "sphereflow/noise.hpp"
#include "sphereflow/overlap.hpp"
#include "sphereflow/parallel.hpp"
#include "sphereflow/stats.hpp"

#ifndef SPHEREFLOW_VERSION
#define SPHEREFLOW_VERSION "1.0.0"
#endif

namespace sphereflow {

inline constexpr const char* kVersion = SPHEREFLOW_VERSION;

/// A cell fails when more than this fraction of its trajectories abort.
inline constexpr double kMaxAbortFraction = 1e-3;

struct DetectorConfig {
  double tol = 1e-3;

  void validate() const {
    if (!(tol > 0.0 && tol < 1.0)) throw InvalidArgument("detector: tol must lie in (0, 1)");
  }
};

enum class TerminalState { SingleCluster, AntipodalPair, AntipodalLoop, Undecided };

inline constexpr std::size_t kTerminalStateCount = 4;

inline const char* to_string(TerminalState s) {
  switch (s) {
    case TerminalState::SingleCluster: return "single_cluster";
    case TerminalState::AntipodalPair: return "antipodal_pair";
    case TerminalState::AntipodalLoop: return "antipodal_loop";
    case TerminalState::Undecided: return "undecided";
  }
  return "?";
}

/// Pair or loop: at least one pair of tokens is antipodal.
inline bool is_antipodal(TerminalState s) {
  return s == TerminalState::AntipodalPair || s == TerminalState::AntipodalLoop;
}

/// Priority SingleCluster > AntipodalLoop > AntipodalPair > Undecided. With
/// two tokens an antipodal pair is also a loop and is reported as such.
inline TerminalState detect_state(const TokenConfiguration& x, const DetectorConfig& det = {}) {
  const std::size_t n = x.size();
  bool all_aligned = true;
  bool all_decided = true;
  bool any_antipodal = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double g = dot(x[i], x[j]);
      if (g < 1.0 - det.tol) all_aligned = false;
      if (std::abs(g) < 1.0 - det.tol) all_decided = false;
      if (g <= -1.0 + det.tol) any_antipodal = true;
    }
  }
  if (all_aligned) return TerminalState::SingleCluster;
  if (any_antipodal && all_decided) return TerminalState::AntipodalLoop;
  if (any_antipodal) return TerminalState::AntipodalPair;
  return TerminalState::Undecided;
}

/// Per-cell tallies. Aborted trajectories are counted as Undecided and also
/// reported in `aborted`, so the state counts always sum to `trials`.
struct Cell {
  std::vector<double> coords;  // aligned with ExperimentResult::axes
  std::uint64_t trials = 0;
  std::array<std::uint64_t, kTerminalStateCount> counts{};
  std::uint64_t aborted = 0;
  std::string abort_message;  // first abort in trajectory order

  std::uint64_t count(TerminalState s) const { return counts[static_cast<std::size_t>(s)]; }
  std::uint64_t antipodal() const { return count(TerminalState::AntipodalPair) + count(TerminalState::AntipodalLoop); }
  bool failed() const { return static_cast<double>(aborted) > kMaxAbortFraction * static_cast<double>(trials); }

  Interval fraction(TerminalState s) const { return wilson_interval(count(s), trials); }
  Interval single_fraction() const { return fraction(TerminalState::SingleCluster); }
  Interval antipodal_fraction() const { return wilson_interval(antipodal(), trials); }
  Interval loop_fraction() const { return fraction(TerminalState::AntipodalLoop); }
  Interval undecided_fraction() const { return fraction(TerminalState::Undecided); }
};

struct ExperimentMetadata {
  std::string experiment;
  std::uint64_t seed = 0;
  std::size_t layers = 0;
  double horizon = 0.0;
  NoiseSpec noise;
  AttentionKind attention = AttentionKind::Softmax;
  std::string mode;
  DetectorConfig detector;
  double wall_clock_seconds = 0.0;
  std::string code_version = kVersion;
  std::map<std::string, std::string> extra;
};

struct ExperimentResult {
  ExperimentMetadata metadata;
  std::vector<std::string> axes;
  std::vector<Cell> cells;

  bool any_failed() const {
    return std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.failed(); });
  }
};

inline std::uint64_t cell_seed(std::uint64_t experiment_seed, const std::vector<double>& coords) {
  std::uint64_t h = mix64(experiment_seed ^ 0xc2b2ae3d27d4eb4fULL);
  for (double c : coords) h = hash_combine(h, std::bit_cast<std::uint64_t>(c));
  return h;
}

inline const char* to_string(AttentionKind k) { return k == AttentionKind::Softmax ? "softmax" : "unnormalized"; }

inline AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "softmax") return AttentionKind::Softmax;
  if (s == "unnormalized") return AttentionKind::Unnormalized;
  throw InvalidArgument("unknown attention kind '" + s + "'");
}

namespace detail {

struct CellJob {
  SimParams params;
  std::vector<double> coords;
  std::uint64_t seed = 0;
};

struct TrajectoryOutcome {
  TerminalState state = TerminalState::Undecided;
  bool aborted = false;
  std::string message;
};

inline TrajectoryOutcome run_and_detect(const SimParams& p, const StreamKey& key, const DetectorConfig& det) {
  TokenConfiguration x = initial_configuration(p, key);
  auto abort = evolve(p, key, x, [](std::uint64_t, double, const TokenConfiguration&) {});
  TrajectoryOutcome out;
  if (abort) {
    out.aborted = true;
    out.message = abort->message;
    return out;
  }
  out.state = detect_state(x, det);
  return out;
}

// Runs every (cell, trajectory) pair of `jobs` on the pool and tallies.
inline std::vector<Cell> run_cells(const std::vector<CellJob>& jobs, std::size_t trials, const DetectorConfig& det,
                                   std::size_t workers) {
  det.validate();
  for (const auto& j : jobs) j.params.validate();
  std::vector<TrajectoryOutcome> outcomes(jobs.size() * trials);
  parallel_for(outcomes.size(), workers, [&](std::size_t k) {
    const CellJob& job = jobs[k / trials];
    const std::uint64_t t = k % trials;
    outcomes[k] = run_and_detect(job.params, StreamKey{job.seed, t, 0}, det);
  });
  std::vector<Cell> cells;
  cells.reserve(jobs.size());
  for (std::size_t c = 0; c < jobs.size(); ++c) {
    Cell cell;
    cell.coords = jobs[c].coords;
    cell.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto& o = outcomes[c * trials + t];
      ++cell.counts[static_cast<std::size_t>(o.state)];
      if (o.aborted) {
        if (cell.aborted == 0) cell.abort_message = o.message;
        ++cell.aborted;
      }
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline ExperimentMetadata make_metadata(const std::string& name, std::uint64_t seed, std::size_t layers,
                                        double horizon, const NoiseSpec& noise, AttentionKind kind,
                                        const std::string& mode, const DetectorConfig& det) {
  ExperimentMetadata m;
  m.experiment = name;
  m.seed = seed;
  m.layers = layers;
  m.horizon = horizon;
  m.noise = noise;
  m.attention = kind;
  m.mode = mode;
  m.detector = det;
  return m;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    s += buf;
  }
  return s;
}

}  // namespace detail

/// Values lo, lo + step, ..., up to hi (inclusive within half a step).
inline std::vector<double> linear_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw InvalidArgument("grid: need step > 0 and hi >= lo");
  std::vector<double> g;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 0.5));
  for (std::size_t i = 0; i <= n; ++i) g.push_back(lo + static_cast<double>(i) * step);
  return g;
}

/// Common knobs of the token-simulation sweeps.
struct SweepCommon {
  std::size_t trials = 2000;
  std::size_t layers = 100;
  double horizon = 500.0;
  NoiseSpec noise;
  AttentionKind attention = AttentionKind::Softmax;
  DetectorConfig detector;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

/// Two tokens, FullNoise; axes (beta, d).
struct PhaseSweepSpec {
  std::vector<double> betas;
  std::vector<std::size_t> ds;
  SweepCommon common;
};

inline ExperimentResult phase_sweep_two_tokens(const PhaseSweepSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SweepCommon& c = spec.common;
  ExperimentResult r;
  r.axes = {"beta", "d"};
  r.metadata =
      detail::make_metadata("phase2d", c.seed, c.layers, c.horizon, c.noise, c.attention, "full", c.detector);
  std::vector<detail::CellJob> jobs;
  for (double beta : spec.betas) {
    for (std::size_t d : spec.ds) {
      detail::CellJob job;
      job.params.d = d;
      job.params.n_tokens = 2;
      job.params.layers = c.layers;
      job.params.horizon = c.horizon;
      job.params.attention = {c.attention, beta, std::nullopt};
      job.params.noise = c.noise;
      job.params.mode = FullNoise{};
      job.coords = {beta, static_cast<double>(d)};
      job.seed = cell_seed(c.seed, job.coords);
      jobs.push_back(std::move(job));
    }
  }
  r.cells = detail::run_cells(jobs, c.trials, c.detector, c.workers);
  r.metadata.wall_clock_seconds = detail::seconds_since(start);
  return r;
}

/// N tokens, FullNoise; axes (N, beta). Defaults follow the beta grid [0, 8] step 0.5 at d = 4.
struct MultiTokenSpec {
  std::vector<std::size_t> ns{2, 3, 4, 5};
  std::vector<double> betas = linear_grid(0.0, 8.0, 0.5);
  std::size_t d = 4;
  SweepCommon common;
};

inline ExperimentResult multi_token_sweep(const MultiTokenSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SweepCommon& c = spec.common;
  ExperimentResult r;
  r.axes = {"N", "beta"};
  r.metadata =
      detail::make_metadata("multitoken", c.seed, c.layers, c.horizon, c.noise, c.attention, "full", c.detector);
  r.metadata.extra["d"] = std::to_string(spec.d);
  std::vector<detail::CellJob> jobs;
  for (std::size_t n : spec.ns) {
    for (double beta : spec.betas) {
      detail::CellJob job;
      job.params.d = spec.d;
      job.params.n_tokens = n;
      job.params.layers = c.layers;
      job.params.horizon = c.horizon;
      job.params.attention = {c.attention, beta, std::nullopt};
      job.params.noise = c.noise;
      job.params.mode = FullNoise{};
      job.coords = {static_cast<double>(n), beta};
      job.seed = cell_seed(c.seed, job.coords);
      jobs.push_back(std::move(job));
    }
  }
  r.cells = detail::run_cells(jobs, c.trials, c.detector, c.workers);
  r.metadata.wall_clock_seconds = detail::seconds_since(start);
  return r;
}

/// Two tokens, Hybrid mode with scalar noise; axes (beta, epsilon).
/// Unnormalized attention by default: the threshold eps^2 = 2 e^{-beta} is the
/// one of the unnormalized overlap equation.
struct HybridSpec {
  std::vector<double> betas = linear_grid(0.0, 3.0, 0.5);
  std::vector<double> epsilons = linear_grid(0.25, 2.5, 0.25);
  std::size_t d = 3;
  SweepCommon common{1000, 100, 50.0, NoiseSpec{}, AttentionKind::Unnormalized, DetectorConfig{}, 0, 0};
};

inline ExperimentResult hybrid_phase_diagram(const HybridSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SweepCommon& c = spec.common;
  ExperimentResult r;
  r.axes = {"beta", "epsilon"};
  r.metadata =
      detail::make_metadata("hybrid", c.seed, c.layers, c.horizon, c.noise, c.attention, "hybrid", c.detector);
  r.metadata.extra["d"] = std::to_string(spec.d);
  std::vector<detail::CellJob> jobs;
  for (double beta : spec.betas) {
    for (double eps : spec.epsilons) {
      detail::CellJob job;
      job.params.d = spec.d;
      job.params.n_tokens = 2;
      job.params.layers = c.layers;
      job.params.horizon = c.horizon;
      job.params.attention = {c.attention, beta, std::nullopt};
      job.params.noise = c.noise;
      job.params.mode = Hybrid{eps};
      job.coords = {beta, eps};
      job.seed = cell_seed(c.seed, job.coords);
      jobs.push_back(std::move(job));
    }
  }
  r.cells = detail::run_cells(jobs, c.trials, c.detector, c.workers);
  r.metadata.wall_clock_seconds = detail::seconds_since(start);
  return r;
}

/// Label of the larger of the single-cluster and antipodal fractions.
inline const char* dominant_label(const Cell& c) {
  return c.count(TerminalState::SingleCluster) >= c.antipodal() ? "single" : "antipodal";
}

/// Fractions of each terminal state at every snapshot time; axis (time).
struct StabilitySpec {
  std::size_t n_tokens = 50;
  std::size_t d = 4;
  double beta = 5.0;
  std::size_t snapshot_stride = 0;  // steps; 0 selects L/10
  SweepCommon common{500, 100, 50.0, NoiseSpec{}, AttentionKind::Softmax, DetectorConfig{}, 0, 0};
};

inline ExperimentResult stability_timeseries(const StabilitySpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SweepCommon& c = spec.common;
  c.detector.validate();
  ExperimentResult r;
  r.axes = {"time"};
  r.metadata =
      detail::make_metadata("stability", c.seed, c.layers, c.horizon, c.noise, c.attention, "full", c.detector);
  r.metadata.extra["N"] = std::to_string(spec.n_tokens);
  r.metadata.extra["d"] = std::to_string(spec.d);
  r.metadata.extra["beta"] = detail::format_list({spec.beta});

  SimParams p;
  p.d = spec.d;
  p.n_tokens = spec.n_tokens;
  p.layers = c.layers;
  p.horizon = c.horizon;
  p.attention = {c.attention, spec.beta, std::nullopt};
  p.noise = c.noise;
  p.mode = FullNoise{};
  p.snapshot_stride = spec.snapshot_stride;
  p.validate();

  const std::uint64_t seed = cell_seed(c.seed, {static_cast<double>(spec.n_tokens), static_cast<double>(spec.d),
                                                spec.beta});
  std::vector<double> times;
  {
    const std::uint64_t steps = p.total_steps();
    const std::size_t stride = p.effective_stride();
    const double l = static_cast<double>(p.layers);
    times.push_back(0.0);
    for (std::uint64_t s = 1; s <= steps; ++s)
      if (s % stride == 0 || s == steps) times.push_back(static_cast<double>(s) / l);
  }
  struct Outcome {
    std::vector<TerminalState> states;
    std::optional<AbortRecord> abort;
  };
  std::vector<Outcome> outcomes(c.trials);
  parallel_for(c.trials, c.workers, [&](std::size_t t) {
    const StreamKey key{seed, t, 0};
    TokenConfiguration x = initial_configuration(p, key);
    Outcome& o = outcomes[t];
    o.states.reserve(times.size());
    o.abort = evolve(p, key, x, [&](std::uint64_t, double, const TokenConfiguration& cfg) {
      o.states.push_back(detect_state(cfg, c.detector));
    });
  });
  for (std::size_t k = 0; k < times.size(); ++k) {
    Cell cell;
    cell.coords = {times[k]};
    cell.trials = c.trials;
    for (const auto& o : outcomes) {
      if (k < o.states.size()) {
        ++cell.counts[static_cast<std::size_t>(o.states[k])];
      } else {
        // trajectory aborted before this snapshot
        ++cell.counts[static_cast<std::size_t>(TerminalState::Undecided)];
        if (cell.aborted == 0) cell.abort_message = o.abort->message;
        ++cell.aborted;
      }
    }
    r.cells.push_back(std::move(cell));
  }
  r.metadata.wall_clock_seconds = detail::seconds_since(start);
  return r;
}

/// Two tokens (e1, z e1 + sqrt(1 - z^2) e2) in R^d.
inline TokenConfiguration two_token_configuration(std::size_t d, double z) {
  if (d < 2) throw InvalidArgument("two_token_configuration: d must be >= 2");
  if (!(std::abs(z) <= 1.0)) throw InvalidArgument("two_token_configuration: |z| must be <= 1");
  TokenConfiguration x(2, d);
  x[0][0] = 1.0;
  x[1][0] = z;
  x[1][1] = std::sqrt(std::max(0.0, 1.0 - z * z));
  return x;
}

/// One-step moment check of Z = <X^1, X^2> under step_full against the
/// overlap SDE. `predicted_drift_sign` exists for fault injection: -1 flips
/// the predicted drift.
struct OverlapConsistencySpec {
  std::size_t d = 4;
  double beta = 1.0;
  double sigma = 1.0;
  AttentionKind attention = AttentionKind::Softmax;
  std::vector<double> z_points{-0.5, 0.0, 0.5};
  std::size_t samples = 100000;
  double layers = 1e4;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  double predicted_drift_sign = 1.0;
};

struct OverlapConsistencyRow {
  double z = 0.0;
  double mean = 0.0;
  double mean_se = 0.0;
  double predicted_mean = 0.0;
  double variance = 0.0;
  double variance_se = 0.0;
  double predicted_variance = 0.0;
  double mean_score = 0.0;      // (mean - predicted) / se
  double variance_score = 0.0;  // (variance - predicted) / se
};

inline OverlapModel overlap_model_for(AttentionKind kind, std::size_t d, double beta, double sigma) {
  return kind == AttentionKind::Softmax ? OverlapModel::full_softmax(d, beta, sigma)
                                        : OverlapModel::full_unnormalized(d, beta, sigma);
}

inline std::vector<OverlapConsistencyRow> overlap_consistency_report(const OverlapConsistencySpec& spec) {
  if (spec.samples < 2) throw InvalidArgument("overlap_consistency_report: need >= 2 samples");
  const OverlapModel model = overlap_model_for(spec.attention, spec.d, spec.beta, spec.sigma);
  const AttentionSpec att{spec.attention, spec.beta, std::nullopt};
  const NoiseSpec noise = NoiseSpec::gaussian(spec.sigma);
  std::vector<OverlapConsistencyRow> rows;
  for (double z : spec.z_points) {
    const TokenConfiguration x0 = two_token_configuration(spec.d, z);
    const double z_start = dot(x0[0], x0[1]);
    const std::uint64_t seed = cell_seed(spec.seed, {z});
    std::vector<double> dz(spec.samples);
    parallel_for(spec.samples, spec.workers, [&](std::size_t k) {
      const Matrix v = sample_value_matrix(StreamKey{seed, k, 0}, spec.d, noise);
      const TokenConfiguration x1 = step_full(x0, v, spec.layers, att);
      dz[k] = dot(x1[0], x1[1]) - z_start;
    });
    const MomentSummary m = summarize_moments(dz);
    OverlapConsistencyRow row;
    row.z = z;
    row.mean = m.mean;
    row.mean_se = m.mean_se;
    row.variance = m.variance;
    row.variance_se = m.variance_se;
    row.predicted_mean = spec.predicted_drift_sign * drift(model, z) / spec.layers;
    const double g = diffusion(model, z);
    row.predicted_variance = g * g / spec.layers;
    auto score = [](double a, double b, double se) { return se > 0.0 ? (a - b) / se : (a == b ? 0.0 : INFINITY); };
    // At |z| = 1 both sides vanish identically; compare with an absolute floor.
    if (std::abs(std::abs(z) - 1.0) < 1e-15) {
      row.mean_score = std::abs(row.mean - row.predicted_mean) <= 1e-12 ? 0.0 : INFINITY;
      row.variance_score = std::abs(row.variance - row.predicted_variance) <= 1e-12 ? 0.0 : INFINITY;
    } else {
      row.mean_score = score(row.mean, row.predicted_mean, row.mean_se);
      row.variance_score = score(row.variance, row.predicted_variance, row.variance_se);
    }
    rows.push_back(row);
  }
  return rows;
}

/// Coupled full vs. linearized dynamics driven by the same value matrices.
struct LinearizationSpec {
  std::vector<std::size_t> layers{50, 100, 200, 400};
  std::size_t d = 4;
  std::size_t n_tokens = 2;
  double beta = 1.0;
  double horizon = 1.0;
  std::size_t trials = 200;
  AttentionKind attention = AttentionKind::Softmax;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  bool zero_noise = false;  // diagnostic: V = 0 in both systems
};

struct LinearizationReport {
  std::vector<std::size_t> layers;
  std::vector<double> max_mean_square_deviation;  // max over steps of E sum_i |X^i - Y^i|^2
  std::vector<std::uint64_t> aborted;  // pairs stopped at a norm-band exit, still in the mean
  double slope = 0.0;  // log-log, NaN when a deviation is zero
};

inline LinearizationReport linearization_scaling(const LinearizationSpec& spec) {
  LinearizationReport rep;
  const AttentionSpec att{spec.attention, spec.beta, std::nullopt};
  for (std::size_t l : spec.layers) {
    SimParams p;
    p.d = spec.d;
    p.n_tokens = spec.n_tokens;
    p.layers = l;
    p.horizon = spec.horizon;
    p.attention = att;
    p.noise = spec.noise;
    p.validate();
    const std::uint64_t steps = p.total_steps();
    const double delta = 1.0 / std::sqrt(static_cast<double>(l));
    const std::uint64_t seed = cell_seed(spec.seed, {static_cast<double>(l)});
    std::vector<std::vector<double>> dev(spec.trials, std::vector<double>(steps, 0.0));
    std::vector<char> aborted(spec.trials, 0);
    parallel_for(spec.trials, spec.workers, [&](std::size_t t) {
      const StreamKey key{seed, t, 0};
      TokenConfiguration x = initial_configuration(p, key);
      TokenConfiguration y = x;
      NoiseSampler sampler(p.noise);
      Matrix v(p.d);
      AttentionField fx, fy;
      Vector u;
      for (std::uint64_t n = 0; n < steps; ++n) {
        KeyedEngine eng(key.with_step(n));
        sampler.fill(eng, v.data());
        if (spec.zero_noise) std::fill(v.data().begin(), v.data().end(), 0.0);
        fx.compute(x, att);
        fy.compute(y, att);
        detail::full_update(x, fx, v, delta, u);
        bool left_band = false;
        try {
          detail::linearized_update(y, fy, v, delta, u);
        } catch (const NormDrift&) {
          left_band = true;
        }
        double s = 0.0;
        for (std::size_t k = 0; k < x.data().size(); ++k) {
          const double e = x.data()[k] - y.data()[k];
          s += e * e;
        }
        dev[t][n] = s;
        if (left_band) {
          // stopped at the band exit: the deviation is frozen from here on
          aborted[t] = 1;
          std::fill(dev[t].begin() + static_cast<std::ptrdiff_t>(n), dev[t].end(), s);
          return;
        }
      }
    });
    double worst = 0.0;
    std::uint64_t n_aborted = 0;
    for (char a : aborted) n_aborted += a;
    for (std::uint64_t n = 0; n < steps; ++n) {
      double sum = 0.0;
      for (std::size_t t = 0; t < spec.trials; ++t) sum += dev[t][n];
      worst = std::max(worst, spec.trials > 0 ? sum / static_cast<double>(spec.trials) : 0.0);
    }
    rep.layers.push_back(l);
    rep.max_mean_square_deviation.push_back(worst);
    rep.aborted.push_back(n_aborted);
  }
  bool positive = rep.layers.size() >= 2;
  for (double v : rep.max_mean_square_deviation) positive = positive && v > 0.0;
  if (positive) {
    std::vector<double> ls(rep.layers.begin(), rep.layers.end());
    rep.slope = loglog_slope(ls, rep.max_mean_square_deviation);
  } else {
    rep.slope = std::nan("");
  }
  return rep;
}

/// Two-token antipodal fractions under several value-noise laws; axis
/// (noise), the coordinate being the NoiseKind index.
struct DistributionInvarianceSpec {
  std::vector<NoiseKind> kinds{NoiseKind::Gaussian, NoiseKind::Uniform, NoiseKind::Rademacher};
  std::size_t d = 4;
  double beta = 1.5;
  SweepCommon common{2000, 100, 50.0, NoiseSpec{}, AttentionKind::Softmax, DetectorConfig{}, 0, 0};
};

inline ExperimentResult distribution_invariance(const DistributionInvarianceSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SweepCommon& c = spec.common;
  ExperimentResult r;
  r.axes = {"noise"};
  r.metadata = detail::make_metadata("distribution_invariance", c.seed, c.layers, c.horizon, c.noise, c.attention,
                                     "full", c.detector);
  std::vector<detail::CellJob> jobs;
  for (NoiseKind k : spec.kinds) {
    detail::CellJob job;
    job.params.d = spec.d;
    job.params.n_tokens = 2;
    job.params.layers = c.layers;
    job.params.horizon = c.horizon;
    job.params.attention = {c.attention, spec.beta, std::nullopt};
    job.params.noise = NoiseSpec{k, c.noise.sigma, c.noise.truncation};
    job.params.mode = FullNoise{};
    job.coords = {static_cast<double>(static_cast<int>(k))};
    job.seed = cell_seed(c.seed, job.coords);
    jobs.push_back(std::move(job));
  }
  r.cells = detail::run_cells(jobs, c.trials, c.detector, c.workers);
  r.metadata.wall_clock_seconds = detail::seconds_since(start);
  return r;
}

/// |p1 - p2| / sqrt(p (1 - p) (1/n1 + 1/n2)) with the pooled proportion p.
inline double pooled_z_score(std::uint64_t k1, std::uint64_t n1, std::uint64_t k2, std::uint64_t n2) {
  const double p1 = static_cast<double>(k1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(k2) / static_cast<double>(n2);
  const double p = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
  const double se = std::sqrt(p * (1.0 - p) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  if (se == 0.0) return p1 == p2 ? 0.0 : INFINITY;
  return std::abs(p1 - p2) / se;
}

/// Largest pairwise pooled z-score of the antipodal fractions of `cells`.
inline double max_pairwise_antipodal_z(const std::vector<Cell>& cells) {
  double worst = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t j = i + 1; j < cells.size(); ++j)
      worst = std::max(worst, pooled_z_score(cells[i].antipodal(), cells[i].trials, cells[j].antipodal(),
                                             cells[j].trials));
  return worst;
}

/// Antipodal fractions of two tokens started from a fixed overlap z0, one cell
/// per dynamics mode; axis (mode index). Used to compare the discrete model
/// with its Euler-Maruyama continuum counterpart.
struct ModeComparisonSpec {
  std::vector<DynamicsMode> modes{FullNoise{}, ContinuousFull{1}};
  std::size_t d = 3;
  double beta = 1.0;
  double z0 = 0.0;
  SweepCommon common{2000, 100, 200.0, NoiseSpec{}, AttentionKind::Unnormalized, DetectorConfig{}, 0, 0};
};

inline ExperimentResult mode_comparison(const ModeComparisonSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SweepCommon& c = spec.common;
  ExperimentResult r;
  r.axes = {"mode"};
  r.metadata = detail::make_metadata("mode_comparison", c.seed, c.layers, c.horizon, c.noise, c.attention, "",
                                     c.detector);
  std::vector<detail::CellJob> jobs;
  for (std::size_t i = 0; i < spec.modes.size(); ++i) {
    detail::CellJob job;
    job.params.d = spec.d;
    job.params.n_tokens = 2;
    job.params.layers = c.layers;
    job.params.horizon = c.horizon;
    job.params.attention = {c.attention, spec.beta, std::nullopt};
    job.params.noise = c.noise;
    job.params.mode = spec.modes[i];
    job.params.initial = two_token_configuration(spec.d, spec.z0);
    job.coords = {static_cast<double>(i)};
    job.seed = cell_seed(c.seed, job.coords);
    r.metadata.mode += (i ? "," : "") + mode_name(spec.modes[i]);
    jobs.push_back(std::move(job));
  }
  r.cells = detail::run_cells(jobs, c.trials, c.detector, c.workers);
  r.metadata.wall_clock_seconds = detail::seconds_since(start);
  return r;
}

/// Fraction of Euler-Maruyama overlap paths ending at or below -1 + tol.
struct OverlapMonteCarlo {
  std::uint64_t paths = 0;
  std::uint64_t antipodal = 0;
  std::uint64_t aligned = 0;  // ending at or above 1 - tol
  Interval fraction;
};

inline OverlapMonteCarlo overlap_em_antipodal_fraction(const OverlapModel& model, double z0, double dt,
                                                       double horizon, std::uint64_t paths, std::uint64_t seed,
                                                       std::size_t workers, double tol = 1e-3) {
  const auto steps = static_cast<std::uint64_t>(std::floor(horizon / dt * (1.0 + 1e-12)));
  std::vector<double> ends(paths);
  parallel_for(paths, workers, [&](std::size_t k) {
    ends[k] = simulate_overlap_terminal(model, z0, dt, steps, StreamKey{seed, k, 0});
  });
  OverlapMonteCarlo mc;
  mc.paths = paths;
  for (double z : ends) {
    if (z <= -1.0 + tol) ++mc.antipodal;
    if (z >= 1.0 - tol) ++mc.aligned;
  }
  mc.fraction = wilson_interval(mc.antipodal, paths);
  return mc;
}

}  // namespace sphereflow

#endif  // SPHEREFLOW_EXPERIMENTS_HPP
