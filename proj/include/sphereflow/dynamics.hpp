#ifndef SPHEREFLOW_DYNAMICS_HPP
#define SPHEREFLOW_DYNAMICS_HPP

// Time steppers for the discrete and continuous token dynamics, and the
// trajectory runner.
//
// All steppers are synchronous: the attention field of every token is
// evaluated on the pre-step configuration before any token moves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "sphereflow/errors.hpp"
#include "sphereflow/geometry.hpp"
#include "sphereflow/noise.hpp"

namespace sphereflow {

/// Norm band tolerated by the (non-renormalized) linearized dynamics.
inline constexpr double kLinearizedNormMin = 0.5;
inline constexpr double kLinearizedNormMax = 2.0;

/// Discrete model with a fresh random value matrix per layer, step 1/sqrt(L).
struct FullNoise {};
/// Discrete model with layer weight 1/L + epsilon * v / sqrt(L) and identity value matrix.
struct Hybrid {
  double epsilon = 0.0;
};
/// Second-order truncation of FullNoise, without renormalization.
struct Linearized {};
/// Euler-Maruyama for the full-noise SDE; `substeps` EM steps per 1/L.
struct ContinuousFull {
  int substeps = 1;
};
/// Euler-Maruyama for the hybrid SDE.
struct ContinuousHybrid {
  double epsilon = 0.0;
  int substeps = 1;
};

using DynamicsMode = std::variant<FullNoise, Hybrid, Linearized, ContinuousFull, ContinuousHybrid>;

inline std::string mode_name(const DynamicsMode& m) {
  static const char* names[] = {"full", "hybrid", "linearized", "continuous_full", "continuous_hybrid"};
  return names[m.index()];
}

/// Parameters of one trajectory. `sigma` of the value noise lives in `noise`;
/// the continuous modes use it as the Brownian amplitude.
struct SimParams {
  std::size_t d = 4;
  std::size_t n_tokens = 2;
  std::size_t layers = 100;  // L: layers per unit of time
  double horizon = 50.0;     // T
  AttentionSpec attention;
  NoiseSpec noise;
  DynamicsMode mode = FullNoise{};
  std::optional<TokenConfiguration> initial;  // empty: uniform on the sphere
  std::size_t snapshot_stride = 0;            // in steps; 0 selects L/10

  /// floor(T * L), guarded against T*L landing a rounding error below an integer.
  std::uint64_t total_steps() const {
    return static_cast<std::uint64_t>(std::floor(horizon * static_cast<double>(layers) * (1.0 + 1e-12)));
  }

  std::size_t effective_stride() const {
    if (snapshot_stride > 0) return snapshot_stride;
    return std::max<std::size_t>(1, layers / 10);
  }

  void validate() const {
    if (d < 2) throw InvalidArgument("d must be >= 2");
    if (n_tokens < 1) throw InvalidArgument("N must be >= 1");
    if (layers < 1) throw InvalidArgument("L must be >= 1");
    if (!(horizon >= 0.0)) throw InvalidArgument("T must be >= 0");
    if (!(attention.beta >= 0.0)) throw InvalidArgument("beta must be >= 0");
    if (attention.qk) check_same_dim(attention.qk->dim(), d, "Q^T K vs d");
    noise.validate();
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, Hybrid> || std::is_same_v<M, ContinuousHybrid>) {
            if (!(m.epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
          }
          if constexpr (std::is_same_v<M, Hybrid>) {
            if (noise.sigma != 1.0) throw InvalidArgument("hybrid mode requires unit-variance scalar noise (sigma = 1)");
          }
          if constexpr (std::is_same_v<M, ContinuousFull> || std::is_same_v<M, ContinuousHybrid>) {
            if (m.substeps < 1) throw InvalidArgument("substeps must be >= 1");
          }
        },
        mode);
    if (initial) {
      if (initial->size() != n_tokens || initial->dim() != d) {
        throw DimensionMismatch("initial configuration does not match (N, d)");
      }
      initial->require_unit();
    }
  }
};

struct Snapshot {
  std::uint64_t step = 0;
  double time = 0.0;
  TokenConfiguration tokens;
};

/// Diagnostic left behind when a step fails.
struct AbortRecord {
  std::uint64_t step = 0;
  std::vector<double> norms;
  std::string message;
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  TokenConfiguration terminal;
  SimParams params;
  StreamKey base_key;
  std::optional<AbortRecord> abort;

  bool aborted() const { return abort.has_value(); }
};

namespace detail {

inline void full_update(TokenConfiguration& x, const AttentionField& field, const Matrix& v, double delta,
                        Vector& u) {
  u.resize(x.dim());
  for (std::size_t i = 0; i < x.size(); ++i) {
    v.apply(field[i], u);
    normalized_update_into(x[i], u, delta, x[i]);
  }
}

inline void hybrid_update(TokenConfiguration& x, const AttentionField& field, double omega) {
  for (std::size_t i = 0; i < x.size(); ++i) normalized_update_into(x[i], field[i], omega, x[i]);
}

inline void linearized_update(TokenConfiguration& x, const AttentionField& field, const Matrix& v, double delta,
                              Vector& u) {
  const std::size_t d = x.dim();
  u.resize(d);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xi = x[i];
    v.apply(field[i], u);
    const double a = dot(xi, u);
    const double b = dot(u, u);
    const double c = 1.5 * a * a - 0.5 * b;
    // x + delta * (u - a x) + delta^2 * (c x - a u)
    for (std::size_t k = 0; k < d; ++k) {
      xi[k] = xi[k] + delta * (u[k] - a * xi[k]) + delta * delta * (c * xi[k] - a * u[k]);
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = norm(x[i]);
    if (!(n >= kLinearizedNormMin && n <= kLinearizedNormMax)) {
      throw NormDrift("linearized dynamics: token " + std::to_string(i) + " norm " + std::to_string(n) +
                      " left [0.5, 2]");
    }
  }
}

inline void em_full_update(TokenConfiguration& x, const AttentionField& field, const Matrix& dw, double dt,
                           double sigma, Vector& u, bool renormalize) {
  const std::size_t d = x.dim();
  u.resize(d);
  const double c = 0.5 * (1.0 - static_cast<double>(d)) * sigma * sigma;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xi = x[i];
    const auto ai = field[i];
    dw.apply(ai, u);
    const double drift = c * dot(ai, ai) * dt;
    const double a = dot(xi, u);
    for (std::size_t k = 0; k < d; ++k) xi[k] = xi[k] + drift * xi[k] + sigma * (u[k] - a * xi[k]);
    if (renormalize) normalize_in_place(xi);
  }
}

inline void em_hybrid_update(TokenConfiguration& x, const AttentionField& field, double db, double dt,
                             double epsilon) {
  const std::size_t d = x.dim();
  const double e2 = epsilon * epsilon;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xi = x[i];
    const auto ai = field[i];
    const double a = dot(xi, ai);
    const double b = dot(ai, ai);
    const double c = 1.5 * a * a - 0.5 * b;
    // P = A - a x, F = c x - a A
    for (std::size_t k = 0; k < d; ++k) {
      const double p = ai[k] - a * xi[k];
      const double f = c * xi[k] - a * ai[k];
      xi[k] = xi[k] + (e2 * f + p) * dt + epsilon * p * db;
    }
    normalize_in_place(xi);
  }
}

}  // namespace detail

/// One layer of the full-noise model: X^i <- normalize(X^i + V A_i / sqrt(L)).
inline TokenConfiguration step_full(const TokenConfiguration& config, const Matrix& v, double layers,
                                    const AttentionSpec& spec) {
  check_same_dim(v.dim(), config.dim(), "step_full: V vs tokens");
  AttentionField field;
  field.compute(config, spec);
  TokenConfiguration out = config;
  Vector u;
  detail::full_update(out, field, v, 1.0 / std::sqrt(layers), u);
  return out;
}

/// One layer of the hybrid model with weight 1/L + epsilon v / sqrt(L).
inline TokenConfiguration step_hybrid(const TokenConfiguration& config, double v, double layers, double epsilon,
                                      const AttentionSpec& spec) {
  AttentionField field;
  field.compute(config, spec);
  TokenConfiguration out = config;
  detail::hybrid_update(out, field, 1.0 / layers + epsilon * v / std::sqrt(layers));
  return out;
}

/// Truncated expansion X + P_X[V A]/sqrt(L) + G(X, V A)/L; not renormalized.
/// Throws NormDrift when a token norm leaves [0.5, 2].
inline TokenConfiguration step_linearized(const TokenConfiguration& config, const Matrix& v, double layers,
                                          const AttentionSpec& spec) {
  check_same_dim(v.dim(), config.dim(), "step_linearized: V vs tokens");
  AttentionField field;
  field.compute(config, spec);
  TokenConfiguration out = config;
  Vector u;
  detail::linearized_update(out, field, v, 1.0 / std::sqrt(layers), u);
  return out;
}

/// Euler-Maruyama step of the full-noise SDE with common increment `dw`
/// (entries ~ N(0, dt)). Pass `renormalize = false` to inspect the raw
/// increment before projection back to the sphere.
inline TokenConfiguration step_em_full(const TokenConfiguration& config, const Matrix& dw, double dt, double sigma,
                                       const AttentionSpec& spec, bool renormalize = true) {
  check_same_dim(dw.dim(), config.dim(), "step_em_full: dW vs tokens");
  AttentionField field;
  field.compute(config, spec);
  TokenConfiguration out = config;
  Vector u;
  detail::em_full_update(out, field, dw, dt, sigma, u, renormalize);
  return out;
}

/// Euler-Maruyama step of the hybrid SDE with common scalar increment `db`.
inline TokenConfiguration step_em_hybrid(const TokenConfiguration& config, double db, double dt, double epsilon,
                                         const AttentionSpec& spec) {
  AttentionField field;
  field.compute(config, spec);
  TokenConfiguration out = config;
  detail::em_hybrid_update(out, field, db, dt, epsilon);
  return out;
}

/// Advances a configuration one layer (1/L of time) at a time, drawing the
/// layer's noise from the key (seed, trajectory, layer index).
class Stepper {
 public:
  Stepper(const SimParams& params, const StreamKey& base_key)
      : p_(params), key_(base_key), sampler_(params.noise), v_(params.d) {}

  void advance(TokenConfiguration& x, std::uint64_t layer) {
    KeyedEngine eng(key_.with_step(layer));
    const double l = static_cast<double>(p_.layers);
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, FullNoise>) {
            sampler_.fill(eng, v_.data());
            field_.compute(x, p_.attention);
            detail::full_update(x, field_, v_, 1.0 / std::sqrt(l), u_);
          } else if constexpr (std::is_same_v<M, Linearized>) {
            sampler_.fill(eng, v_.data());
            field_.compute(x, p_.attention);
            detail::linearized_update(x, field_, v_, 1.0 / std::sqrt(l), u_);
          } else if constexpr (std::is_same_v<M, Hybrid>) {
            const double v = sampler_(eng);
            field_.compute(x, p_.attention);
            detail::hybrid_update(x, field_, 1.0 / l + m.epsilon * v / std::sqrt(l));
          } else if constexpr (std::is_same_v<M, ContinuousFull>) {
            const double dt = 1.0 / (l * m.substeps);
            const double sdt = std::sqrt(dt);
            for (int s = 0; s < m.substeps; ++s) {
              for (double& w : v_.data()) w = sdt * standard_normal(eng);
              field_.compute(x, p_.attention);
              detail::em_full_update(x, field_, v_, dt, p_.noise.sigma, u_, true);
            }
          } else if constexpr (std::is_same_v<M, ContinuousHybrid>) {
            const double dt = 1.0 / (l * m.substeps);
            const double sdt = std::sqrt(dt);
            for (int s = 0; s < m.substeps; ++s) {
              const double db = sdt * standard_normal(eng);
              field_.compute(x, p_.attention);
              detail::em_hybrid_update(x, field_, db, dt, m.epsilon);
            }
          }
        },
        p_.mode);
  }

 private:
  const SimParams& p_;
  StreamKey key_;
  NoiseSampler sampler_;
  Matrix v_;
  AttentionField field_;
  Vector u_;
};

inline TokenConfiguration initial_configuration(const SimParams& params, const StreamKey& base_key) {
  if (params.initial) return *params.initial;
  return uniform_on_sphere(base_key.with_step(kInitialConditionStep), params.n_tokens, params.d);
}

/// Evolves `x` for floor(T L) layers, calling `on_snapshot(step, time, x)` at
/// t = 0, every `effective_stride()` layers and at the final layer. A failing
/// step stops the evolution, leaves `x` at the last valid state and returns
/// an AbortRecord.
template <class OnSnapshot>
std::optional<AbortRecord> evolve(const SimParams& params, const StreamKey& base_key, TokenConfiguration& x,
                                  OnSnapshot&& on_snapshot) {
  const std::uint64_t steps = params.total_steps();
  const std::size_t stride = params.effective_stride();
  const double l = static_cast<double>(params.layers);
  on_snapshot(std::uint64_t{0}, 0.0, static_cast<const TokenConfiguration&>(x));

  Stepper stepper(params, base_key);
  TokenConfiguration last_good = x;
  for (std::uint64_t n = 0; n < steps; ++n) {
    try {
      stepper.advance(x, n);
    } catch (const Error& e) {
      AbortRecord rec;
      rec.step = n;
      rec.message = e.what();
      for (std::size_t i = 0; i < x.size(); ++i) rec.norms.push_back(norm(x[i]));
      x = last_good;
      return rec;
    }
    const std::uint64_t done = n + 1;
    if (done % stride == 0 || done == steps) {
      on_snapshot(done, static_cast<double>(done) / l, static_cast<const TokenConfiguration&>(x));
    }
    std::copy(x.data().begin(), x.data().end(), last_good.data().begin());
  }
  return std::nullopt;
}

/// Runs one trajectory and keeps every snapshot.
inline Trajectory run(const SimParams& params, const StreamKey& base_key) {
  params.validate();
  Trajectory traj;
  traj.params = params;
  traj.base_key = base_key;
  TokenConfiguration x = initial_configuration(params, base_key);
  traj.abort = evolve(params, base_key, x, [&](std::uint64_t step, double t, const TokenConfiguration& c) {
    traj.snapshots.push_back({step, t, c});
  });
  traj.terminal = std::move(x);
  return traj;
}

}  // namespace sphereflow

#endif  // SPHEREFLOW_DYNAMICS_HPP
