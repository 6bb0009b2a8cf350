#ifndef SPHEREFLOW_NOISE_HPP
#define SPHEREFLOW_NOISE_HPP

// Keyed random streams and the value-matrix / scalar noise distributions.
//
// Every draw is addressed by a StreamKey (experiment seed, trajectory, step):
// the key is hashed into the starting counter of a SplitMix64 sequence, so a
// key always yields the same draws regardless of which worker consumes it or
// in which order.

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>

#include "sphereflow/errors.hpp"
#include "sphereflow/geometry.hpp"

namespace sphereflow {

struct StreamKey {
  std::uint64_t experiment_seed = 0;
  std::uint64_t trajectory_index = 0;
  std::uint64_t step_index = 0;

  StreamKey with_step(std::uint64_t step) const { return {experiment_seed, trajectory_index, step}; }
  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

/// Step index reserved for the initial condition draw of a trajectory.
inline constexpr std::uint64_t kInitialConditionStep = std::numeric_limits<std::uint64_t>::max();

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ mix64(v + 0x9e3779b97f4a7c15ULL));
}

constexpr std::uint64_t hash_key(const StreamKey& k) {
  std::uint64_t h = mix64(k.experiment_seed ^ 0x5851f42d4c957f2dULL);
  h = hash_combine(h, k.trajectory_index);
  h = hash_combine(h, k.step_index);
  return h;
}

/// Counter-based uniform bit generator positioned at the start of a key's stream.
class KeyedEngine {
 public:
  using result_type = std::uint64_t;

  explicit KeyedEngine(const StreamKey& key) : counter_(hash_key(key)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix64(counter_);
  }

 private:
  std::uint64_t counter_;
};

enum class NoiseKind { Gaussian, TruncatedGaussian, Uniform, Rademacher };

/// I.i.d. centered entries with per-entry variance sigma^2.
///
/// TruncatedGaussian conditions a standard normal on |z| <= truncation/sigma
/// and rescales it by the analytic standard deviation of that truncated law,
/// so the variance is exactly sigma^2. Uniform lives on [-sigma*sqrt(3),
/// sigma*sqrt(3)]; Rademacher takes the values +-sigma.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::Gaussian;
  double sigma = 1.0;
  double truncation = 6.0;

  static NoiseSpec gaussian(double sigma) { return {NoiseKind::Gaussian, sigma, 0.0}; }
  static NoiseSpec truncated_gaussian(double sigma, double m) { return {NoiseKind::TruncatedGaussian, sigma, m}; }
  static NoiseSpec uniform(double sigma) { return {NoiseKind::Uniform, sigma, 0.0}; }
  static NoiseSpec rademacher(double sigma) { return {NoiseKind::Rademacher, sigma, 0.0}; }

  void validate() const {
    if (!(sigma > 0.0)) throw InvalidArgument("noise: sigma must be > 0");
    if (kind == NoiseKind::TruncatedGaussian && !(truncation > 0.0)) {
      throw InvalidArgument("noise: truncation level must be > 0");
    }
  }

  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::TruncatedGaussian: return "truncated_gaussian";
    case NoiseKind::Uniform: return "uniform";
    case NoiseKind::Rademacher: return "rademacher";
  }
  return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "gaussian") return NoiseKind::Gaussian;
  if (s == "truncated_gaussian") return NoiseKind::TruncatedGaussian;
  if (s == "uniform") return NoiseKind::Uniform;
  if (s == "rademacher") return NoiseKind::Rademacher;
  throw InvalidArgument("unknown noise distribution '" + s + "'");
}

/// Standard deviation of N(0,1) conditioned on |z| <= a.
inline double truncated_normal_stddev(double a) {
  const double mass = std::erf(a / std::numbers::sqrt2);
  const double density = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
  return std::sqrt(1.0 - 2.0 * a * density / mass);
}

/// Draws from a NoiseSpec given any of the library's engines.
class NoiseSampler {
 public:
  explicit NoiseSampler(const NoiseSpec& spec) : spec_(spec) {
    spec_.validate();
    if (spec_.kind == NoiseKind::TruncatedGaussian) {
      level_ = spec_.truncation / spec_.sigma;
      scale_ = spec_.sigma / truncated_normal_stddev(level_);
    }
  }

  const NoiseSpec& spec() const { return spec_; }

  template <class Engine>
  double operator()(Engine& eng) {
    switch (spec_.kind) {
      case NoiseKind::Gaussian:
        return spec_.sigma * normal_(eng);
      case NoiseKind::TruncatedGaussian: {
        double z = normal_(eng);
        while (std::abs(z) > level_) z = normal_(eng);
        return scale_ * z;
      }
      case NoiseKind::Uniform: {
        const double h = spec_.sigma * std::numbers::sqrt3;
        return boost::random::uniform_real_distribution<double>(-h, h)(eng);
      }
      case NoiseKind::Rademacher:
        return (eng() >> 63) ? spec_.sigma : -spec_.sigma;
    }
    return 0.0;
  }

  template <class Engine>
  void fill(Engine& eng, std::span<double> out) {
    for (double& v : out) v = (*this)(eng);
  }

 private:
  NoiseSpec spec_;
  double level_ = 0.0;
  double scale_ = 1.0;
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
};

template <class Engine>
double standard_normal(Engine& eng) {
  return boost::random::normal_distribution<double>(0.0, 1.0)(eng);
}

/// d x d value matrix with i.i.d. entries; deterministic in `key`.
inline Matrix sample_value_matrix(const StreamKey& key, std::size_t d, const NoiseSpec& spec) {
  if (d < 1) throw InvalidArgument("sample_value_matrix: d must be >= 1");
  KeyedEngine eng(key);
  NoiseSampler sampler(spec);
  Matrix v(d);
  sampler.fill(eng, v.data());
  return v;
}

inline double sample_scalar(const StreamKey& key, const NoiseSpec& spec) {
  KeyedEngine eng(key);
  NoiseSampler sampler(spec);
  return sampler(eng);
}

/// N tokens uniform on S^{d-1}, via normalized isotropic Gaussian vectors.
inline TokenConfiguration uniform_on_sphere(const StreamKey& key, std::size_t n, std::size_t d) {
  if (n < 1 || d < 1) throw InvalidArgument("uniform_on_sphere: need n >= 1 and d >= 1");
  KeyedEngine eng(key);
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  TokenConfiguration c(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = c[i];
    double s = 0.0;
    while (!(s > 0.0)) {
      s = 0.0;
      for (double& v : x) {
        v = normal(eng);
        s += v * v;
      }
    }
    const double inv = 1.0 / std::sqrt(s);
    for (double& v : x) v *= inv;
  }
  return c;
}

}  // namespace sphereflow

#endif  // SPHEREFLOW_NOISE_HPP
