#ifndef SPHEREFLOW_OVERLAP_HPP
#define SPHEREFLOW_OVERLAP_HPP

// One-dimensional overlap diffusions Z = <X^1, X^2> for two tokens, and the
// scale-function analytics built on them: boundary exponents, attraction
// verdicts, critical curves and hitting probabilities.
//
// The log scale density is split as
//   d/dy log s(y) = a_plus / (1 - y) + a_minus / (1 + y) + regular(y),
// so that the endpoint power laws s(1 - e) ~ e^{-a_plus}, s(-1 + e) ~ e^{a_minus}
// are exact and only the smooth remainder is integrated numerically.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sphereflow/errors.hpp"
#include "sphereflow/noise.hpp"

namespace sphereflow {

/// Width of the endpoint collars handled by the analytic power law.
inline constexpr double kScaleCollar = 1e-4;
/// Relative tolerance of the adaptive interior quadrature.
inline constexpr double kScaleQuadratureTol = 1e-8;
/// simulate_overlap keeps paths in [-1 + kOverlapClamp, 1 - kOverlapClamp].
inline constexpr double kOverlapClamp = 1e-15;

enum class OverlapKind { FullUnnormalized, FullSoftmax, Hybrid };

inline const char* to_string(OverlapKind k) {
  switch (k) {
    case OverlapKind::FullUnnormalized: return "full_unnormalized";
    case OverlapKind::FullSoftmax: return "full_softmax";
    case OverlapKind::Hybrid: return "hybrid";
  }
  return "?";
}

/// Selects one of the three closed overlap SDEs. `d` and `sigma` are used by
/// the full-noise kinds, `epsilon` by the hybrid kind (whose SDE does not
/// depend on d).
struct OverlapModel {
  OverlapKind kind = OverlapKind::FullUnnormalized;
  std::size_t d = 3;
  double beta = 1.0;
  double sigma = 1.0;
  double epsilon = 1.0;

  static OverlapModel full_unnormalized(std::size_t d, double beta, double sigma = 1.0) {
    return {OverlapKind::FullUnnormalized, d, beta, sigma, 0.0};
  }
  static OverlapModel full_softmax(std::size_t d, double beta, double sigma = 1.0) {
    return {OverlapKind::FullSoftmax, d, beta, sigma, 0.0};
  }
  static OverlapModel hybrid(double beta, double epsilon) { return {OverlapKind::Hybrid, 0, beta, 0.0, epsilon}; }

  bool is_full() const { return kind != OverlapKind::Hybrid; }

  void validate() const {
    if (!(beta >= 0.0)) throw InvalidArgument("overlap model: beta must be >= 0");
    if (is_full()) {
      if (d < 2) throw InvalidArgument("overlap model: d must be >= 2");
      if (!(sigma > 0.0)) throw InvalidArgument("overlap model: sigma must be > 0");
    } else if (!(epsilon > 0.0)) {
      throw InvalidArgument("overlap model: epsilon must be > 0");
    }
  }
};

namespace detail {

inline void check_overlap_point(double z) {
  if (!(std::abs(z) <= 1.0)) throw InvalidArgument("overlap: |z| must be <= 1, got " + std::to_string(z));
}

// 2(d-2) e^{b(1+z)} - z (e^{2b} + e^{2bz}), common to both full kinds.
inline double full_bracket(const OverlapModel& m, double z) {
  const double b = m.beta;
  return 2.0 * (static_cast<double>(m.d) - 2.0) * std::exp(b * (1.0 + z)) -
         z * (std::exp(2.0 * b) + std::exp(2.0 * b * z));
}

}  // namespace detail

inline double drift(const OverlapModel& m, double z) {
  detail::check_overlap_point(z);
  const double b = m.beta;
  const double q = 1.0 - z * z;
  switch (m.kind) {
    case OverlapKind::FullUnnormalized:
      return 0.25 * m.sigma * m.sigma * q * detail::full_bracket(m, z);
    case OverlapKind::FullSoftmax: {
      const double w = std::exp(b) + std::exp(b * z);
      return m.sigma * m.sigma * q / (w * w) * detail::full_bracket(m, z);
    }
    case OverlapKind::Hybrid: {
      const double e2 = m.epsilon * m.epsilon;
      return std::exp(b * z) * (z * z - 1.0) * (0.5 * e2 * std::exp(b) + z * e2 * std::exp(b * z) - 1.0);
    }
  }
  return 0.0;
}

/// Diffusion coefficient (>= 0). For the softmax kind this is
/// sigma sqrt(2) (1 - z^2) sqrt(e^{2b} + e^{2bz}) / (e^b + e^{bz}), the value
/// obtained from Ito's formula applied to the two-token system.
inline double diffusion(const OverlapModel& m, double z) {
  detail::check_overlap_point(z);
  const double b = m.beta;
  const double q = 1.0 - z * z;
  switch (m.kind) {
    case OverlapKind::FullUnnormalized:
      return m.sigma / std::sqrt(2.0) * q * std::sqrt(std::exp(2.0 * b) + std::exp(2.0 * b * z));
    case OverlapKind::FullSoftmax:
      return m.sigma * std::sqrt(2.0) * q * std::sqrt(std::exp(2.0 * b) + std::exp(2.0 * b * z)) /
             (std::exp(b) + std::exp(b * z));
    case OverlapKind::Hybrid:
      return m.epsilon * std::exp(b * z) * q;
  }
  return 0.0;
}

/// Euler-Maruyama path of the overlap SDE (n_steps + 1 values), clamped to
/// the open interval after each step. `noise_scale` multiplies the diffusion
/// (0 gives the drift ODE under explicit Euler).
inline std::vector<double> simulate_overlap(const OverlapModel& m, double z0, double dt, std::uint64_t n_steps,
                                            const StreamKey& key, double noise_scale = 1.0) {
  if (!(std::abs(z0) < 1.0)) throw InvalidArgument("simulate_overlap: |z0| must be < 1");
  if (!(dt > 0.0)) throw InvalidArgument("simulate_overlap: dt must be > 0");
  KeyedEngine eng(key);
  const double sdt = std::sqrt(dt) * noise_scale;
  std::vector<double> path;
  path.reserve(n_steps + 1);
  double z = z0;
  path.push_back(z);
  for (std::uint64_t n = 0; n < n_steps; ++n) {
    const double xi = noise_scale == 0.0 ? 0.0 : standard_normal(eng);
    z += drift(m, z) * dt + diffusion(m, z) * sdt * xi;
    z = std::clamp(z, -1.0 + kOverlapClamp, 1.0 - kOverlapClamp);
    path.push_back(z);
  }
  return path;
}

/// Terminal value of `simulate_overlap` without storing the path.
inline double simulate_overlap_terminal(const OverlapModel& m, double z0, double dt, std::uint64_t n_steps,
                                        const StreamKey& key) {
  if (!(std::abs(z0) < 1.0)) throw InvalidArgument("simulate_overlap: |z0| must be < 1");
  KeyedEngine eng(key);
  const double sdt = std::sqrt(dt);
  double z = z0;
  for (std::uint64_t n = 0; n < n_steps; ++n) {
    z += drift(m, z) * dt + diffusion(m, z) * sdt * standard_normal(eng);
    z = std::clamp(z, -1.0 + kOverlapClamp, 1.0 - kOverlapClamp);
  }
  return z;
}

namespace detail {

// Decomposition of g(y) = d/dy log s(y) = -2 drift / diffusion^2.
struct LogScaleDerivative {
  OverlapModel m;
  double a_plus = 0.0;
  double a_minus = 0.0;
  double c = 0.0;  // hybrid: e^b - 2 / eps^2

  explicit LogScaleDerivative(const OverlapModel& model) : m(model) {
    m.validate();
    if (m.is_full()) {
      a_plus = 0.5 * (1.0 - psi(1.0));
      a_minus = 0.5 * (-1.0 - psi(-1.0));
    } else {
      c = std::exp(m.beta) - 2.0 / (m.epsilon * m.epsilon);
      a_plus = 0.5 * (c * std::exp(-m.beta) + 2.0);
      a_minus = 0.5 * (c * std::exp(m.beta) - 2.0);
    }
  }

  // psi(y) = 2(d-2) e^{b(1+y)} / (e^{2b} + e^{2by}) = (d-2) / cosh(b(1-y)).
  double psi(double y) const { return (static_cast<double>(m.d) - 2.0) / std::cosh(m.beta * (1.0 - y)); }

  // Numerator of g(y) over (1 - y^2).
  double numerator(double y) const {
    if (m.is_full()) return y - psi(y);
    return c * std::exp(-m.beta * y) + 2.0 * y;
  }

  double full(double y) const { return numerator(y) / ((1.0 - y) * (1.0 + y)); }

  double regular(double y) const {
    return (numerator(y) - a_plus * (1.0 + y) - a_minus * (1.0 - y)) / ((1.0 - y) * (1.0 + y));
  }

  double integral_regular(double from, double to) const {
    if (from == to) return 0.0;
    auto f = [this](double y) { return regular(y); };
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, from, to, 12, 1e-13);
  }

  double log_s(double x, double x0) const {
    return -a_plus * (std::log1p(-x) - std::log1p(-x0)) + a_minus * (std::log1p(x) - std::log1p(x0)) +
           integral_regular(x0, x);
  }

  double exponent_plus() const { return 0.0 - a_plus; }
  double exponent_minus() const { return a_minus; }
};

inline void check_open_point(double x, const char* what) {
  if (!(std::abs(x) < 1.0)) throw InvalidArgument(std::string(what) + ": point must lie in (-1, 1)");
}

// Integral of exp(log s(y) - offset) over [a, b], with power-law collars.
// Returns +inf when an included endpoint is non-integrable.
inline double scaled_scale_integral(const LogScaleDerivative& g, double a, double b, double x0, double offset) {
  if (a >= b) return 0.0;
  const double lo = -1.0 + kScaleCollar;
  const double hi = 1.0 - kScaleCollar;
  double total = 0.0;

  // Collar at +1: s(y) ~ s(hi) ((1 - y) / collar)^e on [hi, 1).
  if (b > hi) {
    const double e = g.exponent_plus();
    const double y1 = std::max(a, hi);
    const double w1 = 1.0 - y1;
    const double w2 = 1.0 - b;
    const double base = std::exp(g.log_s(hi, x0) - offset);
    if (w2 == 0.0 && e <= -1.0) return std::numeric_limits<double>::infinity();
    double part;
    if (e == -1.0) {
      part = base * kScaleCollar * std::log(w1 / w2);
    } else {
      part = base * std::pow(kScaleCollar, -e) * (std::pow(w1, e + 1.0) - std::pow(w2, e + 1.0)) / (e + 1.0);
    }
    total += part;
  }
  // Collar at -1: s(y) ~ s(lo) ((1 + y) / collar)^e on (-1, lo].
  if (a < lo) {
    const double e = g.exponent_minus();
    const double w1 = 1.0 + a;
    const double w2 = 1.0 + std::min(b, lo);
    const double base = std::exp(g.log_s(lo, x0) - offset);
    if (w1 == 0.0 && e <= -1.0) return std::numeric_limits<double>::infinity();
    double part;
    if (e == -1.0) {
      part = base * kScaleCollar * std::log(w2 / w1);
    } else {
      part = base * std::pow(kScaleCollar, -e) * (std::pow(w2, e + 1.0) - std::pow(w1, e + 1.0)) / (e + 1.0);
    }
    total += part;
  }
  // Interior, in u = atanh(y) where the power laws become exponentials.
  const double ia = std::max(a, lo);
  const double ib = std::min(b, hi);
  if (ia < ib) {
    auto f = [&](double u) {
      const double y = std::tanh(u);
      const double sech = 1.0 / std::cosh(u);
      return std::exp(g.log_s(y, x0) - offset) * sech * sech;
    };
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, std::atanh(ia), std::atanh(ib), 20,
                                                                          kScaleQuadratureTol);
  }
  return total;
}

}  // namespace detail

/// log s(x) with base point x0, s = exp(-int_{x0}^x 2 drift / diffusion^2).
inline double log_scale_density(const OverlapModel& m, double x, double x0) {
  detail::check_open_point(x, "scale_density");
  detail::check_open_point(x0, "scale_density");
  return detail::LogScaleDerivative(m).log_s(x, x0);
}

inline double scale_density(const OverlapModel& m, double x, double x0) {
  return std::exp(log_scale_density(m, x, x0));
}

/// int_a^b s(y) dy for -1 <= a <= b <= 1; +infinity when an endpoint power
/// law is not integrable.
inline double scale_function(const OverlapModel& m, double a, double b, double x0) {
  if (!(a >= -1.0 && b <= 1.0 && a <= b)) throw InvalidArgument("scale_function: need -1 <= a <= b <= 1");
  detail::check_open_point(x0, "scale_function");
  if (a == b) return 0.0;
  return detail::scaled_scale_integral(detail::LogScaleDerivative(m), a, b, x0, 0.0);
}

/// Endpoint power laws of the scale density and the attraction verdicts.
/// The verdicts come from the closed-form conditions (full: +1 always, -1 iff
/// d - 2 < cosh(2 beta); hybrid: +1 iff eps^2 < 2 e^{-beta}, -1 iff
/// eps^2 > 2 e^{-beta}); the integrability flags come from the exponents.
struct BoundaryReport {
  double exponent_plus = 0.0;
  double exponent_minus = 0.0;
  bool plus_attracting = false;
  bool minus_attracting = false;
  bool scale_integrable_plus = false;
  bool scale_integrable_minus = false;
};

inline BoundaryReport boundary_report(const OverlapModel& m) {
  const detail::LogScaleDerivative g(m);
  BoundaryReport r;
  r.exponent_plus = g.exponent_plus();
  r.exponent_minus = g.exponent_minus();
  r.scale_integrable_plus = r.exponent_plus > -1.0;
  r.scale_integrable_minus = r.exponent_minus > -1.0;
  if (m.is_full()) {
    r.plus_attracting = true;
    r.minus_attracting = static_cast<double>(m.d) - 2.0 < std::cosh(2.0 * m.beta);
  } else {
    const double e2 = m.epsilon * m.epsilon;
    const double t = 2.0 * std::exp(-m.beta);
    r.plus_attracting = e2 < t;
    r.minus_attracting = e2 > t;
  }
  return r;
}

/// 1/2 arccosh(d - 2); zero for d < 3.
inline double critical_beta(double d) {
  if (d < 2.0) throw InvalidArgument("critical_beta: d must be >= 2");
  if (d < 3.0) return 0.0;
  return 0.5 * std::acosh(d - 2.0);
}

inline double critical_epsilon(double beta) {
  if (!(beta >= 0.0)) throw InvalidArgument("critical_epsilon: beta must be >= 0");
  return std::sqrt(2.0 * std::exp(-beta));
}

/// Relative width within which eps^2 counts as equal to 2 e^{-beta}.
inline constexpr double kHybridThresholdTol = 1e-12;

/// Probability that Z_t -> -1 from Z_0 = z0:
/// (S(1) - S(z0)) / (S(1) - S(-1)), and 0 when S(-1) = -infinity.
/// Hybrid models are 0/1 on either side of eps^2 = 2 e^{-beta}; the threshold
/// itself is rejected.
inline double antipodal_probability(const OverlapModel& m, double z0) {
  m.validate();
  detail::check_open_point(z0, "antipodal_probability");
  if (!m.is_full()) {
    const double e2 = m.epsilon * m.epsilon;
    const double t = 2.0 * std::exp(-m.beta);
    if (std::abs(e2 - t) <= kHybridThresholdTol * t) {
      throw InvalidArgument("antipodal_probability: hybrid model at the threshold eps^2 = 2 e^{-beta}");
    }
    return e2 > t ? 1.0 : 0.0;
  }
  const detail::LogScaleDerivative g(m);
  if (g.exponent_minus() <= -1.0) return 0.0;
  const double x0 = 0.0;
  const double offset = std::max({0.0, g.log_s(-1.0 + kScaleCollar, x0), g.log_s(1.0 - kScaleCollar, x0)});
  const double lower = detail::scaled_scale_integral(g, -1.0, z0, x0, offset);
  const double upper = detail::scaled_scale_integral(g, z0, 1.0, x0, offset);
  if (std::isinf(upper)) return 1.0;
  return upper / (lower + upper);
}

/// Antipodal probability averaged over Z_0 = <X^1, X^2> of two independent
/// uniform points on S^{d-1}, whose law is 2 Beta((d-1)/2, (d-1)/2) - 1.
/// Full kinds only.
inline double antipodal_probability_uniform_start(const OverlapModel& m) {
  m.validate();
  if (!m.is_full()) throw InvalidArgument("antipodal_probability_uniform_start: full-noise kinds only");
  const detail::LogScaleDerivative g(m);
  if (g.exponent_minus() <= -1.0) return 0.0;
  const double x0 = 0.0;
  const double offset = std::max({0.0, g.log_s(-1.0 + kScaleCollar, x0), g.log_s(1.0 - kScaleCollar, x0)});
  const double total = detail::scaled_scale_integral(g, -1.0, 1.0, x0, offset);
  // P(antipodal) = E[int_{Z0}^1 s] / int s = int s(y) F(y) dy / int s, F = CDF of Z0.
  const double shape = 0.5 * (static_cast<double>(m.d) - 1.0);
  auto cdf = [shape](double y) { return boost::math::ibeta(shape, shape, 0.5 * (1.0 + y)); };
  const double lo = -1.0 + kScaleCollar;
  const double hi = 1.0 - kScaleCollar;
  auto f = [&](double u) {
    const double y = std::tanh(u);
    const double sech = 1.0 / std::cosh(u);
    return std::exp(g.log_s(y, x0) - offset) * cdf(y) * sech * sech;
  };
  double weighted = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, std::atanh(lo), std::atanh(hi),
                                                                                  20, kScaleQuadratureTol);
  // Collars: F ~ 1 near +1; near -1, F(y) ~ F(lo) ((1 + y) / collar)^shape.
  weighted += detail::scaled_scale_integral(g, hi, 1.0, x0, offset);
  const double e = g.exponent_minus() + shape;
  weighted += std::exp(g.log_s(lo, x0) - offset) * cdf(lo) * kScaleCollar / (e + 1.0);
  return weighted / total;
}

}  // namespace sphereflow

#endif  // SPHEREFLOW_OVERLAP_HPP
