#ifndef SPHEREFLOW_GEOMETRY_HPP
#define SPHEREFLOW_GEOMETRY_HPP

// Vector and attention math shared by every stepper: attention fields,
// tangent projection, RMS normalization and the second-order expansion term.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sphereflow/errors.hpp"

namespace sphereflow {

namespace tol {
inline constexpr double kUnitNorm = 1e-12;
inline constexpr double kOrthogonality = 1e-12;
inline constexpr double kNormalizeRelative = 1e-15;
inline constexpr double kDegenerateNorm = 1e-300;
inline constexpr double kSoftmaxWeightSum = 1e-12;
}  // namespace tol

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void check_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": dimension " + std::to_string(a) +
                            " vs " + std::to_string(b));
  }
}

/// Dense square matrix, row-major.
class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}
  Matrix(std::size_t n, std::vector<double> row_major) : n_(n), a_(std::move(row_major)) {
    if (a_.size() != n * n) throw DimensionMismatch("Matrix: expected n*n entries");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t dim() const { return n_; }
  double& operator()(std::size_t r, std::size_t c) { return a_[r * n_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a_[r * n_ + c]; }
  std::span<double> data() { return a_; }
  std::span<const double> data() const { return a_; }

  /// out = M x. `out` must not alias `x`.
  void apply(std::span<const double> x, std::span<double> out) const {
    for (std::size_t r = 0; r < n_; ++r) {
      const double* row = a_.data() + r * n_;
      double s = 0.0;
      for (std::size_t c = 0; c < n_; ++c) s += row[c] * x[c];
      out[r] = s;
    }
  }

  Vector operator*(std::span<const double> x) const {
    check_same_dim(n_, x.size(), "Matrix * Vector");
    Vector out(n_);
    apply(x, out);
    return out;
  }

  Matrix operator*(const Matrix& b) const {
    check_same_dim(n_, b.n_, "Matrix * Matrix");
    Matrix c(n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < n_; ++k) {
        const double aik = (*this)(i, k);
        for (std::size_t j = 0; j < n_; ++j) c(i, j) += aik * b(k, j);
      }
    return c;
  }

  Matrix transposed() const {
    Matrix t(n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

/// N tokens in R^d stored contiguously, token-major.
///
/// The constructor does not enforce unit norms because the linearized
/// dynamics deliberately leaves the sphere; use `make_configuration` or
/// `require_unit` where the sphere invariant applies.
class TokenConfiguration {
 public:
  TokenConfiguration() = default;
  TokenConfiguration(std::size_t n, std::size_t d) : n_(n), d_(d), x_(n * d, 0.0) {}

  std::size_t size() const { return n_; }
  std::size_t dim() const { return d_; }

  std::span<const double> operator[](std::size_t i) const { return {x_.data() + i * d_, d_}; }
  std::span<double> operator[](std::size_t i) { return {x_.data() + i * d_, d_}; }

  std::span<const double> data() const { return x_; }
  std::span<double> data() { return x_; }

  /// Largest deviation of a token norm from one.
  double max_norm_deviation() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i) worst = std::max(worst, std::abs(norm((*this)[i]) - 1.0));
    return worst;
  }

  void require_unit(double tolerance = tol::kUnitNorm) const {
    for (std::size_t i = 0; i < n_; ++i) {
      const double dev = std::abs(norm((*this)[i]) - 1.0);
      if (!(dev <= tolerance)) {
        throw NotUnit("token " + std::to_string(i) + " has norm deviation " + std::to_string(dev));
      }
    }
  }

  friend bool operator==(const TokenConfiguration&, const TokenConfiguration&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<double> x_;
};

/// Builds a configuration from explicit tokens; all tokens must share one
/// dimension and have unit norm.
inline TokenConfiguration make_configuration(const std::vector<Vector>& tokens) {
  if (tokens.empty()) throw InvalidArgument("configuration needs at least one token");
  const std::size_t d = tokens.front().size();
  TokenConfiguration c(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    check_same_dim(d, tokens[i].size(), "make_configuration");
    std::copy(tokens[i].begin(), tokens[i].end(), c[i].begin());
  }
  c.require_unit();
  return c;
}

enum class AttentionKind { Softmax, Unnormalized };

/// Attention kind, inverse temperature and interaction matrix Q^T K.
/// An empty `qk` is the identity interaction, where the score of (x, y) is <x, y>.
struct AttentionSpec {
  AttentionKind kind = AttentionKind::Softmax;
  double beta = 1.0;
  std::optional<Matrix> qk;

  bool identity_interaction() const { return !qk.has_value(); }
};

inline void check_attention(const TokenConfiguration& config, const AttentionSpec& spec) {
  if (spec.qk) check_same_dim(spec.qk->dim(), config.dim(), "attention: Q^T K vs tokens");
  if (!(spec.beta >= 0.0)) throw InvalidArgument("attention: beta must be >= 0");
}

namespace detail {

// Scores <X^i, (Q^T K) X^j> of row i.
inline void score_row(std::size_t i, const TokenConfiguration& x, const AttentionSpec& spec,
                      std::span<double> scores) {
  const std::size_t n = x.size();
  if (spec.identity_interaction()) {
    for (std::size_t j = 0; j < n; ++j) scores[j] = dot(x[i], x[j]);
    return;
  }
  Vector mx(x.dim());
  for (std::size_t j = 0; j < n; ++j) {
    spec.qk->apply(x[j], mx);
    scores[j] = dot(x[i], mx);
  }
}

// Turns scores into attention weights in place.
inline void weights_from_scores(std::span<double> w, const AttentionSpec& spec) {
  const double n = static_cast<double>(w.size());
  if (spec.kind == AttentionKind::Softmax) {
    const double m = *std::max_element(w.begin(), w.end());
    double sum = 0.0;
    for (double& v : w) {
      v = std::exp(spec.beta * (v - m));
      sum += v;
    }
    for (double& v : w) v /= sum;
  } else {
    for (double& v : w) v = std::exp(spec.beta * v) / n;
  }
}

}  // namespace detail

/// Weights w_ij of token i: softmax-normalized, or exp(beta s_ij)/N for the
/// unnormalized kind.
inline Vector attention_weights(std::size_t i, const TokenConfiguration& config,
                                const AttentionSpec& spec) {
  check_attention(config, spec);
  if (i >= config.size()) throw InvalidArgument("attention: token index out of range");
  Vector w(config.size());
  detail::score_row(i, config, spec, w);
  detail::weights_from_scores(w, spec);
  return w;
}

/// Attention output A_beta(X^i, X) of a single token.
inline Vector attention(std::size_t i, const TokenConfiguration& config, const AttentionSpec& spec) {
  const Vector w = attention_weights(i, config, spec);
  Vector out(config.dim(), 0.0);
  for (std::size_t j = 0; j < config.size(); ++j) {
    const auto xj = config[j];
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w[j] * xj[k];
  }
  return out;
}

/// Attention outputs of all tokens at once, reusing its buffers across calls.
///
/// With the identity interaction the score matrix is symmetric, so each
/// exponential is evaluated once per pair. Softmax uses a single global shift
/// (the largest score), which leaves every row's normalization unchanged.
class AttentionField {
 public:
  void compute(const TokenConfiguration& x, const AttentionSpec& spec) {
    check_attention(x, spec);
    const std::size_t n = x.size();
    const std::size_t d = x.dim();
    e_.resize(n * n);
    out_.assign(n * d, 0.0);
    d_ = d;
    if (spec.identity_interaction()) {
      compute_symmetric(x, spec);
    } else {
      compute_general(x, spec);
    }
  }

  std::size_t size() const { return d_ == 0 ? 0 : out_.size() / d_; }
  std::span<const double> operator[](std::size_t i) const { return {out_.data() + i * d_, d_}; }

 private:
  void compute_symmetric(const TokenConfiguration& x, const AttentionSpec& spec) {
    const std::size_t n = x.size();
    const bool softmax = spec.kind == AttentionKind::Softmax;
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const double g = dot(x[i], x[j]);
        e_[i * n + j] = g;
        shift = std::max(shift, g);
      }
    if (!softmax) shift = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const double e = std::exp(spec.beta * (e_[i * n + j] - shift));
        e_[i * n + j] = e;
        e_[j * n + i] = e;
      }
    accumulate(x, softmax);
  }

  void compute_general(const TokenConfiguration& x, const AttentionSpec& spec) {
    const std::size_t n = x.size();
    const std::size_t d = x.dim();
    mx_.resize(n * d);
    for (std::size_t j = 0; j < n; ++j) spec.qk->apply(x[j], {mx_.data() + j * d, d});
    const bool softmax = spec.kind == AttentionKind::Softmax;
    for (std::size_t i = 0; i < n; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const double s = dot(x[i], {mx_.data() + j * d, d});
        e_[i * n + j] = s;
        m = std::max(m, s);
      }
      if (!softmax) m = 0.0;
      for (std::size_t j = 0; j < n; ++j) e_[i * n + j] = std::exp(spec.beta * (e_[i * n + j] - m));
    }
    accumulate(x, softmax);
  }

  void accumulate(const TokenConfiguration& x, bool softmax) {
    const std::size_t n = x.size();
    const std::size_t d = x.dim();
    for (std::size_t i = 0; i < n; ++i) {
      double* out = out_.data() + i * d;
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double w = e_[i * n + j];
        sum += w;
        const auto xj = x[j];
        for (std::size_t k = 0; k < d; ++k) out[k] += w * xj[k];
      }
      const double scale = softmax ? 1.0 / sum : 1.0 / static_cast<double>(n);
      for (std::size_t k = 0; k < d; ++k) out[k] *= scale;
    }
  }

  std::size_t d_ = 0;
  std::vector<double> e_;
  std::vector<double> mx_;
  std::vector<double> out_;
};

/// P_x[y] = y - <x, y> x; requires a unit `x`.
inline Vector tangent_project(std::span<const double> x, std::span<const double> y) {
  check_same_dim(x.size(), y.size(), "tangent_project");
  if (!(std::abs(norm(x) - 1.0) <= tol::kUnitNorm)) throw NotUnit("tangent_project: x is not a unit vector");
  const double a = dot(x, y);
  Vector out(y.begin(), y.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= a * x[k];
  return out;
}

inline Vector rms_normalize(std::span<const double> x) {
  double scale = 0.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  if (!(scale > 0.0)) throw DegenerateInput("rms_normalize: zero vector");
  double s = 0.0;
  for (double v : x) s += (v / scale) * (v / scale);
  const double n = scale * std::sqrt(s);
  if (n < tol::kDegenerateNorm) throw DegenerateInput("rms_normalize: norm below 1e-300");
  Vector out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = (x[k] / scale) / std::sqrt(s);
  return out;
}

/// (3/2)<x,y>^2 x - (1/2)<y,y> x - <x,y> y: the delta^2 coefficient of the
/// normalized residual update, and the noise-induced drift of the hybrid SDE.
inline Vector second_order_term(std::span<const double> x, std::span<const double> y) {
  check_same_dim(x.size(), y.size(), "second_order_term");
  const double a = dot(x, y);
  const double b = dot(y, y);
  Vector out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = (1.5 * a * a - 0.5 * b) * x[k] - a * y[k];
  return out;
}

namespace detail {

// out = (x + delta v) / |x + delta v|; `out` may alias `x`.
inline void normalized_update_into(std::span<const double> x, std::span<const double> v, double delta,
                                   std::span<double> out) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double y = x[k] + delta * v[k];
    out[k] = y;
    s += y * y;
  }
  const double n = std::sqrt(s);
  if (!(n >= tol::kDegenerateNorm)) throw DegenerateInput("normalized_update: |x + delta v| below 1e-300");
  const double inv = 1.0 / n;
  for (std::size_t k = 0; k < x.size(); ++k) out[k] *= inv;
}

inline void normalize_in_place(std::span<double> x) {
  const double n = norm(x);
  if (!(n >= tol::kDegenerateNorm)) throw DegenerateInput("renormalization: norm below 1e-300");
  const double inv = 1.0 / n;
  for (double& v : x) v *= inv;
}

}  // namespace detail

inline Vector normalized_update(std::span<const double> x, std::span<const double> v, double delta) {
  check_same_dim(x.size(), v.size(), "normalized_update");
  Vector out(x.size());
  detail::normalized_update_into(x, v, delta, out);
  return out;
}

}  // namespace sphereflow

#endif  // SPHEREFLOW_GEOMETRY_HPP
