#ifndef SPHEREFLOW_TESTS_HELPERS_HPP
#define SPHEREFLOW_TESTS_HELPERS_HPP

#include <cmath>
#include <random>
#include <vector>

#include "sphereflow/geometry.hpp"
#include "sphereflow/noise.hpp"

namespace testing_helpers {

using sphereflow::Matrix;
using sphereflow::TokenConfiguration;
using sphereflow::Vector;

inline Vector random_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n;
  Vector v(d);
  for (double& x : v) x = n(rng);
  return v;
}

inline Vector random_unit(std::mt19937_64& rng, std::size_t d) {
  Vector v = random_vector(rng, d);
  const double s = sphereflow::norm(v);
  for (double& x : v) x /= s;
  return v;
}

inline TokenConfiguration random_configuration(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  TokenConfiguration c(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector u = random_unit(rng, d);
    std::copy(u.begin(), u.end(), c[i].begin());
  }
  return c;
}

// Orthogonal matrix from Gram-Schmidt on Gaussian columns.
inline Matrix random_orthogonal(std::mt19937_64& rng, std::size_t d) {
  std::vector<Vector> cols;
  while (cols.size() < d) {
    Vector v = random_vector(rng, d);
    for (const Vector& c : cols) {
      const double a = sphereflow::dot(v, c);
      for (std::size_t k = 0; k < d; ++k) v[k] -= a * c[k];
    }
    const double s = sphereflow::norm(v);
    for (double& x : v) x /= s;
    cols.push_back(v);
  }
  Matrix r(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) r(i, j) = cols[j][i];
  return r;
}

inline TokenConfiguration rotate(const Matrix& r, const TokenConfiguration& x) {
  TokenConfiguration out(x.size(), x.dim());
  for (std::size_t i = 0; i < x.size(); ++i) r.apply(x[i], out[i]);
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace testing_helpers

#endif  // SPHEREFLOW_TESTS_HELPERS_HPP
