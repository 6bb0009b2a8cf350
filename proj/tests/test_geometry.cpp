#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "sphereflow/geometry.hpp"
#include "sphereflow/stats.hpp"

using namespace sphereflow;
using namespace testing_helpers;

namespace {

AttentionSpec softmax(double beta) { return {AttentionKind::Softmax, beta, std::nullopt}; }
AttentionSpec unnormalized(double beta) { return {AttentionKind::Unnormalized, beta, std::nullopt}; }

}  // namespace

TEST(Attention, IdenticalTokensGiveThatToken) {
  std::mt19937_64 rng(1);
  const Vector u = random_unit(rng, 4);
  const auto x = make_configuration({u, u});
  for (double beta : {0.0, 1.0, 7.5}) {
    const Vector a = attention(0, x, softmax(beta));
    EXPECT_LT(max_abs_diff(a, u), 1e-15);
  }
}

TEST(Attention, UnnormalizedTwoTokenFormula) {
  std::mt19937_64 rng(2);
  const auto x = random_configuration(rng, 2, 5);
  const double beta = 1.3;
  const double z = dot(x[0], x[1]);
  const Vector a = attention(0, x, unnormalized(beta));
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(a[k], 0.5 * (std::exp(beta) * x[0][k] + std::exp(beta * z) * x[1][k]), 1e-14);
  }
}

TEST(Attention, AntipodalPairAtZeroBetaCancels) {
  const auto x = make_configuration({{0.6, 0.8, 0.0}, {-0.6, -0.8, 0.0}});
  const Vector a = attention(1, x, softmax(0.0));
  for (double v : a) EXPECT_EQ(v, 0.0);
}

TEST(Attention, RejectsInteractionDimensionMismatch) {
  const auto x = make_configuration({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
  AttentionSpec spec = softmax(1.0);
  spec.qk = Matrix::identity(4);
  EXPECT_THROW(attention(0, x, spec), DimensionMismatch);
  AttentionField f;
  EXPECT_THROW(f.compute(x, spec), DimensionMismatch);
}

TEST(Attention, SoftmaxWeightsArePositiveAndSumToOne) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const auto x = random_configuration(rng, 7, 4);
    for (double beta : {0.0, 0.5, 8.0, 50.0}) {
      const Vector w = attention_weights(rep % 7, x, softmax(beta));
      double s = 0.0;
      for (double v : w) {
        EXPECT_GT(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, tol::kSoftmaxWeightSum);
    }
  }
}

TEST(Attention, FieldMatchesPerTokenAttention) {
  std::mt19937_64 rng(4);
  const auto x = random_configuration(rng, 6, 4);
  Matrix qk(4);
  for (double& v : qk.data()) v = std::normal_distribution<double>()(rng);
  for (auto kind : {AttentionKind::Softmax, AttentionKind::Unnormalized}) {
    for (bool general : {false, true}) {
      AttentionSpec spec{kind, 2.0, std::nullopt};
      if (general) spec.qk = qk;
      AttentionField f;
      f.compute(x, spec);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const Vector a = attention(i, x, spec);
        EXPECT_LT(max_abs_diff(f[i], a), 1e-13) << "token " << i;
      }
    }
  }
}

TEST(Attention, ExplicitIdentityMatchesIdentityInteraction) {
  std::mt19937_64 rng(5);
  const auto x = random_configuration(rng, 5, 3);
  AttentionSpec a = softmax(1.5);
  AttentionSpec b = softmax(1.5);
  b.qk = Matrix::identity(3);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_LT(max_abs_diff(attention(i, x, a), attention(i, x, b)), 1e-15);
}

TEST(Attention, RotationEquivariance) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = random_configuration(rng, 5, 4);
    const Matrix r = random_orthogonal(rng, 4);
    const auto rx = rotate(r, x);
    for (auto spec : {softmax(2.0), unnormalized(2.0)}) {
      for (std::size_t i = 0; i < 5; ++i) {
        const Vector lhs = attention(i, rx, spec);
        const Vector rhs = r * attention(i, x, spec);
        EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
      }
    }
  }
}

TEST(Attention, PermutationEquivariance) {
  std::mt19937_64 rng(7);
  const auto x = random_configuration(rng, 6, 3);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  TokenConfiguration px(6, 3);
  for (std::size_t i = 0; i < 6; ++i) std::copy(x[perm[i]].begin(), x[perm[i]].end(), px[i].begin());
  for (auto spec : {softmax(1.0), unnormalized(1.0)}) {
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_LT(max_abs_diff(attention(i, px, spec), attention(perm[i], x, spec)), 1e-14);
    }
  }
}

TEST(Attention, LargeBetaSoftmaxStaysFinite) {
  std::mt19937_64 rng(8);
  const auto x = random_configuration(rng, 4, 3);
  AttentionField f;
  f.compute(x, softmax(800.0));
  for (std::size_t i = 0; i < 4; ++i)
    for (double v : f[i]) EXPECT_TRUE(std::isfinite(v));
}

TEST(TangentProject, Examples) {
  const Vector e1{1.0, 0.0}, e2{0.0, 1.0};
  for (double v : tangent_project(e1, e1)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(tangent_project(e1, e2), e2);
  EXPECT_THROW(tangent_project(Vector{1.0, 1.0}, e2), NotUnit);
}

TEST(TangentProject, OrthogonalAndIdempotent) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    const Vector x = random_unit(rng, 5);
    const Vector y = random_vector(rng, 5);
    const Vector p = tangent_project(x, y);
    EXPECT_LT(std::abs(dot(x, p)), tol::kOrthogonality);
    EXPECT_LT(max_abs_diff(tangent_project(x, p), p), 1e-12);
  }
}

TEST(RmsNormalize, Examples) {
  std::mt19937_64 rng(10);
  const Vector u = random_unit(rng, 4);
  EXPECT_LT(max_abs_diff(rms_normalize(u), u), 1e-15);
  EXPECT_EQ(rms_normalize(Vector{3.0, 0.0, 0.0}), (Vector{1.0, 0.0, 0.0}));
  for (double c : {1e-200, 1e-5, 7.0, 1e250}) {
    Vector cu = u;
    for (double& v : cu) v *= c;
    const Vector n = rms_normalize(cu);
    EXPECT_LT(max_abs_diff(n, rms_normalize(u)), 1e-15) << c;
    EXPECT_NEAR(norm(n), 1.0, 1e-15);
  }
}

TEST(RmsNormalize, RejectsDegenerateInput) {
  EXPECT_THROW(rms_normalize(Vector{0.0, 0.0}), DegenerateInput);
  EXPECT_THROW(rms_normalize(Vector{1e-310, 0.0}), DegenerateInput);
}

TEST(SecondOrderTerm, Examples) {
  std::mt19937_64 rng(11);
  const Vector x = random_unit(rng, 4);
  for (double v : second_order_term(x, Vector(4, 0.0))) EXPECT_EQ(v, 0.0);
  for (double v : second_order_term(x, x)) EXPECT_NEAR(v, 0.0, 1e-15);
  const Vector e1{1.0, 0.0, 0.0}, e2{0.0, 1.0, 0.0};
  EXPECT_EQ(second_order_term(e1, e2), (Vector{-0.5, 0.0, 0.0}));
}

TEST(NormalizedUpdate, Examples) {
  std::mt19937_64 rng(12);
  const Vector x = random_unit(rng, 3);
  EXPECT_EQ(normalized_update(x, Vector(3, 0.0), 0.7), rms_normalize(x));
  const Vector y = normalized_update(Vector{1.0, 0.0}, Vector{0.0, 1.0}, 1.0);
  EXPECT_NEAR(y[0], 1.0 / std::sqrt(2.0), 1e-16);
  EXPECT_NEAR(y[1], 1.0 / std::sqrt(2.0), 1e-16);
  EXPECT_THROW(normalized_update(Vector{1.0, 0.0}, Vector{-1.0, 0.0}, 1.0), DegenerateInput);
}

namespace {

double expansion_residual(const Vector& x, const Vector& v, double delta) {
  const Vector exact = normalized_update(x, v, delta);
  const Vector p = tangent_project(x, v);
  const Vector g = second_order_term(x, v);
  Vector r(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) r[k] = exact[k] - (x[k] + delta * p[k] + delta * delta * g[k]);
  return norm(r);
}

}  // namespace

TEST(NormalizedUpdate, ResidualHalvingRatioIsEight) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector x = random_unit(rng, 5);
    const Vector v = random_vector(rng, 5);
    const double ratio = expansion_residual(x, v, 1e-2) / expansion_residual(x, v, 5e-3);
    EXPECT_NEAR(ratio, 8.0, 0.4);
  }
}

TEST(NormalizedUpdate, ExpansionOrderSlopeIsThree) {
  std::mt19937_64 rng(14);
  const std::vector<double> deltas{1e-1, 5e-2, 2.5e-2, 1.25e-2};
  std::vector<double> mean(deltas.size(), 0.0);
  for (int rep = 0; rep < 100; ++rep) {
    const Vector x = random_unit(rng, 5);
    const Vector v = random_vector(rng, 5);
    for (std::size_t k = 0; k < deltas.size(); ++k) mean[k] += expansion_residual(x, v, deltas[k]) / 100.0;
  }
  EXPECT_NEAR(loglog_slope(deltas, mean), 3.0, 0.1);
}
