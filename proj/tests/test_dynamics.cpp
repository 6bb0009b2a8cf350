#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "sphereflow/dynamics.hpp"
#include "sphereflow/experiments.hpp"
#include "sphereflow/overlap.hpp"
#include "sphereflow/stats.hpp"

using namespace sphereflow;
using namespace testing_helpers;

namespace {

const AttentionSpec kSoftmax1{AttentionKind::Softmax, 1.0, std::nullopt};
const AttentionSpec kUnnormalized1{AttentionKind::Unnormalized, 1.0, std::nullopt};

Matrix gaussian_matrix(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
  Matrix m(d);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : m.data()) v = n(rng);
  return m;
}

TokenConfiguration duplicate_first(const TokenConfiguration& x) {
  TokenConfiguration y = x;
  std::copy(x[0].begin(), x[0].end(), y[1].begin());
  return y;
}

}  // namespace

TEST(StepFull, IdenticalTokensStayIdentical) {
  std::mt19937_64 rng(1);
  const auto x = duplicate_first(random_configuration(rng, 3, 4));
  const auto y = step_full(x, gaussian_matrix(rng, 4), 100, kSoftmax1);
  EXPECT_TRUE(std::equal(y[0].begin(), y[0].end(), y[1].begin()));
}

TEST(StepFull, AntipodalPairAtZeroBetaIsFixed) {
  const auto x = make_configuration({{0.0, 1.0, 0.0}, {0.0, -1.0, 0.0}});
  std::mt19937_64 rng(2);
  const auto y = step_full(x, gaussian_matrix(rng, 3), 50, AttentionSpec{AttentionKind::Softmax, 0.0, std::nullopt});
  EXPECT_EQ(y, x);
}

TEST(StepFull, RotationConjugation) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = random_configuration(rng, 4, 4);
    const Matrix v = gaussian_matrix(rng, 4);
    const Matrix r = random_orthogonal(rng, 4);
    for (const auto& spec : {kSoftmax1, kUnnormalized1}) {
      const auto lhs = step_full(rotate(r, x), r * v * r.transposed(), 10, spec);
      const auto rhs = rotate(r, step_full(x, v, 10, spec));
      EXPECT_LT(max_abs_diff(lhs.data(), rhs.data()), 1e-10);
    }
  }
}

TEST(StepFull, RejectsValueMatrixOfWrongSize) {
  const auto x = make_configuration({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_THROW(step_full(x, Matrix(3), 10, kSoftmax1), DimensionMismatch);
}

TEST(StepHybrid, ZeroEpsilonIsDeterministicEulerStep) {
  std::mt19937_64 rng(4);
  const auto x = random_configuration(rng, 3, 3);
  const auto y = step_hybrid(x, 0.37, 200, 0.0, kSoftmax1);
  for (std::size_t i = 0; i < 3; ++i) {
    const Vector expect = normalized_update(x[i], attention(i, x, kSoftmax1), 1.0 / 200);
    EXPECT_LT(max_abs_diff(y[i], expect), 1e-15);
  }
  const auto z = duplicate_first(x);
  const auto w = step_hybrid(z, -1.2, 100, 1.0, kSoftmax1);
  EXPECT_TRUE(std::equal(w[0].begin(), w[0].end(), w[1].begin()));
}

TEST(StepHybrid, DeterministicTwoTokensMergeMonotonically) {
  SimParams p;
  p.d = 3;
  p.n_tokens = 2;
  p.layers = 1000;
  p.horizon = 15;
  p.attention = kSoftmax1;
  p.mode = Hybrid{0.0};
  p.initial = two_token_configuration(3, 0.0);
  p.snapshot_stride = 1;
  const auto t = run(p, StreamKey{1, 0, 0});
  double prev = -2.0;
  for (const auto& s : t.snapshots) {
    const double z = dot(s.tokens[0], s.tokens[1]);
    EXPECT_GE(z, prev - 1e-15);
    prev = z;
  }
  EXPECT_GT(prev, 1.0 - 1e-3);
}

TEST(StepLinearized, ZeroValueMatrixIsIdentity) {
  std::mt19937_64 rng(5);
  const auto x = random_configuration(rng, 3, 4);
  EXPECT_EQ(step_linearized(x, Matrix(4), 100, kSoftmax1), x);
}

TEST(StepLinearized, OneStepNormChangeIsSmallInOneOverL) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = random_configuration(rng, 2, 4);
    const Matrix v = gaussian_matrix(rng, 4);
    double c = 0.0;
    for (double l : {100.0, 400.0, 1600.0}) {
      const auto y = step_linearized(x, v, l, kSoftmax1);
      for (std::size_t i = 0; i < 2; ++i) c = std::max(c, std::abs(norm(y[i]) - 1.0) * l);
    }
    // |‖X'‖ - 1| <= C / L with a moderate measured constant
    EXPECT_LT(c, 10.0);
  }
}

TEST(StepLinearized, LeavingTheNormBandThrows) {
  const auto x = make_configuration({{1.0, 0.0}, {0.0, 1.0}});
  Matrix v(2);
  v(0, 1) = 50.0;
  v(1, 0) = -50.0;
  EXPECT_THROW(step_linearized(x, v, 1.0, kSoftmax1), NormDrift);
}

TEST(StepEmFull, FixedPointsAndSymmetry) {
  const auto x = make_configuration({{1.0, 0.0, 0.0}, {-1.0, 0.0, 0.0}});
  std::mt19937_64 rng(7);
  EXPECT_EQ(step_em_full(x, Matrix(3), 1e-3, 1.0, AttentionSpec{AttentionKind::Softmax, 0.0, std::nullopt}), x);
  const auto z = duplicate_first(random_configuration(rng, 2, 3));
  const auto w = step_em_full(z, gaussian_matrix(rng, 3, 0.03), 1e-3, 1.0, kSoftmax1);
  EXPECT_TRUE(std::equal(w[0].begin(), w[0].end(), w[1].begin()));
}

TEST(StepEmFull, RadialTermsCancelAtFirstOrder) {
  // Before renormalization E|X'|^2 - 1 = (c |A|^2 dt)^2 with c = (1-d) sigma^2 / 2:
  // the dt-order radial terms cancel.
  const std::size_t d = 4;
  const double dt = 1e-2, sigma = 1.0;
  std::mt19937_64 rng(8);
  const auto x = random_configuration(rng, 2, d);
  const Vector a = attention(0, x, kSoftmax1);
  const double c = 0.5 * (1.0 - static_cast<double>(d)) * sigma * sigma;
  const double expected = std::pow(c * dot(a, a) * dt, 2);
  RunningStats s;
  for (std::uint64_t k = 0; k < 100000; ++k) {
    Matrix dw = sample_value_matrix(StreamKey{8, k, 0}, d, NoiseSpec::gaussian(std::sqrt(dt)));
    const auto y = step_em_full(x, dw, dt, sigma, kSoftmax1, false);
    s.add(squared_norm(y[0]) - 1.0);
  }
  EXPECT_LT(std::abs(s.mean() - expected), 4.0 * s.standard_error());
  // the first-order term it cancels is two orders of magnitude larger
  EXPECT_LT(std::abs(s.mean()), 0.05 * std::abs(2.0 * c * dot(a, a) * dt));
}

TEST(StepEmHybrid, ZeroNoiseIsEulerStepOfDeterministicFlow) {
  std::mt19937_64 rng(9);
  const auto x = random_configuration(rng, 3, 3);
  const double dt = 1e-3;
  const auto y = step_em_hybrid(x, 0.0, dt, 0.0, kSoftmax1);
  for (std::size_t i = 0; i < 3; ++i) {
    const Vector a = attention(i, x, kSoftmax1);
    const Vector expect = normalized_update(x[i], tangent_project(x[i], a), dt);
    EXPECT_LT(max_abs_diff(y[i], expect), 1e-15);
  }
  const auto z = duplicate_first(x);
  const auto w = step_em_hybrid(z, 0.01, dt, 1.0, kSoftmax1);
  EXPECT_TRUE(std::equal(w[0].begin(), w[0].end(), w[1].begin()));
}

TEST(StepEmHybrid, OverlapMomentsMatchHybridOverlapSde) {
  const double eps = 1.0, beta = 1.0, dt = 1e-4;
  const AttentionSpec spec{AttentionKind::Unnormalized, beta, std::nullopt};
  const OverlapModel m = OverlapModel::hybrid(beta, eps);
  for (double z : {-0.5, 0.0, 0.5}) {
    const auto x = two_token_configuration(3, z);
    std::vector<double> dz(100000);
    for (std::uint64_t k = 0; k < dz.size(); ++k) {
      KeyedEngine eng(StreamKey{10, k, 0});
      const double db = std::sqrt(dt) * standard_normal(eng);
      const auto y = step_em_hybrid(x, db, dt, eps, spec);
      dz[k] = dot(y[0], y[1]) - z;
    }
    const auto s = summarize_moments(dz);
    const double g = diffusion(m, z);
    EXPECT_LT(std::abs(s.mean - drift(m, z) * dt), 3.0 * s.mean_se) << "z = " << z;
    EXPECT_LT(std::abs(s.variance - g * g * dt), 3.0 * s.variance_se) << "z = " << z;
  }
}

TEST(Run, ZeroHorizonHasOnlyInitialSnapshot) {
  SimParams p;
  p.horizon = 0.0;
  const auto t = run(p, StreamKey{1, 0, 0});
  ASSERT_EQ(t.snapshots.size(), 1u);
  EXPECT_EQ(t.snapshots[0].step, 0u);
  EXPECT_EQ(t.terminal, t.snapshots[0].tokens);
}

TEST(Run, SnapshotScheduleAndStepCount) {
  SimParams p;
  p.layers = 100;
  p.horizon = 2.55;  // 255 steps, stride 10
  const auto t = run(p, StreamKey{2, 0, 0});
  EXPECT_EQ(p.total_steps(), 255u);
  ASSERT_EQ(t.snapshots.size(), 27u);
  EXPECT_EQ(t.snapshots[1].step, 10u);
  EXPECT_EQ(t.snapshots.back().step, 255u);
  EXPECT_DOUBLE_EQ(t.snapshots[1].time, 0.1);
  EXPECT_EQ(t.terminal, t.snapshots.back().tokens);
  p.horizon = 0.29;  // floor(0.29 * 100) must be 29, not 28
  EXPECT_EQ(p.total_steps(), 29u);
}

TEST(Run, IsBitReproducible) {
  SimParams p;
  p.d = 5;
  p.n_tokens = 4;
  p.horizon = 3;
  const auto a = run(p, StreamKey{3, 7, 0});
  const auto b = run(p, StreamKey{3, 7, 0});
  ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
  for (std::size_t k = 0; k < a.snapshots.size(); ++k) EXPECT_EQ(a.snapshots[k].tokens, b.snapshots[k].tokens);
  const auto c = run(p, StreamKey{3, 8, 0});
  EXPECT_FALSE(c.terminal == a.terminal);
}

TEST(Run, ValidatesParameters) {
  SimParams p;
  p.mode = Hybrid{1.0};
  p.noise.sigma = 2.0;
  EXPECT_THROW(run(p, {}), InvalidArgument);
  p = SimParams{};
  p.layers = 0;
  EXPECT_THROW(run(p, {}), InvalidArgument);
  p = SimParams{};
  p.mode = ContinuousFull{0};
  EXPECT_THROW(run(p, {}), InvalidArgument);
  p = SimParams{};
  p.initial = make_configuration({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
  EXPECT_THROW(run(p, {}), DimensionMismatch);
}

namespace {

std::vector<DynamicsMode> sphere_modes() {
  return {FullNoise{}, Hybrid{0.8}, ContinuousFull{2}, ContinuousHybrid{0.8, 2}};
}

}  // namespace

TEST(Run, SpherePreservedInEveryRenormalizingMode) {
  for (const auto& mode : sphere_modes()) {
    SimParams p;
    p.d = 5;
    p.n_tokens = 6;
    p.layers = 50;
    p.horizon = 4;
    p.mode = mode;
    p.attention.beta = 2.0;
    const auto t = run(p, StreamKey{4, 0, 0});
    for (const auto& s : t.snapshots) EXPECT_LE(s.tokens.max_norm_deviation(), 1e-12) << mode_name(mode);
  }
}

TEST(Run, CommonNoiseKeepsEqualTokensEqual) {
  std::mt19937_64 rng(11);
  for (auto mode : {DynamicsMode{FullNoise{}}, DynamicsMode{Hybrid{1.0}}, DynamicsMode{Linearized{}},
                    DynamicsMode{ContinuousFull{1}}, DynamicsMode{ContinuousHybrid{1.0, 1}}}) {
    SimParams p;
    p.d = 3;
    p.n_tokens = 3;
    p.layers = 100;
    p.horizon = 0.5;
    p.mode = mode;
    auto x = random_configuration(rng, 3, 3);
    std::copy(x[0].begin(), x[0].end(), x[2].begin());
    p.initial = x;
    const auto t = run(p, StreamKey{5, 0, 0});
    ASSERT_FALSE(t.aborted());
    for (const auto& s : t.snapshots) EXPECT_TRUE(std::equal(s.tokens[0].begin(), s.tokens[0].end(), s.tokens[2].begin()));
  }
}

TEST(Run, ExchangeableUnderTokenPermutation) {
  std::mt19937_64 rng(12);
  const auto x = random_configuration(rng, 4, 3);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  TokenConfiguration px(4, 3);
  for (std::size_t i = 0; i < 4; ++i) std::copy(x[perm[i]].begin(), x[perm[i]].end(), px[i].begin());
  for (const auto& mode : sphere_modes()) {
    SimParams p;
    p.d = 3;
    p.n_tokens = 4;
    p.layers = 100;
    p.horizon = 1;
    p.mode = mode;
    p.initial = x;
    const auto a = run(p, StreamKey{6, 0, 0});
    p.initial = px;
    const auto b = run(p, StreamKey{6, 0, 0});
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(max_abs_diff(b.terminal[i], a.terminal[perm[i]]), 1e-12);
  }
}

TEST(Run, FailingStepLeavesAbortRecord) {
  SimParams p;
  p.d = 3;
  p.n_tokens = 2;
  p.layers = 1;
  p.horizon = 50;
  p.noise.sigma = 30.0;
  p.mode = Linearized{};
  const auto t = run(p, StreamKey{7, 0, 0});
  ASSERT_TRUE(t.aborted());
  EXPECT_EQ(t.abort->norms.size(), 2u);
  EXPECT_NE(t.abort->message.find("norm"), std::string::npos);
  EXPECT_EQ(t.terminal, t.snapshots.back().tokens);
  EXPECT_LT(t.snapshots.back().step, t.abort->step + 1);
}

TEST(Run, DiscreteAndContinuousAntipodalFractionsAgree) {
  // FullNoise at L and ContinuousFull at the same resolution, d = 4, beta = 1.5.
  ModeComparisonSpec s;
  s.d = 4;
  s.beta = 1.5;
  s.common.attention = AttentionKind::Softmax;
  s.common.horizon = 50.0;
  s.common.trials = 2000;
  s.common.seed = 99;
  s.modes = {FullNoise{}, ContinuousFull{1}};
  const auto r = mode_comparison(s);
  EXPECT_LT(max_pairwise_antipodal_z(r.cells), 3.0)
      << r.cells[0].antipodal() << " vs " << r.cells[1].antipodal();
}
