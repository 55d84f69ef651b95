#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "lodadac/localopt.hpp"

using namespace lodadac;
using namespace lodadac::localopt;

namespace {

OptimizerSpec make(Kind kind, double alpha = 1.0, double beta1 = 0.9, double beta2 = 0.999, double delta = 1.0) {
  OptimizerSpec s;
  s.kind = kind;
  s.alpha = alpha;
  s.beta1 = kind == Kind::vanilla_sgd ? 0.0 : beta1;
  s.beta2 = beta2;
  s.delta = delta;
  return s;
}

Vec random_vec(Rng& rng, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(d);
  for (auto& x : v) x = nd(rng);
  return v;
}

const Kind kAllKinds[] = {Kind::vanilla_sgd, Kind::momentum_sgd, Kind::amsgrad,       Kind::adam,
                          Kind::adam_mini,   Kind::avg_adagrad,  Kind::matrix_adagrad};

}  // namespace

TEST(FirstMoment, NoMomentumCopiesGradient) {
  auto st = OptimizerState::zeros(make(Kind::momentum_sgd), 3);
  st.m = {5.0, -5.0, 1.0};
  Vec g{1.0, 2.0, 3.0};
  EXPECT_EQ(update_first_moment(st, g, 0.0), g);
}

TEST(FirstMoment, SingleStepFromZero) {
  auto st = OptimizerState::zeros(make(Kind::adam), 3);
  Vec g(3, 1.0);
  const auto& m = update_first_moment(st, g, 0.9);
  for (double v : m) EXPECT_NEAR(v, 0.1, 1e-15);
}

TEST(FirstMoment, ConstantGradientGeometricSum) {
  auto st = OptimizerState::zeros(make(Kind::adam), 2);
  Vec g{2.0, -3.0};
  const double b1 = 0.9;
  for (int t = 0; t < 40; ++t) {
    update_first_moment(st, g, b1);
    const double factor = 1.0 - std::pow(b1, t + 1);
    EXPECT_NEAR(st.m[0], factor * g[0], 1e-13);
    EXPECT_NEAR(st.m[1], factor * g[1], 1e-13);
  }
  Vec wrong(3, 0.0);
  EXPECT_THROW(update_first_moment(st, wrong, b1), std::invalid_argument);
}

TEST(SecondMoment, AmsgradFirstStep) {
  auto spec = make(Kind::amsgrad, 1.0, 0.9, 0.9);
  auto st = OptimizerState::zeros(spec, 1);
  Vec g{1.0};
  update_second_moment(spec, st, g);
  EXPECT_NEAR(st.u_hat[0], 0.1, 1e-15);
  EXPECT_NEAR(st.u[0], 0.1, 1e-15);
}

TEST(SecondMoment, AdamFirstStep) {
  auto spec = make(Kind::adam, 1.0, 0.9, 0.999);
  auto st = OptimizerState::zeros(spec, 1);
  Vec g{2.0};
  update_second_moment(spec, st, g);
  EXPECT_NEAR(st.u[0], 0.004, 1e-15);
}

TEST(SecondMoment, AdamMiniBroadcastsCoordinateMean) {
  auto spec = make(Kind::adam_mini, 1.0, 0.9, 0.5);
  auto st = OptimizerState::zeros(spec, 3);
  Vec g{1.0, 2.0, 3.0};
  update_second_moment(spec, st, g);
  for (double v : st.u) EXPECT_NEAR(v, 0.5 * 14.0 / 3.0, 1e-14);
  update_second_moment(spec, st, g);
  for (double v : st.u) EXPECT_NEAR(v, 0.5 * 0.5 * 14.0 / 3.0 + 0.5 * 14.0 / 3.0, 1e-14);
}

TEST(SecondMoment, AvgAdagradTwoSteps) {
  auto spec = make(Kind::avg_adagrad);
  auto st = OptimizerState::zeros(spec, 1);
  Vec g0{1.0}, g1{3.0};
  update_second_moment(spec, st, g0);
  st.t = 1;
  update_second_moment(spec, st, g1);
  EXPECT_NEAR(st.u[0], 5.0, 1e-15);
}

TEST(SecondMoment, AvgAdagradIncrementalMeanMatchesBatchMean) {
  auto spec = make(Kind::avg_adagrad);
  Rng rng(3);
  auto st = OptimizerState::zeros(spec, 4);
  Vec x(4, 0.0);
  std::vector<Vec> gs;
  for (int t = 0; t < 200; ++t) {
    gs.push_back(random_vec(rng, 4, 2.0));
    adaptive_update(spec, st, x, gs.back());
    for (std::size_t k = 0; k < 4; ++k) {
      double mean = 0.0;
      for (const auto& g : gs) mean += g[k] * g[k];
      mean /= static_cast<double>(gs.size());
      EXPECT_NEAR(st.u[k], mean, 1e-12 * std::max(1.0, mean));
    }
  }
}

TEST(SecondMoment, SgdKindsKeepZero) {
  Rng rng(4);
  for (Kind k : {Kind::vanilla_sgd, Kind::momentum_sgd}) {
    auto spec = make(k);
    auto st = OptimizerState::zeros(spec, 5);
    Vec x(5, 0.0);
    for (int t = 0; t < 50; ++t) x = adaptive_update(spec, st, x, random_vec(rng, 5));
    for (double v : st.u) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(st.inv_sqrt_diff_sum, 0.0);
  }
}

TEST(SecondMoment, AmsgradIsMonotone) {
  auto spec = make(Kind::amsgrad, 0.1, 0.9, 0.9);
  Rng rng(5);
  auto st = OptimizerState::zeros(spec, 6);
  Vec x(6, 0.0);
  for (int t = 0; t < 300; ++t) {
    Vec before = st.u;
    // Shrinking gradients make the running average fall; u must not.
    x = adaptive_update(spec, st, x, random_vec(rng, 6, 5.0 / (1 + t)));
    for (std::size_t k = 0; k < 6; ++k) EXPECT_GE(st.u[k], before[k]);
  }
}

TEST(SecondMoment, BoundedByClipSquared) {
  Rng rng(6);
  const double b_inf = 0.7;
  for (Kind kind : kAllKinds) {
    auto spec = make(kind, 0.01, 0.9, 0.9);
    auto st = OptimizerState::zeros(spec, 5);
    Vec x(5, 0.0);
    for (int t = 0; t < 200; ++t) {
      Vec g = random_vec(rng, 5, 3.0);
      for (auto& v : g) v = std::clamp(v, -b_inf, b_inf);
      x = adaptive_update(spec, st, x, g);
      for (double v : st.u) EXPECT_LE(std::abs(v), b_inf * b_inf * (1 + 1e-12)) << to_string(kind);
    }
  }
}

TEST(LocalStep, UnitDivisor) {
  auto spec = make(Kind::adam, 1.0, 0.9, 0.999, 1.0);
  auto st = OptimizerState::zeros(spec, 2);
  st.m = {2.0, -2.0};
  Vec x{1.0, 1.0};
  EXPECT_EQ(local_step(st, x, spec), (Vec{-1.0, 3.0}));
}

TEST(LocalStep, LaggedDivisorHandEvaluation) {
  auto spec = make(Kind::adam, 0.5, 0.9, 0.999, 1.0);
  auto st = OptimizerState::zeros(spec, 1);
  st.m = {4.0};
  st.u_prev = {3.0};
  st.u = {1e6};  // newest moment must not enter the step
  Vec x{10.0};
  EXPECT_NEAR(local_step(st, x, spec)[0], 9.0, 1e-15);
}

TEST(LocalStep, MatrixAdagradIdentityCase) {
  auto spec = make(Kind::matrix_adagrad, 0.3, 0.9, 0.999, 1.0);
  auto st = OptimizerState::zeros(spec, 3);
  st.m = {1.0, -2.0, 0.5};
  st.u_prev = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec x{0.0, 0.0, 0.0};
  auto xh = local_step(st, x, spec);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(xh[k], -0.3 * st.m[k] / std::sqrt(2.0), 1e-14);
}

TEST(LocalStep, NonPositiveDeltaRejected) {
  auto spec = make(Kind::adam);
  auto st = OptimizerState::zeros(spec, 1);
  spec.delta = 0.0;
  Vec x{1.0};
  EXPECT_THROW(local_step(st, x, spec), std::invalid_argument);
}

TEST(LocalStep, SentinelAffectsNextStepOnly) {
  for (Kind kind : {Kind::adam, Kind::amsgrad, Kind::avg_adagrad, Kind::adam_mini}) {
    auto spec = make(kind, 0.1, 0.0, 0.9, 1.0);
    if (kind == Kind::adam_mini) spec.beta1 = 0.5;
    Rng rng(7);
    auto a = OptimizerState::zeros(spec, 3);
    auto b = OptimizerState::zeros(spec, 3);
    Vec xa(3, 0.0), xb(3, 0.0);
    for (int t = 0; t < 10; ++t) {
      Vec g = random_vec(rng, 3);
      xa = adaptive_update(spec, a, xa, g);
      xb = adaptive_update(spec, b, xb, g);
    }
    // Same first moment, different second moment at step t: the step at t is
    // unaffected, the step at t+1 differs.
    Vec g{0.3, -0.2, 0.1};
    Vec big{30.0, -20.0, 10.0};
    auto sa = a;
    update_first_moment(sa, g, spec.beta1);
    update_second_moment(spec, sa, g);
    auto sb = b;
    update_first_moment(sb, g, spec.beta1);
    update_second_moment(spec, sb, big);
    EXPECT_EQ(local_step(sa, xa, spec), local_step(sb, xb, spec)) << to_string(kind);
    update_first_moment(sa, g, spec.beta1);
    update_second_moment(spec, sa, g);
    update_first_moment(sb, g, spec.beta1);
    update_second_moment(spec, sb, g);
    EXPECT_NE(local_step(sa, xa, spec), local_step(sb, xb, spec)) << to_string(kind);
  }
}

TEST(InverseRoot, MatchesEigenOracle) {
  Rng rng(8);
  for (std::size_t d : {1u, 2u, 5u, 9u, 16u}) {
    Eigen::MatrixXd g(d, 2 * d);
    std::normal_distribution<double> nd;
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
    Eigen::MatrixXd a = g * g.transpose() / static_cast<double>(2 * d);
    const double delta = 0.1;
    Vec flat(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = a(i, j);
    auto ours = inverse_sqrt_shifted(flat, d, delta);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a + delta * Eigen::MatrixXd::Identity(d, d));
    Eigen::MatrixXd ref = es.operatorInverseSqrt();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(ours[i * d + j], ref(i, j), 1e-9) << "d=" << d;
  }
}

TEST(InverseRoot, EigenDecompositionReconstructs) {
  Vec a{4, 1, 0, 1, 3, 1, 0, 1, 2};
  Vec vals, vecs;
  symmetric_eigen(a, 3, vals, vecs);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += vecs[i * 3 + k] * vals[k] * vecs[j * 3 + k];
      EXPECT_NEAR(s, a[i * 3 + j], 1e-12);
    }
}

TEST(MatrixAdagrad, SecondMomentIsMeanOuterProduct) {
  auto spec = make(Kind::matrix_adagrad, 0.01, 0.9, 0.999, 1.0);
  Rng rng(9);
  auto st = OptimizerState::zeros(spec, 3);
  Vec x(3, 0.0);
  Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
  for (int t = 0; t < 20; ++t) {
    Vec g = random_vec(rng, 3);
    Eigen::Vector3d e(g[0], g[1], g[2]);
    sum += e * e.transpose();
    x = adaptive_update(spec, st, x, g);
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(st.u[i * 3 + j], sum(i, j) / 20.0, 1e-12);
  EXPECT_THROW(OptimizerState::zeros(spec, kMatrixAdagradMaxDim + 1), std::invalid_argument);
}

TEST(Accumulator, MatchesDirectRecomputation) {
  Rng rng(10);
  for (Kind kind : {Kind::adam, Kind::amsgrad, Kind::avg_adagrad, Kind::adam_mini}) {
    auto spec = make(kind, 0.05, 0.9, 0.9, 0.5);
    auto st = OptimizerState::zeros(spec, 4);
    Vec x(4, 0.0);
    double expected = 0.0;
    Vec lag1(4, 0.0), lag2(4, 0.0);  // u^{t-1}, u^{t-2}
    for (int t = 0; t < 60; ++t) {
      lag2 = lag1;
      lag1 = st.u;
      for (int k = 0; k < 4; ++k) {
        double diff = 1.0 / std::sqrt(lag2[k] + spec.delta) - 1.0 / std::sqrt(lag1[k] + spec.delta);
        expected += diff * diff;
      }
      x = adaptive_update(spec, st, x, random_vec(rng, 4));
      EXPECT_NEAR(st.inv_sqrt_diff_sum, expected, 1e-12) << to_string(kind) << " t=" << t;
    }
  }
}

TEST(Accumulator, AmsgradBelowDimensionOverDelta) {
  auto spec = make(Kind::amsgrad, 0.05, 0.9, 0.9, 1.0);
  Rng rng(11);
  auto st = OptimizerState::zeros(spec, 10);
  Vec x(10, 0.0);
  for (int t = 0; t < 500; ++t) {
    Vec g = random_vec(rng, 10, 4.0);
    for (auto& v : g) v = std::clamp(v, -1.0, 1.0);
    x = adaptive_update(spec, st, x, g);
  }
  EXPECT_LE(st.inv_sqrt_diff_sum, 10.0 / spec.delta);
}

TEST(Spec, Validation) {
  EXPECT_NO_THROW(make(Kind::adam).validate());
  auto bad = make(Kind::vanilla_sgd);
  bad.beta1 = 0.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  auto mom = make(Kind::momentum_sgd);
  mom.beta1 = 0.0;
  EXPECT_THROW(mom.validate(), std::invalid_argument);
  auto b2 = make(Kind::adam);
  b2.beta2 = 1.0;
  EXPECT_THROW(b2.validate(), std::invalid_argument);
  auto a = make(Kind::adam);
  a.alpha = 0.0;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  EXPECT_THROW(kind_from_string("rmsprop"), std::invalid_argument);
  for (Kind k : kAllKinds) EXPECT_EQ(kind_from_string(to_string(k)), k);
}

TEST(Spec, Beta2FloorForRunLength) {
  EXPECT_NEAR(min_beta2_for(100), 10.0 / 11.0, 1e-15);
  EXPECT_NEAR(min_beta2_for(500), std::sqrt(500.0) / (std::sqrt(500.0) + 1.0), 1e-15);
}
