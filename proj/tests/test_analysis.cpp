#include <complex>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rlalm/rlalm.hpp"

using namespace rlalm;

namespace {

struct LassoSaddle {
  Matrix a;
  CompositeProblem p;
  SaddlePointEstimate saddle;
};

LassoSaddle lasso_with_saddle(std::uint64_t seed) {
  LassoSaddle l;
  l.a = oracle::random_matrix(15, 10, seed);
  const Vector y = oracle::random_vector(15, seed + 1);
  l.p = make_problem(std::make_shared<const DenseOperator>(l.a), y, L1Prox{0.4});
  l.saddle = saddle_from_primal(l.p, oracle::cd_lasso(l.a, y, 0.4), SaddleSource::dense_kkt);
  return l;
}

}  // namespace

TEST(DualityGap, ZeroAtSaddle) {
  const auto l = lasso_with_saddle(1);
  EXPECT_NEAR(duality_gap(l.saddle.x_hat, l.saddle.u_hat, l.saddle, l.p), 0.0, 1e-12);
}

TEST(DualityGap, NonnegativeEverywhere) {
  const auto l = lasso_with_saddle(2);
  for (int i = 0; i < 100; ++i) {
    const Vector x = oracle::random_vector(10, 100 + i);
    const Vector u = oracle::random_vector(15, 300 + i, 3.0);
    EXPECT_GE(duality_gap(x, u, l.saddle, l.p), -1e-10);
  }
}

TEST(DualityGap, CarriedProductMatchesRecomputed) {
  const auto l = lasso_with_saddle(3);
  const Vector x = oracle::random_vector(10, 4);
  const Vector u = oracle::random_vector(15, 5);
  EXPECT_DOUBLE_EQ(duality_gap_with_ax(x, l.a * x, u, l.saddle, l.p), duality_gap(x, u, l.saddle, l.p));
}

TEST(DualityGap, ByHandOnScalarProblem) {
  // f = 1/2 (u - 2)^2 + |x|, A = 1: x̂ = û = 1, μ̂ = 1.
  const auto p = make_problem(std::make_shared<const DenseOperator>(Matrix::Ones(1, 1)), Vector::Constant(1, 2.0),
                              L1Prox{1.0});
  const auto s = saddle_from_primal(p, Vector::Constant(1, 1.0), SaddleSource::dense_kkt);
  EXPECT_EQ(s.mu_hat[0], 1.0);
  // x = 3, u = 0: [2 + 3 - (0.5 + 1)] - 1 * (3 - 0) = 0.5.
  EXPECT_DOUBLE_EQ(duality_gap(Vector::Constant(1, 3.0), Vector::Zero(1), s, p), 0.5);
}

TEST(ErgodicAverage, MeanOfIterates) {
  const std::vector<Vector> h{Vector::Constant(2, 1.0), Vector::Constant(2, 3.0), Vector::Constant(2, 8.0)};
  EXPECT_EQ(ergodic_average(h, 2), Vector::Constant(2, 2.0));
  EXPECT_EQ(ergodic_average(h, 3), Vector::Constant(2, 4.0));
  EXPECT_THROW(ergodic_average(h, 0), ConfigError);
  EXPECT_THROW(ergodic_average(h, 4), ConfigError);
  RunningAverage r;
  EXPECT_THROW(r.mean(), ConfigError);
  for (const auto& v : h) r.add(v);
  EXPECT_EQ(r.count(), 3u);
  EXPECT_EQ(r.mean(), ergodic_average(h, 3));
}

TEST(Bounds, VanishAtSaddle) {
  const auto l = lasso_with_saddle(6);
  const Vector d = Vector::Constant(10, 100.0);
  const auto t = theorem2_terms(l.saddle.x_hat, l.saddle.u_hat, l.saddle.mu_hat, l.saddle, d, d, 0.5, 1.5, l.p);
  EXPECT_NEAR(t.constant(), 0.0, 1e-20);
}

TEST(Bounds, ScaleAsOneOverK) {
  const auto l = lasso_with_saddle(7);
  const Vector d = Vector::Constant(10, 200.0);
  const Vector x0 = Vector::Zero(10), u0 = Vector::Zero(15), mu0 = l.p.data;
  const double b10 = theorem1_bound(10, x0, u0, mu0, l.saddle, d, d, 0.3, 1.2, l.p);
  EXPECT_NEAR(theorem1_bound(20, x0, u0, mu0, l.saddle, d, d, 0.3, 1.2, l.p), b10 / 2, 1e-14 * b10);
  EXPECT_THROW(theorem1_bound(0, x0, u0, mu0, l.saddle, d, d, 0.3, 1.2, l.p), ConfigError);
}

TEST(Bounds, RelaxationOrdering) {
  const auto l = lasso_with_saddle(8);
  const double lip = Eigen::SelfAdjointEigenSolver<Matrix>(l.a.transpose() * l.a).eigenvalues().maxCoeff();
  const Vector da = Vector::Constant(10, lip);
  const Vector zero = Vector::Zero(10);
  const Vector x0 = oracle::random_vector(10, 9), u0 = l.a * x0, mu0 = l.p.data - u0;
  const auto t1 = theorem1_terms(x0, u0, mu0, l.saddle, zero, da, 0.5, 1.0, l.p);
  const auto t2 = theorem2_terms(x0, u0, mu0, l.saddle, zero, da, 0.5, 1.0, l.p);
  EXPECT_DOUBLE_EQ(t1.constant(), t2.constant());
  const auto r1 = theorem1_terms(x0, u0, mu0, l.saddle, zero, da, 0.5, 1.999, l.p);
  const auto r2 = theorem2_terms(x0, u0, mu0, l.saddle, zero, da, 0.5, 1.999, l.p);
  EXPECT_GT(r1.b, 0.0);
  EXPECT_LT(r2.constant(), r1.constant());
  EXPECT_LT(r1.constant(), t1.constant());
}

TEST(Bounds, LinearizationTermByHand) {
  // A = 1, D_A = 2, x0 - x̂ = 1: b = rho/2 (2 - 1).
  const auto p = make_problem(std::make_shared<const DenseOperator>(Matrix::Ones(1, 1)), Vector::Zero(1), NoProx{});
  const auto s = saddle_from_primal(p, Vector::Zero(1), SaddleSource::dense_kkt);
  const auto t = theorem1_terms(Vector::Ones(1), Vector::Zero(1), Vector::Zero(1), s, Vector::Constant(1, 4.0),
                                Vector::Constant(1, 2.0), 0.6, 1.0, p);
  EXPECT_DOUBLE_EQ(t.a, 2.0);
  EXPECT_DOUBLE_EQ(t.b, 0.3);
  EXPECT_DOUBLE_EQ(t.c, 0.0);
}

TEST(Transition, UnitCaseByHand) {
  const auto t = transition_matrix(2.0, 2.0, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(t.t11, 0.5);
  EXPECT_DOUBLE_EQ(t.t12, 0.5);
  EXPECT_DOUBLE_EQ(t.t21, 0.0);
  EXPECT_DOUBLE_EQ(t.t22, 0.0);
  EXPECT_DOUBLE_EQ(t.spectral_radius(), 0.5);
}

TEST(Transition, MatchesOneStepOfQuadraticForm) {
  const std::vector<double> lambdas{0.05, 0.3, 0.7, 1.0};
  const Index n = 4;
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) a(i, i) = std::sqrt(lambdas[static_cast<std::size_t>(i)]);
  CompositeProblem p = make_problem(std::make_shared<const DenseOperator>(a), Vector::Zero(n), NoProx{});
  p.d_a.entries = Vector::Constant(n, 1.25);
  for (double alpha : {1.0, 1.6, 1.999}) {
    for (double rho : {0.02, 0.4, 1.0}) {
      SolverState s = init_quadratic_state(p, oracle::random_vector(n, 10));
      for (int k = 0; k < 5; ++k) {
        const SolverState next = lalm_proposed_quadratic_step(s, p, alpha, rho);
        for (Index i = 0; i < n; ++i) {
          const auto t = transition_matrix(lambdas[static_cast<std::size_t>(i)], 1.25, rho, alpha);
          EXPECT_NEAR(next.g[i], t.t11 * s.g[i] + t.t12 * s.h[i], 1e-12);
          EXPECT_NEAR(next.h[i], t.t21 * s.g[i] + t.t22 * s.h[i], 1e-12);
        }
        s = next;
      }
    }
  }
}

TEST(Transition, RejectsBadArguments) {
  EXPECT_THROW(transition_matrix(2.0, 1.0, 0.5, 1.0), ConfigError);
  EXPECT_THROW(transition_matrix(0.0, 1.0, 0.5, 1.0), ConfigError);
  EXPECT_THROW(transition_matrix(0.5, 1.0, 0.0, 1.0), ConfigError);
  EXPECT_THROW(critical_rho(1.5, 1.0), ConfigError);
}

TEST(Spectral, CriticalRhoValues) {
  EXPECT_DOUBLE_EQ(critical_rho(0.5, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(critical_rho(1.0, 4.0), std::sqrt(0.75));
  EXPECT_DOUBLE_EQ(critical_rho(1.0, 1.0), 0.0);
}

TEST(Spectral, DiscriminantRootIndependentOfAlpha) {
  for (double r : {1e-3, 0.05, 0.5, 0.8}) {
    for (double alpha : {1.0, 1.3, 1.999}) EXPECT_NEAR(discriminant_root(r, 1.0, alpha), critical_rho(r, 1.0), 1e-10);
  }
}

TEST(Spectral, DampingMatchesEigenvalueArgument) {
  for (double r : {1e-4, 1e-3, 1e-2}) {
    for (double alpha : {1.0, 1.999}) {
      const auto [e1, e2] = transition_matrix(r, 1.0, 1e-3, alpha).eigenvalues();
      const double w = damping_frequency(r, 1.0, alpha, 1e-3);
      EXPECT_NEAR(w, std::abs(std::arg(e1)), 1e-10);
      EXPECT_NEAR(w, std::abs(std::arg(e2)), 1e-10);
    }
  }
  EXPECT_NEAR(damping_frequency(1e-4, 1.0, 1.0), 0.01, 0.0005);
}

TEST(Spectral, OverdampedRegimeRaises) {
  EXPECT_THROW(damping_frequency(0.5, 1.0, 1.0, 2.0), RegimeError);
}

TEST(Psd, UnrelaxedBlocksAreSeparate) {
  const Matrix b = oracle::random_matrix(5, 3, 11);
  const Vector d = Vector::Constant(4, 0.5);
  const Matrix p = Matrix::Zero(4, 4);
  const Matrix h = assemble_H(1.0, 2.0, b, d, p);
  EXPECT_EQ(h.block(4, 7, 3, 5).cwiseAbs().maxCoeff(), 0.0);
  const auto rep = check_psd_H(1.0, 2.0, b, d, p);
  EXPECT_TRUE(rep.is_psd);
  const double bmin = Eigen::SelfAdjointEigenSolver<Matrix>(2.0 * b.transpose() * b).eigenvalues().minCoeff();
  EXPECT_NEAR(rep.min_eigenvalue, std::min({0.5, 0.5, bmin}), 1e-12);
}

TEST(Psd, RandomInstancesInRange) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ua(0.01, 1.99), ur(0.01, 10.0);
  for (int i = 0; i < 50; ++i) {
    const Matrix b = oracle::random_matrix(4, 3, 500 + i);
    const Matrix c = oracle::random_matrix(3, 3, 700 + i);
    EXPECT_TRUE(check_psd_H(ua(rng), ur(rng), b, Vector::Ones(3), c.transpose() * c).is_psd) << "instance " << i;
  }
}

TEST(Psd, FailsBeyondTwo) {
  // With B = I and rho = 1 each (u, mu) pair is [[1/a, (1-a)/a], [(1-a)/a, 1/a]],
  // eigenvalues (1 +- |1 - a|)/a; at a = 2.5 the smaller is -0.2.
  const auto rep = check_psd_H(2.5, 1.0, Matrix::Identity(3, 3), Vector::Ones(2), Matrix::Zero(2, 2));
  EXPECT_FALSE(rep.is_psd);
  EXPECT_NEAR(rep.min_eigenvalue, -0.2, 1e-12);
}

TEST(Rms, Examples) {
  const Vector x = (Vector(2) << 1, 3).finished();
  EXPECT_DOUBLE_EQ(rms_difference(x, Vector::Zero(2)), std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(rms_difference(x, Vector::Zero(2), (Vector(2) << 1, 0).finished()), 1.0);
  EXPECT_DOUBLE_EQ(rms_difference(x, Vector::Zero(2), std::nullopt, 10.0), 10.0 * std::sqrt(5.0));
  EXPECT_EQ(rms_difference(x, x), 0.0);
  EXPECT_THROW(rms_difference(x, Vector::Zero(2), Vector::Zero(2)), ConfigError);
  EXPECT_THROW(rms_difference(x, Vector::Zero(3)), ShapeError);
}
