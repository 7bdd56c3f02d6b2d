#include "support.hpp"

#include <gtest/gtest.h>

using namespace tthf;
using tthf::testing::random_parts;
using tthf::testing::random_partition;
using tthf::testing::random_vector;

namespace {

DevicePartition single(double x, double y) {
  DevicePartition p;
  p.points.push_back({Vector::Constant(1, x), y});
  return p;
}

LossModel regression(int dim, double reg) { return {LossKind::linear_regression, reg, dim}; }

}  // namespace

TEST(LocalLoss, SinglePointRegression) {
  EXPECT_DOUBLE_EQ(local_loss(regression(1, 0.0), Vector::Constant(1, 2.0), single(1.0, 0.0)), 2.0);
}

TEST(LocalLoss, MatchesDirectSummation) {
  Rng rng(7);
  const auto part = random_partition(10, 4, rng);
  const Vector w = random_vector(4, rng);
  const double reg = 0.3;
  double sum = 0.0;
  for (const auto& p : part.points) {
    double pred = 0.0;
    for (int j = 0; j < 4; ++j) pred += w[j] * p.x[j];
    sum += 0.5 * (p.y - pred) * (p.y - pred);
  }
  double sq = 0.0;
  for (int j = 0; j < 4; ++j) sq += w[j] * w[j];
  const double expected = sum / 10.0 + 0.5 * reg * sq;
  EXPECT_NEAR(local_loss(regression(4, reg), w, part), expected, 1e-12 * std::abs(expected));
}

TEST(LocalLoss, DimensionMismatchThrows) {
  EXPECT_THROW(local_loss(regression(2, 0.0), Vector::Zero(2), single(1.0, 0.0)), InvalidArgument);
}

TEST(LocalLoss, SquaredHingeValue) {
  LossModel m{LossKind::squared_hinge_svm, 0.0, 1};
  // margin 0.5 -> 0.5 * 0.25
  EXPECT_DOUBLE_EQ(local_loss(m, Vector::Constant(1, 0.5), single(1.0, 1.0)), 0.125);
  EXPECT_DOUBLE_EQ(local_loss(m, Vector::Constant(1, 2.0), single(1.0, 1.0)), 0.0);
}

TEST(GlobalLoss, IdenticalDataEqualsLocal) {
  Rng rng(3);
  const auto part = random_partition(6, 3, rng);
  std::vector<DevicePartition> parts(5, part);
  const Vector w = random_vector(3, rng);
  const auto m = regression(3, 0.2);
  EXPECT_NEAR(global_loss(m, w, parts, {3, 2}), local_loss(m, w, part), 1e-12);
}

TEST(GlobalLoss, ClusterWeights) {
  const auto w = cluster_weights({3, 1});
  ASSERT_EQ(w.size(), 2u);
  EXPECT_DOUBLE_EQ(w[0], 0.75);
  EXPECT_DOUBLE_EQ(w[1], 0.25);
  EXPECT_THROW(cluster_weights({3, 0}), InvalidArgument);
}

TEST(GlobalLoss, EqualsFlatDeviceMean) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto parts = random_parts(6, 3 + trial % 4, 3, rng);
    const Vector w = random_vector(3, rng);
    const auto m = regression(3, 0.1);
    double flat = 0.0;
    for (const auto& p : parts) flat += local_loss(m, w, p);
    flat /= 6.0;
    EXPECT_NEAR(global_loss(m, w, parts, {1, 3, 2}), flat, 1e-12 * std::max(1.0, flat));
    EXPECT_NEAR(global_loss(m, w, parts), flat, 1e-12 * std::max(1.0, flat));
  }
}

TEST(GlobalLoss, EmptyClusterThrows) {
  Rng rng(1);
  const auto parts = random_parts(2, 2, 2, rng);
  EXPECT_THROW(global_loss(regression(2, 0.1), Vector::Zero(2), parts, {2, 0}), InvalidArgument);
}

TEST(GradFull, SinglePoint) {
  const Vector g = grad_full(regression(1, 0.0), Vector::Constant(1, 2.0), single(1.0, 0.0));
  EXPECT_DOUBLE_EQ(g[0], 2.0);
}

TEST(GradFull, CentralDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const bool svm = trial % 2 == 1;
    const int dim = 1 + trial % 5;
    LossModel m{svm ? LossKind::squared_hinge_svm : LossKind::linear_regression, 0.05 * (trial % 3), dim};
    const auto part = random_partition(8, dim, rng, svm);
    const Vector w = random_vector(dim, rng);
    const Vector g = grad_full(m, w, part);
    const double h = 1e-5;
    for (int j = 0; j < dim; ++j) {
      Vector wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      const double fd = (local_loss(m, wp, part) - local_loss(m, wm, part)) / (2 * h);
      EXPECT_NEAR(g[j], fd, 1e-5) << "trial " << trial << " coord " << j;
    }
  }
}

TEST(GradFull, VanishesAtOptimum) {
  Rng rng(9);
  const auto parts = random_parts(4, 12, 3, rng);
  const auto m = regression(3, 0.1);
  const auto opt = solve_optimum(m, parts);
  EXPECT_LT(grad_global(m, opt.w, parts).norm(), 1e-10);
  for (int k = 0; k < 100; ++k) {
    const Vector d = random_vector(3, rng, 0.1);
    EXPECT_LE(opt.loss, global_loss(m, opt.w + d, parts));
  }
}

TEST(SolveOptimum, SquaredHingeStationary) {
  Rng rng(13);
  const auto parts = random_parts(3, 15, 4, rng, true);
  LossModel m{LossKind::squared_hinge_svm, 0.1, 4};
  const auto opt = solve_optimum(m, parts);
  EXPECT_LT(grad_global(m, opt.w, parts).norm(), 1e-10);
}

TEST(GradSgd, FullBatchEqualsFull) {
  Rng data(2);
  const auto part = random_partition(7, 3, data);
  const Vector w = random_vector(3, data);
  Rng rng(4);
  const auto m = regression(3, 0.1);
  EXPECT_TRUE(grad_sgd(m, w, part, 7, rng).isApprox(grad_full(m, w, part), 1e-14));
}

TEST(GradSgd, BatchOutOfRangeThrows) {
  Rng rng(2);
  const auto part = random_partition(4, 2, rng);
  EXPECT_THROW(grad_sgd(regression(2, 0.0), Vector::Zero(2), part, 0, rng), InvalidArgument);
  EXPECT_THROW(grad_sgd(regression(2, 0.0), Vector::Zero(2), part, 5, rng), InvalidArgument);
}

TEST(GradSgd, UnbiasedWithinThreeStandardErrors) {
  Rng data(21);
  const auto part = random_partition(20, 3, data);
  const Vector w = random_vector(3, data);
  const auto m = regression(3, 0.1);
  const Vector exact = grad_full(m, w, part);
  Rng rng(22);
  const int n = 10000;
  Vector sum = Vector::Zero(3), sq = Vector::Zero(3);
  double var_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const Vector g = grad_sgd(m, w, part, 4, rng);
    sum += g;
    sq += g.cwiseProduct(g);
    var_sum += (g - exact).squaredNorm();
  }
  const Vector mean = sum / n;
  for (int j = 0; j < 3; ++j) {
    const double var = sq[j] / n - mean[j] * mean[j];
    EXPECT_LE(std::abs(mean[j] - exact[j]), 3.0 * std::sqrt(var / n)) << j;
  }
  // Empirical variance agrees with the exact finite-population formula.
  const double exact_var = sgd_variance_exact(m, w, part, 4);
  EXPECT_NEAR(var_sum / n, exact_var, 0.05 * exact_var);
}

TEST(GradSgd, Deterministic) {
  Rng data(8);
  const auto part = random_partition(10, 2, data);
  Rng a(99), b(99);
  const auto m = regression(2, 0.0);
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(grad_sgd(m, Vector::Ones(2), part, 3, a), grad_sgd(m, Vector::Ones(2), part, 3, b));
  }
}

TEST(Smoothness, SinglePoint) {
  const std::vector<DevicePartition> parts{single(1.0, 0.0)};
  auto s = smoothness_constants(regression(1, 0.0), parts);
  EXPECT_DOUBLE_EQ(s.mu, 1.0);
  EXPECT_DOUBLE_EQ(s.beta, 1.0);
  s = smoothness_constants(regression(1, 0.1), parts);
  EXPECT_DOUBLE_EQ(s.mu, 1.1);
  EXPECT_DOUBLE_EQ(s.beta, 1.1);
}

TEST(Smoothness, RankDeficientNotCertified) {
  DevicePartition p;
  p.points.push_back({Vector::Unit(2, 0), 1.0});
  const std::vector<DevicePartition> parts{p};
  try {
    smoothness_constants(regression(2, 0.0), parts);
    FAIL() << "expected an error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("strong convexity not certified"), std::string::npos);
  }
}

TEST(Smoothness, MatchesPowerIterationOracle) {
  Rng rng(17);
  const auto parts = random_parts(10, 5, 5, rng);  // 50 x 5 design
  const auto m = regression(5, 0.05);
  const auto s = smoothness_constants(m, parts);
  Matrix mean = Matrix::Zero(5, 5);
  double beta = 0.0;
  for (const auto& p : parts) {
    Matrix h = Matrix::Zero(5, 5);
    for (const auto& pt : p.points) h += pt.x * pt.x.transpose();
    h /= static_cast<double>(p.size());
    h += 0.05 * Matrix::Identity(5, 5);
    mean += h / 10.0;
    beta = std::max(beta, tthf::testing::power_iteration(h));
  }
  EXPECT_NEAR(s.mu, tthf::testing::min_eigenvalue(mean), 1e-8);
  EXPECT_NEAR(s.beta, beta, 1e-8);
}

TEST(Smoothness, StrongConvexityAndSmoothnessInequalities) {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const bool svm = trial % 2 == 1;
    LossModel m{svm ? LossKind::squared_hinge_svm : LossKind::linear_regression, 0.1, 3};
    const auto parts = random_parts(4, 6, 3, rng, svm);
    const auto s = smoothness_constants(m, parts);
    EXPECT_GE(s.beta, s.mu);
    for (int k = 0; k < 20; ++k) {
      const Vector w1 = random_vector(3, rng, 2.0), w2 = random_vector(3, rng, 2.0);
      const double lhs = global_loss(m, w1, parts);
      const double rhs = global_loss(m, w2, parts) + grad_global(m, w2, parts).dot(w1 - w2) +
                         0.5 * s.mu * (w1 - w2).squaredNorm();
      EXPECT_GE(lhs, rhs - 1e-10);
      for (const auto& p : parts) {
        EXPECT_LE((grad_full(m, w1, p) - grad_full(m, w2, p)).norm(), s.beta * (w1 - w2).norm() + 1e-10);
      }
    }
  }
}

TEST(LossKindNames, RoundTrip) {
  for (auto k : {LossKind::linear_regression, LossKind::squared_hinge_svm}) {
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_loss_kind("hinge"), InvalidArgument);
}
