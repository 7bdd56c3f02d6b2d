#include "support.hpp"

#include "tthf/consensus.hpp"

#include <gtest/gtest.h>

using namespace tthf;
using tthf::testing::matrix_power;
using tthf::testing::random_matrix;
using tthf::testing::random_mixing;

namespace {

Matrix path3_v() {
  Eigen::MatrixXi adj(3, 3);
  adj << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  return consensus_matrix(make_graph(adj), 1.0 / 3.0);
}

OutagePolicy lossy(const Matrix& v, double p_loss) {
  OutagePolicy o;
  o.enabled = true;
  // Fading gain |u|^2 ~ Exp(1) is lost below -log(1 - p_loss).
  o.gain_threshold = Matrix::Constant(v.rows(), v.cols(), -std::log1p(-p_loss));
  return o;
}

}  // namespace

TEST(RunConsensus, ZeroRoundsIsIdentity) {
  Rng rng(1);
  const Matrix w = random_matrix(3, 4, rng);
  const Matrix out = run_consensus(w, path3_v(), 0);
  EXPECT_EQ(out, w);
}

TEST(RunConsensus, MatchesMatrixPower) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int s = 1 + trial % 8;
    const Matrix v = random_mixing(s, rng);
    const Matrix w = random_matrix(s, 1 + trial % 16, rng);
    const Matrix expected = matrix_power(v, 7) * w;
    EXPECT_LE((run_consensus(w, v, 7) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(RunConsensus, ConvergesToAverage) {
  Rng rng(3);
  const Matrix w = random_matrix(3, 5, rng);
  const Matrix out = run_consensus(w, path3_v(), 50);
  const Eigen::RowVectorXd mean = w.colwise().mean();
  for (int i = 0; i < 3; ++i) EXPECT_LE((out.row(i) - mean).norm(), 1e-8);
}

TEST(RunConsensus, OutagesPreserveAverage) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int s = 2 + trial % 7;
    const Matrix v = random_mixing(s, rng);
    const Matrix w = random_matrix(s, 6, rng);
    const Matrix out = run_consensus(w, v, 10, lossy(v, 0.3), rng);
    EXPECT_LE((out.colwise().mean() - w.colwise().mean()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RunConsensus, OutageDeterminism) {
  Rng data(5);
  const Matrix v = random_mixing(6, data);
  const Matrix w = random_matrix(6, 3, data);
  Rng a(11), b(11);
  EXPECT_EQ(run_consensus(w, v, 8, lossy(v, 0.4), a), run_consensus(w, v, 8, lossy(v, 0.4), b));
}

TEST(EffectiveMatrix, LostWeightReturnsToDiagonal) {
  const Matrix v = path3_v();
  Eigen::MatrixXi lost = Eigen::MatrixXi::Zero(3, 3);
  lost(0, 1) = lost(1, 0) = 1;
  const Matrix e = effective_matrix(v, lost);
  EXPECT_DOUBLE_EQ(e(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(e(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(e(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(e(1, 1), 2.0 / 3.0);
  EXPECT_EQ(e, e.transpose());
  EXPECT_LE((e * Vector::Ones(3) - Vector::Ones(3)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DrawLostLinks, SymmetricAndOnEdgesOnly) {
  Rng rng(6);
  Graph g;
  const Matrix v = random_mixing(7, rng, &g);
  for (int k = 0; k < 20; ++k) {
    const auto lost = draw_lost_links(v, lossy(v, 0.5), rng);
    EXPECT_EQ(lost, lost.transpose());
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j) {
        if (lost(i, j) != 0) EXPECT_EQ(g.adj(i, j), 1);
      }
    }
  }
}

TEST(ConsensusError, DefinitionOracle) {
  Rng rng(7);
  const Matrix wt = random_matrix(4, 3, rng);
  const Matrix w = random_matrix(4, 3, rng);
  const auto err = consensus_error(w, wt);
  Vector mean = Vector::Zero(3);
  for (int i = 0; i < 4; ++i) mean += wt.row(i).transpose() / 4.0;
  double sq = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double n = (w.row(i).transpose() - mean).norm();
    EXPECT_NEAR(err.norms[i], n, 1e-12);
    sq += n * n;
  }
  EXPECT_NEAR(err.rms, std::sqrt(sq / 4.0), 1e-12);
}

TEST(ConsensusError, SingleDeviceIsZero) {
  Rng rng(8);
  const Matrix w = random_matrix(1, 5, rng);
  const auto err = consensus_error(run_consensus(w, Matrix::Identity(1, 1), 3), w);
  EXPECT_EQ(err.max, 0.0);
  EXPECT_EQ(err.rms, 0.0);
}

TEST(ConsensusError, VanishesForManyRounds) {
  Rng rng(9);
  const Matrix w = random_matrix(3, 4, rng);
  const auto err = consensus_error(run_consensus(w, path3_v(), 80), w);
  for (double n : err.norms) EXPECT_LT(n, 1e-8);
}

TEST(DivergenceExact, Examples) {
  EXPECT_EQ(divergence_exact(Matrix::Constant(4, 3, 2.5)), 0.0);
  Matrix two(2, 1);
  two << 0, 3;
  EXPECT_DOUBLE_EQ(divergence_exact(two), 3.0);
}

TEST(DivergenceExact, BruteForce) {
  Rng rng(10);
  const Matrix w = random_matrix(5, 10, rng);
  double best = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) best = std::max(best, (w.row(i) - w.row(j)).norm());
  }
  EXPECT_NEAR(divergence_exact(w), best, 1e-12);
}

TEST(DivergenceEstimate, LowerBoundAndCentralizedExtrema) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    const int s = 1 + trial % 8;
    random_mixing(s, rng, &g);
    const Matrix w = random_matrix(s, 4, rng);
    EXPECT_LE(divergence_estimate(w, g), divergence_exact(w) + 1e-12);
    std::vector<double> norms;
    for (int i = 0; i < s; ++i) norms.push_back(w.row(i).norm());
    const auto ext = flood_extrema(norms, g, g.diameter());
    const double hi = *std::max_element(norms.begin(), norms.end());
    const double lo = *std::min_element(norms.begin(), norms.end());
    for (const auto& [mx, mn] : ext) {
      EXPECT_EQ(mx, hi);
      EXPECT_EQ(mn, lo);
    }
  }
  EXPECT_EQ(divergence_estimate(Matrix::Constant(3, 2, 1.0), make_graph(Eigen::MatrixXi::Ones(3, 3) -
                                                                         Eigen::MatrixXi::Identity(3, 3))),
            0.0);
}

TEST(DivergenceEstimate, DisconnectedThrows) {
  EXPECT_THROW(divergence_estimate(Matrix::Zero(2, 2), make_graph(Eigen::MatrixXi::Zero(2, 2))), InvalidArgument);
}

TEST(ConsensusErrorBound, Examples) {
  EXPECT_DOUBLE_EQ(lemma1_bound(0.3, 0, 4, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(lemma1_bound(0.5, 3, 1, 8.0), 1.0);
}

TEST(ConsensusErrorBound, CertificateAndMonotoneContraction) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int s = 1 + trial % 8;
    const Matrix v = random_mixing(s, rng);
    const double lambda = spectral_radius(v);
    const Matrix w = random_matrix(s, 5, rng);
    const double upsilon = divergence_exact(w);
    double prev = std::numeric_limits<double>::infinity();
    for (int gamma = 0; gamma <= 12; ++gamma) {
      const double err = consensus_error(run_consensus(w, v, gamma), w).max;
      EXPECT_LE(err, lemma1_bound(lambda, gamma, s, upsilon) + 1e-12);
      EXPECT_LE(err, prev + 1e-12);
      prev = err;
    }
  }
}
