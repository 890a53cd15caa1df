#include <gtest/gtest.h>

#include <random>

#include "fgfpca/binning.hpp"
#include "fgfpca/fpca.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace fgfpca;

namespace {

struct BinnedSetup {
  RegularGrid grid = make_grid(1000, 0, 1);
  BinningSpec spec = make_bins(grid, 10);
  VectorXd t = binned_grid(spec, grid);
  VectorXd w = bin_weights(spec, grid);
};

MatrixXd exact_latent(Index N, const VectorXd& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const MatrixXd B = true_basis(t);
  MatrixXd H(N, t.size());
  for (Index i = 0; i < N; ++i) {
    Eigen::Vector4d xi;
    for (int k = 0; k < 4; ++k) xi[k] = nd(rng) * std::sqrt(std::pow(0.5, k));
    H.row(i) = (B * xi).transpose();
  }
  return H;
}

}  // namespace

TEST(CenterCovariance, IdenticalRows) {
  MatrixXd H = MatrixXd::Zero(5, 7);
  H.rowwise() += Eigen::RowVectorXd::LinSpaced(7, -1, 2);
  const auto mc = center_and_covariance(H);
  EXPECT_EQ(mc.cov.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR((mc.mean - VectorXd::LinSpaced(7, -1, 2)).norm(), 0.0, 1e-15);
}

TEST(CenterCovariance, RankOne) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.3, 2.0);
  VectorXd xi(50);
  for (auto& v : xi) v = nd(rng);
  const VectorXd phi = VectorXd::LinSpaced(12, -1, 1).array().sin();
  const MatrixXd H = xi * phi.transpose();
  const double var = (xi.array() - xi.mean()).square().sum() / 49.0;
  const auto mc = center_and_covariance(H);
  EXPECT_LE((mc.cov - var * phi * phi.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CenterCovariance, InsufficientSubjects) {
  try {
    center_and_covariance(MatrixXd::Zero(1, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientSubjects);
  }
}

TEST(CenterCovariance, ExactSimulatedLatent) {
  BinnedSetup b;
  const auto mc = center_and_covariance(exact_latent(1000, b.t, 42));
  const MatrixXd truth = true_covariance(b.t);
  EXPECT_LE((mc.cov - truth).norm() / truth.norm(), 0.1);
}

TEST(SmoothCovariance, SmoothInputPreserved) {
  BinnedSetup b;
  const MatrixXd truth = true_covariance(b.t);
  const auto sm = smooth_covariance(truth, b.t);
  EXPECT_LE((sm.cov - truth).norm() / truth.norm(), 0.05);
  EXPECT_LE((sm.cov - sm.cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SmoothCovariance, RemovesOffDiagonalNoise) {
  BinnedSetup b;
  const MatrixXd truth = true_covariance(b.t);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 0.2);
  MatrixXd noisy = truth;
  for (Index s = 0; s < noisy.rows(); ++s)
    for (Index r = s + 1; r < noisy.cols(); ++r) {
      const double e = nd(rng);
      noisy(s, r) += e;
      noisy(r, s) += e;
    }
  const auto sm = smooth_covariance(noisy, b.t);
  EXPECT_LT((sm.cov - truth).norm(), (noisy - truth).norm());
}

TEST(SmoothCovariance, IgnoresDiagonalNoise) {
  BinnedSetup b;
  const MatrixXd truth = true_covariance(b.t);
  MatrixXd inflated = truth;
  inflated.diagonal().array() += 3.0;
  const auto sm = smooth_covariance(inflated, b.t);
  EXPECT_LE((sm.cov - truth).norm() / truth.norm(), 0.05);
  EXPECT_NEAR((inflated.diagonal() - sm.cov.diagonal()).mean(), 3.0, 0.1);
}

TEST(SmoothCovariance, ZeroStaysZero) {
  BinnedSetup b;
  const auto sm = smooth_covariance(MatrixXd::Zero(100, 100), b.t);
  EXPECT_LE(sm.cov.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SmoothCovariance, RejectsAsymmetric) {
  BinnedSetup b;
  MatrixXd C = true_covariance(b.t);
  C(3, 40) += 0.5;
  try {
    smooth_covariance(C, b.t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AsymmetricCovariance);
  }
}

TEST(Eigendecompose, AnalyticFourComponents) {
  BinnedSetup b;
  const MatrixXd C = true_covariance(b.t);
  const auto eig = eigendecompose(C, b.w, 0.95);
  EXPECT_EQ(eig.K, 4);
  const VectorXd ref = oracle::weighted_eigenvalues(C, b.w);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(eig.eigenvalues[k], ref[k], 1e-10);
  const double expected[4] = {1.0 / 1.875, 1.5 / 1.875, 1.75 / 1.875, 1.0};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(eig.pve[k], expected[k], 2e-3);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(eig.eigenvalues[k], std::pow(0.5, k), 5e-3);
}

TEST(Eigendecompose, IsotropicTieRule) {
  const Index S = 40;
  const VectorXd w = VectorXd::Constant(S, 1.0 / S);
  const auto eig = eigendecompose(2.5 * MatrixXd::Identity(S, S), w, 0.9);
  EXPECT_EQ(eig.K, 36);
  for (Index k = 0; k < S; ++k) {
    Index arg;
    eig.phi.col(k).cwiseAbs().maxCoeff(&arg);
    EXPECT_EQ(arg, k);
    EXPECT_GT(eig.phi(arg, k), 0.0);
  }
}

TEST(Eigendecompose, ZeroIsNoVariation) {
  try {
    eigendecompose(MatrixXd::Zero(10, 10), VectorXd::Ones(10), 0.95);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoVariation);
  }
}

TEST(Eigendecompose, ReconstructionOrthonormalityDeterminism) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.5, 2.0);
  for (int rep = 0; rep < 10; ++rep) {
    const Index S = 30 + 5 * rep;
    MatrixXd A(S, S);
    for (auto& v : A.reshaped()) v = nd(rng);
    const MatrixXd C = A * A.transpose() / S + 0.1 * MatrixXd::Identity(S, S);
    VectorXd w(S);
    for (auto& v : w) v = ud(rng) / S;
    const auto eig = eigendecompose(C, w, 1.0);
    ASSERT_EQ(eig.phi.cols(), S);
    const MatrixXd recon = eig.phi * eig.eigenvalues.asDiagonal() * eig.phi.transpose();
    EXPECT_LE((C - recon).norm() / C.norm(), 1e-8);
    EXPECT_LE((weighted_gram(eig.phi, w) - MatrixXd::Identity(S, S)).cwiseAbs().maxCoeff(), 1e-8);
    for (Index k = 1; k < S; ++k) EXPECT_GE(eig.eigenvalues[k - 1], eig.eigenvalues[k]);
    const auto again = eigendecompose(C, w, 1.0);
    EXPECT_EQ((again.phi - eig.phi).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Fpca, ExactLatentRecoversBasis) {
  BinnedSetup b;
  const auto res = run_fpca(exact_latent(1000, b.t, 7), b.t, b.w);
  ASSERT_GE(res.eig.K, 4);
  const MatrixXd truth = true_basis(b.t);
  EXPECT_LE(oracle::subspace_angle_deg(res.eig.phi.leftCols(4), truth, b.w), 5.0);
  for (int k = 0; k < 4; ++k)
    EXPECT_NEAR(res.eig.eigenvalues[k], std::pow(0.5, k), 0.1 * std::pow(0.5, k));
}
