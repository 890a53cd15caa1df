#include <gtest/gtest.h>

#include <random>

#include "fgfpca/local_glmm.hpp"
#include "oracles.hpp"

using namespace fgfpca;

namespace {

Eigen::MatrixXi simulate_block(Index N, Index w, double beta0, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXi y(N, w);
  for (Index i = 0; i < N; ++i) {
    const double eta = beta0 + sigma * nd(rng);
    const double p = 1.0 / (1.0 + std::exp(-eta));
    for (Index j = 0; j < w; ++j) y(i, j) = u(rng) < p ? 1 : 0;
  }
  return y;
}

void counts(const Eigen::MatrixXi& y, std::vector<int>& succ, std::vector<int>& trials) {
  succ.assign(y.rows(), 0);
  trials.assign(y.rows(), static_cast<int>(y.cols()));
  for (Index i = 0; i < y.rows(); ++i) succ[i] = y.row(i).sum();
}

}  // namespace

TEST(GaussHermite, IntegratesPolynomialsExactly) {
  const auto rule = gauss_hermite(10);
  // \int x^{2k} e^{-x^2} = Gamma(k + 1/2)
  for (int k = 0; k < 10; ++k) {
    double s = 0.0;
    for (Index q = 0; q < 10; ++q) s += rule.weights[q] * std::pow(rule.nodes[q], 2 * k);
    EXPECT_NEAR(s, std::tgamma(k + 0.5), 1e-9 * std::tgamma(k + 0.5)) << k;
  }
}

TEST(LocalGlmm, AllZeroBinIsDegenerate) {
  const Eigen::MatrixXi y = Eigen::MatrixXi::Zero(50, 10);
  const auto fit = fit_local_bin(y, Family{});
  EXPECT_TRUE(fit.degenerate);
  EXPECT_DOUBLE_EQ(fit.beta0, -8.0);
  EXPECT_DOUBLE_EQ(fit.sigma2, 0.0);
  EXPECT_TRUE((fit.eta_hat.array() == -8.0).all());
}

TEST(LocalGlmm, AllOnesBinIsDegenerate) {
  const Eigen::MatrixXi y = Eigen::MatrixXi::Ones(20, 4);
  LocalGlmmControls ctl;
  ctl.eta_max = 5.0;
  const auto fit = fit_local_bin(y, Family{}, ctl);
  EXPECT_TRUE(fit.degenerate);
  EXPECT_DOUBLE_EQ(fit.beta0, 5.0);
}

TEST(LocalGlmm, HalfOnesNoVariation) {
  Eigen::MatrixXi y(400, 10);
  for (Index i = 0; i < 400; ++i)
    for (Index j = 0; j < 10; ++j) y(i, j) = (i + j) % 2;
  const auto fit = fit_local_bin(y, Family{});
  EXPECT_NEAR(fit.beta0, 0.0, 1e-6);
  EXPECT_NEAR(fit.sigma2, 0.0, 1e-6);
  EXPECT_LT(fit.eta_hat.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_FALSE(fit.degenerate);
}

TEST(LocalGlmm, RejectsNonBinary) {
  Eigen::MatrixXi y = Eigen::MatrixXi::Zero(5, 3);
  y(2, 1) = 2;
  try {
    fit_local_bin(y, Family{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidOutcome);
  }
}

TEST(LocalGlmm, MatchesBruteForceOracle) {
  const auto y = simulate_block(200, 10, 0.5, 1.0, 20240601);
  std::vector<int> succ, trials;
  counts(y, succ, trials);
  const auto ref = oracle::glmm_grid_search(succ, trials);
  const auto fit = fit_local_bin(y, Family{});
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.beta0, ref.beta, 0.05);
  EXPECT_NEAR(std::sqrt(fit.sigma2), ref.sigma, 0.05);
  EXPECT_NEAR(fit.sigma2, ref.sigma * ref.sigma, 0.05);
}

TEST(LocalGlmm, ObjectiveMonotoneAndClamped) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> bd(-3, 3), sd(0.1, 3);
  for (int rep = 0; rep < 25; ++rep) {
    const auto y = simulate_block(150, 8, bd(rng), sd(rng), 100 + rep);
    LocalGlmmControls ctl;
    ctl.eta_max = 2.5;
    const auto fit = fit_local_bin(y, Family{}, ctl);
    for (std::size_t k = 1; k < fit.objective_trace.size(); ++k)
      ASSERT_GE(fit.objective_trace[k], fit.objective_trace[k - 1]);
    ASSERT_LE(fit.eta_hat.cwiseAbs().maxCoeff(), ctl.eta_max);
    ASSERT_GE(fit.sigma2, 0.0);
    ASSERT_TRUE(fit.eta_hat.allFinite());
  }
}

TEST(LocalGlmm, QuadratureConverged) {
  for (int rep = 0; rep < 5; ++rep) {
    const auto y = simulate_block(200, 10, -0.5 + 0.3 * rep, 0.6 + 0.2 * rep, 900 + rep);
    LocalGlmmControls c10, c20;
    c10.quad_points = 10;
    c20.quad_points = 20;
    const auto a = fit_local_bin(y, Family{}, c10);
    const auto b = fit_local_bin(y, Family{}, c20);
    ASSERT_FALSE(a.degenerate);
    EXPECT_NEAR(a.beta0, b.beta0, 1e-3);
    EXPECT_NEAR(a.sigma2, b.sigma2, 1e-3);
  }
}

TEST(LocalGlmm, BinIndependenceUnderPermutation) {
  FunctionalDataset d;
  d.grid = make_grid(40, 0, 1);
  d.y.resize(60, 40);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> nd;
  for (Index i = 0; i < 60; ++i) {
    const double b = nd(rng);
    for (Index j = 0; j < 40; ++j) d.y(i, j) = u(rng) < 1 / (1 + std::exp(-(b + std::sin(6.0 * j / 40)))) ? 1 : 0;
    d.subject_ids.push_back("s" + std::to_string(i));
    d.observed_upto.push_back(40);
  }
  const auto spec = make_bins(d.grid, 8);
  const auto H = estimate_latent_matrix(d, spec, Family{});

  // Reverse bin order in the data and refit.
  FunctionalDataset r = d;
  for (Index s = 0; s < 5; ++s) r.y.middleCols(8 * s, 8) = d.y.middleCols(8 * (4 - s), 8);
  const auto Hr = estimate_latent_matrix(r, spec, Family{});
  for (Index s = 0; s < 5; ++s) EXPECT_EQ((H.eta.col(s) - Hr.eta.col(4 - s)).cwiseAbs().maxCoeff(), 0.0);

  // Thread count does not change the result.
  set_max_threads(1);
  const auto H1 = estimate_latent_matrix(d, spec, Family{});
  set_max_threads(4);
  const auto H4 = estimate_latent_matrix(d, spec, Family{});
  set_max_threads(0);
  EXPECT_EQ((H1.eta - H4.eta).cwiseAbs().maxCoeff(), 0.0);
}

TEST(LocalGlmm, ZeroLatentFunction) {
  FunctionalDataset d;
  d.grid = make_grid(200, 0, 1);
  d.y.resize(300, 200);
  std::mt19937_64 rng(23);
  std::bernoulli_distribution coin(0.5);
  for (Index i = 0; i < 300; ++i) {
    for (Index j = 0; j < 200; ++j) d.y(i, j) = coin(rng);
    d.subject_ids.push_back(std::to_string(i));
    d.observed_upto.push_back(200);
  }
  const auto H = estimate_latent_matrix(d, make_bins(d.grid, 10), Family{});
  const VectorXd col_means = H.eta.colwise().mean();
  const double m = col_means.mean();
  const double se = std::sqrt((col_means.array() - m).square().sum() / (col_means.size() - 1) / col_means.size());
  EXPECT_LE(std::abs(m), 3 * se + 1e-12);
}

TEST(LocalGlmm, IdentityBinningIsDegenerate) {
  FunctionalDataset d;
  d.grid = make_grid(30, 0, 1);
  d.y.resize(40, 30);
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.4);
  for (Index i = 0; i < 40; ++i) {
    for (Index j = 0; j < 30; ++j) d.y(i, j) = coin(rng);
    d.subject_ids.push_back(std::to_string(i));
    d.observed_upto.push_back(30);
  }
  const auto H = estimate_latent_matrix(d, make_bins(d.grid, 1), Family{});
  // One binary value per subject cannot separate beta0 from sigma^2: the fit
  // collapses to the GLM boundary (sigma^2 = 0) or is flagged degenerate.
  for (Index s = 0; s < 30; ++s)
    EXPECT_TRUE(H.degenerate[s] || H.sigma2[s] < 1e-6 || H.eta.col(s).cwiseAbs().maxCoeff() == 8.0) << s;
}
