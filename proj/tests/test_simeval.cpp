#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fgfpca/experiment.hpp"
#include "fgfpca/metrics.hpp"
#include "fgfpca/simulate.hpp"
#include "test_support.hpp"

using namespace fgfpca;

namespace {

// Pairwise Mann-Whitney count, O(n^2).
double brute_auc(const VectorXd& s, const Eigen::VectorXi& y) {
  double num = 0.0, pairs = 0.0;
  for (Index a = 0; a < s.size(); ++a)
    for (Index b = 0; b < s.size(); ++b)
      if (y[a] == 1 && y[b] == 0) {
        pairs += 1.0;
        num += s[a] > s[b] ? 1.0 : (s[a] == s[b] ? 0.5 : 0.0);
      }
  return num / pairs;
}

ExperimentOptions small_experiment() {
  ExperimentOptions o;
  o.sim.n_train = 100;
  o.sim.n_test = 40;
  o.sim.J = 250;
  o.replicates = 2;
  o.seed = 11;
  o.mc.n_samples = 1000;
  return o;
}

}  // namespace

TEST(Metrics, IseOfIdenticalInputsIsZero) {
  const VectorXd a = VectorXd::LinSpaced(50, -1.0, 2.0);
  EXPECT_EQ(ise(a, a, {0, 50}), 0.0);
}

TEST(Metrics, IseConstantOffset) {
  const VectorXd a = VectorXd::Zero(300);
  const VectorXd b = VectorXd::Constant(300, 0.5);
  EXPECT_DOUBLE_EQ(ise(a, b, {50, 250}), 50.0);
}

TEST(Metrics, IseRejectsLengthMismatch) {
  try {
    ise(VectorXd::Zero(3), VectorXd::Zero(4), {0, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(Metrics, IseIsAdditiveOverPartitions) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 20; ++rep) {
    VectorXd a(120), b(120);
    for (Index j = 0; j < 120; ++j) {
      a[j] = n(rng);
      b[j] = n(rng);
    }
    std::uniform_int_distribution<Index> cut(11, 109);
    const Index c = cut(rng);
    EXPECT_NEAR(ise(a, b, {10, 110}), ise(a, b, {10, c}) + ise(a, b, {c, 110}), 1e-12);
  }
}

TEST(Metrics, AucSeparatingAndConstantScores) {
  Eigen::VectorXi y(6);
  y << 0, 0, 0, 1, 1, 1;
  VectorXd s(6);
  s << 0.1, 0.2, 0.3, 0.7, 0.8, 0.9;
  EXPECT_DOUBLE_EQ(auc(s, y, {0, 6}), 1.0);
  EXPECT_DOUBLE_EQ(auc(VectorXd::Constant(6, 2.0), y, {0, 6}), 0.5);
}

TEST(Metrics, AucSingleClassIsUndefined) {
  const Eigen::VectorXi y = Eigen::VectorXi::Ones(5);
  EXPECT_FALSE(try_auc(VectorXd::Zero(5), y, {0, 5}).has_value());
  try {
    auc(VectorXd::Zero(5), y, {0, 5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UndefinedAUC);
    EXPECT_TRUE(is_numerical(e.kind()));
  }
}

TEST(Metrics, AucMatchesPairwiseOracleWithTies) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> level(0, 4);
  std::bernoulli_distribution coin(0.4);
  for (int rep = 0; rep < 30; ++rep) {
    VectorXd s(40);
    Eigen::VectorXi y(40);
    for (Index j = 0; j < 40; ++j) {
      s[j] = level(rng);
      y[j] = coin(rng);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(auc(s, y, {0, 40}), brute_auc(s, y), 1e-12);
  }
}

TEST(Metrics, AucInvariantUnderExpit) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 3.0);
  std::bernoulli_distribution coin(0.5);
  VectorXd s(200), p(200);
  Eigen::VectorXi y(200);
  for (Index j = 0; j < 200; ++j) {
    s[j] = n(rng);
    p[j] = 1.0 / (1.0 + std::exp(-s[j]));
    y[j] = coin(rng);
  }
  EXPECT_DOUBLE_EQ(auc(s, y, {20, 180}), auc(p, y, {20, 180}));
}

TEST(Metrics, CoverageDegenerateAndVacuous) {
  const VectorXd truth = VectorXd::LinSpaced(30, -2.0, 2.0);
  Interval point{truth, truth};
  EXPECT_EQ(coverage(point, truth, {0, 30}), 1.0);
  const double inf = std::numeric_limits<double>::infinity();
  Interval all{VectorXd::Constant(30, -inf), VectorXd::Constant(30, inf)};
  EXPECT_EQ(coverage(all, truth, {5, 25}), 1.0);
  Interval half{truth.array() + 1.0, truth.array() + 2.0};
  half.lower.head(15) = truth.head(15);
  EXPECT_DOUBLE_EQ(coverage(half, truth, {0, 30}), 0.5);
  const VectorXd curve = coverage_curve(half, truth, {10, 20});
  EXPECT_EQ(curve.size(), 10);
  EXPECT_EQ(curve.head(5).sum(), 5.0);
  EXPECT_EQ(curve.tail(5).sum(), 0.0);
}

TEST(Metrics, WindowIndicesAreHalfOpenOnTheLeft) {
  const auto g = make_grid(250, 0.0, 1.0);
  const auto w = window_indices(g, 0.2, 0.4);
  for (Index j = w.begin; j < w.end; ++j) {
    EXPECT_GT(g.points()[j], 0.2);
    EXPECT_LE(g.points()[j], 0.4 + 1e-12);
  }
  if (w.begin > 0) EXPECT_LE(g.points()[w.begin - 1], 0.2 + 1e-12);
}

TEST(Simulate, DefaultScoreVariancesHalve) {
  const SimulationConfig cfg;
  ASSERT_EQ(cfg.score_variances.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(cfg.score_variances[k], std::pow(0.5, static_cast<double>(k)));
}

TEST(Simulate, BasisValueAtZero) {
  Eigen::Vector4d xi(0.0, 1.0, 0.0, 1.0);
  double eta0 = 0.0;
  for (int k = 0; k < 4; ++k) eta0 += xi[k] * simulation_basis(k, 0.0);
  EXPECT_NEAR(eta0, 2.0 * std::numbers::sqrt2, 1e-14);
  for (int k = 0; k < 4; ++k)
    for (double t : {0.0, 0.13, 0.5, 0.77})
      EXPECT_NEAR(simulation_basis(k, t), true_phi(k, t), 1e-14);
}

TEST(Simulate, GeneratorMoments) {
  SimulationConfig cfg;
  cfg.n_train = 9000;
  cfg.n_test = 1000;
  cfg.J = 100;
  cfg.seed = 21;
  const auto sim = generate_dataset(cfg);
  const double N = 1e4;
  ASSERT_EQ(sim.eta.rows(), 10000);
  ASSERT_EQ(sim.scores.cols(), 4);
  // Var eta(t) = sum_k lambda_k phi_k(t)^2.
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<Index> col(0, cfg.J - 1);
  for (int r = 0; r < 10; ++r) {
    const Index j = col(rng);
    const double t = sim.data.grid.points()[j];
    double var = 0.0;
    for (int k = 0; k < 4; ++k) var += cfg.score_variances[static_cast<std::size_t>(k)] * std::pow(true_phi(k, t), 2);
    EXPECT_LT(std::abs(sim.eta.col(j).mean()), 3.0 * std::sqrt(var / N)) << "t=" << t;
  }
  for (int k = 0; k < 4; ++k) {
    const double lam = cfg.score_variances[static_cast<std::size_t>(k)];
    const double v = sim.scores.col(k).squaredNorm() / N;
    EXPECT_LT(std::abs(v - lam), 3.0 * lam * std::sqrt(2.0 / N)) << "k=" << k;
  }
  EXPECT_TRUE(sim.eta.allFinite());
  EXPECT_TRUE(((sim.data.y.array() == 0) || (sim.data.y.array() == 1)).all());
  // Bernoulli draws follow expit(eta).
  const double mean_y = sim.data.y.cast<double>().mean();
  const double mean_p = (1.0 / (1.0 + (-sim.eta.array()).exp())).mean();
  EXPECT_NEAR(mean_y, mean_p, 3e-3);
}

TEST(Simulate, SeededDeterminism) {
  SimulationConfig cfg;
  cfg.n_train = 20;
  cfg.n_test = 5;
  cfg.J = 40;
  cfg.seed = 8;
  const auto a = generate_dataset(cfg), b = generate_dataset(cfg);
  EXPECT_EQ(a.data.y, b.data.y);
  EXPECT_EQ(a.eta, b.eta);
  cfg.seed = 9;
  EXPECT_NE(generate_dataset(cfg).data.y, a.data.y);
}

TEST(Simulate, RejectsBadConfigs) {
  SimulationConfig cfg;
  cfg.J = 1;
  EXPECT_THROW(generate_dataset(cfg), Error);
  cfg = {};
  cfg.cutoffs = {0.4, 0.2};
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.windows = {{0.2, 0.5}, {0.4, 0.6}};
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Experiment, TableHasUpperTriangularLayout) {
  auto o = small_experiment();
  o.replicates = 1;
  o.coverage = false;
  const auto res = run_experiment(o);
  ASSERT_EQ(res.completed(), 1);
  EXPECT_EQ(res.table.size(), 30u);
  for (const Method m : o.methods) {
    int cells = 0;
    for (const auto& row : res.table)
      if (row.method == m) {
        ++cells;
        EXPECT_GE(row.window, row.cutoff);
        EXPECT_GT(row.ise_mean, 0.0);
        EXPECT_EQ(row.replicates, 1);
      }
    EXPECT_EQ(cells, 10);
  }
}

TEST(Experiment, MethodFilterRestrictsTable) {
  auto o = small_experiment();
  o.replicates = 1;
  o.coverage = false;
  o.methods = {Method::GFOSR_L1};
  const auto res = run_experiment(o);
  EXPECT_EQ(res.table.size(), 10u);
  for (const auto& row : res.table) EXPECT_EQ(row.method, Method::GFOSR_L1);
}

TEST(Experiment, SameSeedGivesIdenticalTables) {
  const auto o = small_experiment();
  set_max_threads(1);
  const auto a = run_experiment(o);
  set_max_threads(4);
  const auto b = run_experiment(o);
  set_max_threads(0);
  ASSERT_EQ(a.table.size(), b.table.size());
  for (std::size_t r = 0; r < a.table.size(); ++r) {
    EXPECT_EQ(a.table[r].ise_mean, b.table[r].ise_mean);
    EXPECT_TRUE(a.table[r].auc_mean == b.table[r].auc_mean ||
                (std::isnan(a.table[r].auc_mean) && std::isnan(b.table[r].auc_mean)));
  }
  ASSERT_EQ(a.curves.size(), b.curves.size());
  for (std::size_t c = 0; c < a.curves.size(); ++c) {
    const VectorXd& x = a.curves[c].coverage;
    const VectorXd& y = b.curves[c].coverage;
    ASSERT_EQ(x.size(), y.size());
    for (Index j = 0; j < x.size(); ++j) EXPECT_TRUE(x[j] == y[j] || (std::isnan(x[j]) && std::isnan(y[j])));
  }
  EXPECT_EQ(mean_coverage(a, "fgfpca/mc-credible"), mean_coverage(b, "fgfpca/mc-credible"));
  // Replicates draw different data.
  EXPECT_NE(a.replicates[0].seed, a.replicates[1].seed);
}

TEST(Experiment, CoverageSourcesAndCurves) {
  auto o = small_experiment();
  o.replicates = 1;
  const auto res = run_experiment(o);
  for (const char* src : {"fgfpca/mc-credible", "fgfpca/wald-hessian", "fgfpca/plugin-prior", "gfosr-l1/wald", "gfosr-l5/wald"}) {
    const double c = mean_coverage(res, src);
    EXPECT_GE(c, 0.0) << src;
    EXPECT_LE(c, 1.0) << src;
  }
  EXPECT_EQ(res.curves.size(), 5u * 4u);
  for (const auto& cc : res.curves) {
    const Index m = make_grid(250, 0.0, 1.0).count_upto(o.sim.cutoffs[static_cast<std::size_t>(cc.cutoff)]);
    EXPECT_TRUE(std::isnan(cc.coverage[m - 1])) << cc.source;
    EXPECT_FALSE(std::isnan(cc.coverage[m])) << cc.source;
  }
}

TEST(Experiment, RejectsEmptySelections) {
  auto o = small_experiment();
  o.methods.clear();
  EXPECT_THROW(run_experiment(o), Error);
  o = small_experiment();
  o.replicates = 0;
  EXPECT_THROW(run_experiment(o), Error);
  EXPECT_EQ(parse_method("GFOSR-L5"), Method::GFOSR_L5);
  EXPECT_THROW(parse_method("gfosr-l3"), Error);
}
