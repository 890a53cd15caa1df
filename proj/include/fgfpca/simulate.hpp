#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fgfpca/core.hpp"

namespace fgfpca {

struct SimulationConfig {
  Index n_train = 100;
  Index n_test = 100;
  Index J = 250;
  std::uint64_t seed = 1;
  std::vector<double> score_variances = {1.0, 0.5, 0.25, 0.125};
  std::vector<double> cutoffs = {0.2, 0.4, 0.6, 0.8};
  // Half-open (lo, hi] prediction windows in domain units.
  std::vector<std::pair<double, double>> windows = {{0.2, 0.4}, {0.4, 0.6}, {0.6, 0.8}, {0.8, 1.0}};

  void validate() const {
    if (J < 2) throw Error(ErrorKind::InvalidGrid, "simeval", "J must be at least 2");
    if (n_train < 2 || n_test < 1)
      throw Error(ErrorKind::InvalidArgument, "simeval", "need n_train >= 2 and n_test >= 1");
    if (score_variances.empty() || score_variances.size() > 4)
      throw Error(ErrorKind::InvalidArgument, "simeval", "between 1 and 4 score variances are supported");
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      if (!(cutoffs[c] > 0.0 && cutoffs[c] < 1.0) || (c > 0 && !(cutoffs[c] > cutoffs[c - 1])))
        throw Error(ErrorKind::InvalidArgument, "simeval", "cutoffs must increase strictly inside (0, 1)");
    }
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (!(windows[w].first < windows[w].second) || (w > 0 && windows[w].first < windows[w - 1].second))
        throw Error(ErrorKind::InvalidArgument, "simeval", "windows must be ordered and disjoint");
    }
  }
};

// k-th simulation eigenfunction (k = 0..3) on [0, 1].
inline double simulation_basis(int k, double t) {
  const double r2 = std::numbers::sqrt2, pi = std::numbers::pi;
  switch (k) {
    case 0: return r2 * std::sin(2 * pi * t);
    case 1: return r2 * std::cos(2 * pi * t);
    case 2: return r2 * std::sin(4 * pi * t);
    case 3: return r2 * std::cos(4 * pi * t);
    default: throw Error(ErrorKind::InvalidArgument, "simeval", "basis index out of range");
  }
}

inline MatrixXd simulation_basis_matrix(const VectorXd& t, Index K = 4) {
  MatrixXd B(t.size(), K);
  for (Index j = 0; j < t.size(); ++j)
    for (Index k = 0; k < K; ++k) B(j, k) = simulation_basis(static_cast<int>(k), t[j]);
  return B;
}

struct SimulatedDataset {
  FunctionalDataset data;
  MatrixXd eta;     // N x J true latent values
  MatrixXd scores;  // N x K true scores
};

// f0 = 0, eta_i(t) = sum_k xi_ik phi_k(t), xi_ik ~ N(0, lambda_k),
// Y_ij ~ Bernoulli(expit(eta_ij)). Subjects 0..n_train-1 are the training set.
inline SimulatedDataset generate_dataset(const SimulationConfig& cfg) {
  cfg.validate();
  const Index N = cfg.n_train + cfg.n_test;
  const Index K = static_cast<Index>(cfg.score_variances.size());
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SimulatedDataset sim;
  auto& d = sim.data;
  d.grid = make_grid(cfg.J, 0.0, 1.0);
  const MatrixXd B = simulation_basis_matrix(d.grid.points(), K);
  sim.scores.resize(N, K);
  for (Index i = 0; i < N; ++i)
    for (Index k = 0; k < K; ++k) sim.scores(i, k) = normal(rng) * std::sqrt(cfg.score_variances[k]);
  sim.eta = sim.scores * B.transpose();
  d.y.resize(N, cfg.J);
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < cfg.J; ++j) d.y(i, j) = unif(rng) < 1.0 / (1.0 + std::exp(-sim.eta(i, j))) ? 1 : 0;
  char buf[32];
  for (Index i = 0; i < N; ++i) {
    std::snprintf(buf, sizeof buf, "%s%05ld", i < cfg.n_train ? "train" : "test", static_cast<long>(i));
    d.subject_ids.emplace_back(buf);
    d.observed_upto.push_back(cfg.J);
  }
  return sim;
}

struct TrainTestSplit {
  FunctionalDataset train;
  FunctionalDataset test;
  MatrixXd test_eta;
};

inline TrainTestSplit split_train_test(const SimulatedDataset& sim, Index n_train) {
  std::vector<Index> tr, te;
  for (Index i = 0; i < sim.data.num_subjects(); ++i) (i < n_train ? tr : te).push_back(i);
  TrainTestSplit s;
  s.train = sim.data.subset(tr);
  s.test = sim.data.subset(te);
  s.test_eta = sim.eta.bottomRows(static_cast<Index>(te.size()));
  return s;
}

}  // namespace fgfpca
