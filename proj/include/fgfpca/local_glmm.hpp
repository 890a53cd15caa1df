#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "fgfpca/binning.hpp"
#include "fgfpca/core.hpp"

namespace fgfpca {

struct GaussHermiteRule {
  VectorXd nodes;    // roots of the physicists' Hermite polynomial
  VectorXd weights;  // for integrals of the form \int e^{-x^2} f(x) dx
};

// Golub-Welsch: nodes are eigenvalues of the symmetric Jacobi matrix.
inline GaussHermiteRule gauss_hermite(Index n) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "local-glmm", "need at least one node");
  MatrixXd jacobi = MatrixXd::Zero(n, n);
  for (Index k = 1; k < n; ++k) {
    const double b = std::sqrt(static_cast<double>(k) / 2.0);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(jacobi);
  GaussHermiteRule rule;
  rule.nodes = es.eigenvalues();
  rule.weights = std::sqrt(std::numbers::pi) * es.eigenvectors().row(0).transpose().array().square();
  return rule;
}

struct LocalGlmmControls {
  Index quad_points = 10;
  double eta_max = 8.0;
  int max_iter = 200;
  // log(sigma) is kept inside [log_sigma_min, log_sigma_max] during the search.
  double log_sigma_min = std::log(1e-4);
  double log_sigma_max = std::log(50.0);
};

struct LocalBinFit {
  Index bin = 0;
  double beta0 = 0.0;
  double sigma2 = 0.0;
  VectorXd eta_hat;  // beta0 + posterior mode of b_i, clamped
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = true;
  bool degenerate = false;
  std::vector<double> objective_trace;  // accepted iterates only
};

namespace detail {

inline double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Subjects with the same number of successes and trials share the same
// marginal likelihood term and posterior mode.
struct CountGroup {
  int successes = 0;
  int trials = 0;
  int multiplicity = 0;
};

// Marginal likelihood of a random-intercept logistic model for grouped
// binomial counts, integrated by adaptive Gauss-Hermite quadrature.
class RandomInterceptLikelihood {
 public:
  RandomInterceptLikelihood(std::vector<CountGroup> groups, Index quad_points)
      : groups_(std::move(groups)), rule_(gauss_hermite(quad_points)) {}

  // Posterior mode of b for one group; Newton iterated to machine precision so
  // the quadrature value is a smooth function of (beta, sigma).
  static double conditional_mode(const CountGroup& g, double beta, double sigma2) {
    double b = 0.0;
    const double inv_s2 = 1.0 / sigma2;
    for (int it = 0; it < 200; ++it) {
      const double p = expit(beta + b);
      const double grad = g.successes - g.trials * p - b * inv_s2;
      const double hess = -g.trials * p * (1.0 - p) - inv_s2;
      double step = -grad / hess;
      // Concave in b; halve the step only if it overshoots numerically.
      const double f0 = log_kernel(g, beta, b, inv_s2);
      double bn = b + step;
      for (int h = 0; h < 60 && log_kernel(g, beta, bn, inv_s2) < f0 - 1e-14 * (1.0 + std::abs(f0)); ++h) {
        step *= 0.5;
        bn = b + step;
      }
      b = bn;
      if (std::abs(step) <= 1e-14 * (1.0 + std::abs(b))) break;
    }
    return b;
  }

  static double log_kernel(const CountGroup& g, double beta, double b, double inv_s2) {
    const double eta = beta + b;
    return g.successes * eta - g.trials * log1pexp(eta) - 0.5 * b * b * inv_s2;
  }

  double log_marginal_group(const CountGroup& g, double beta, double sigma2) const {
    const double inv_s2 = 1.0 / sigma2;
    const double b_hat = conditional_mode(g, beta, sigma2);
    const double p = expit(beta + b_hat);
    const double curv = g.trials * p * (1.0 - p) + inv_s2;
    const double scale = std::sqrt(2.0 / curv);
    double mx = -std::numeric_limits<double>::infinity();
    VectorXd terms(rule_.nodes.size());
    for (Index q = 0; q < rule_.nodes.size(); ++q) {
      const double x = rule_.nodes[q];
      terms[q] = std::log(rule_.weights[q]) + x * x + log_kernel(g, beta, b_hat + scale * x, inv_s2);
      mx = std::max(mx, terms[q]);
    }
    const double lse = mx + std::log((terms.array() - mx).exp().sum());
    return std::log(scale) - 0.5 * std::log(2.0 * std::numbers::pi * sigma2) + lse;
  }

  double operator()(double beta, double log_sigma) const {
    const double sigma2 = std::exp(2.0 * log_sigma);
    double total = 0.0;
    for (const auto& g : groups_) total += g.multiplicity * log_marginal_group(g, beta, sigma2);
    return total;
  }

  // Log-likelihood of the plain GLM (sigma = 0).
  double boundary(double beta) const {
    double total = 0.0;
    for (const auto& g : groups_)
      total += g.multiplicity * (g.successes * beta - g.trials * log1pexp(beta));
    return total;
  }

  const std::vector<CountGroup>& groups() const { return groups_; }

 private:
  std::vector<CountGroup> groups_;
  GaussHermiteRule rule_;
};

}  // namespace detail

// Intercept-only logistic GLMM for one bin: all N subjects, one random
// intercept each. Outcomes equal to kMissing are skipped.
template <typename Block>
LocalBinFit fit_local_bin(const Eigen::MatrixBase<Block>& y_block, const Family& family,
                          const LocalGlmmControls& ctl = {}) {
  if (y_block.cols() < 1)
    throw Error(ErrorKind::InvalidArgument, "local-glmm", "empty outcome block");
  if (ctl.quad_points < 5)
    throw Error(ErrorKind::InvalidArgument, "local-glmm", "need at least 5 quadrature points");
  if (family.kind() != FamilyKind::BinomialLogit)
    throw Error(ErrorKind::InvalidArgument, "local-glmm", "only binomial-logit is supported");

  const Index N = y_block.rows();
  std::vector<int> succ(N, 0), trials(N, 0);
  long total_succ = 0, total_trials = 0;
  for (Index i = 0; i < N; ++i) {
    for (Index j = 0; j < y_block.cols(); ++j) {
      const int v = y_block(i, j);
      if (v == kMissing) continue;
      if (!family.valid_outcome(v))
        throw Error(ErrorKind::InvalidOutcome, "local-glmm",
                    "non-binary outcome " + std::to_string(v) + " in bin");
      succ[i] += v;
      ++trials[i];
    }
    total_succ += succ[i];
    total_trials += trials[i];
  }

  LocalBinFit fit;
  fit.eta_hat.resize(N);
  const double eta_max = ctl.eta_max;

  if (total_succ == 0 || total_succ == total_trials) {
    fit.beta0 = total_succ == 0 ? -eta_max : eta_max;
    fit.sigma2 = 0.0;
    fit.eta_hat.setConstant(fit.beta0);
    fit.degenerate = true;
    fit.iterations = 0;
    return fit;
  }

  // With at most one outcome per subject the random-intercept variance is not
  // identified; report the GLM intercept and flag the bin.
  if (*std::max_element(trials.begin(), trials.end()) <= 1) {
    const double p = static_cast<double>(total_succ) / static_cast<double>(total_trials);
    fit.beta0 = std::clamp(std::log(p) - std::log1p(-p), -eta_max, eta_max);
    fit.sigma2 = 0.0;
    fit.eta_hat.setConstant(fit.beta0);
    fit.degenerate = true;
    return fit;
  }

  std::map<std::pair<int, int>, int> counts;
  for (Index i = 0; i < N; ++i) ++counts[{succ[i], trials[i]}];
  std::vector<detail::CountGroup> groups;
  for (const auto& [key, m] : counts) groups.push_back({key.first, key.second, m});
  const detail::RandomInterceptLikelihood lik(groups, ctl.quad_points);

  const double pbar = static_cast<double>(total_succ) / static_cast<double>(total_trials);
  const double beta_glm = std::log(pbar) - std::log1p(-pbar);
  const double ll_glm = lik.boundary(beta_glm);

  // BFGS on theta = (beta, log sigma) with central-difference gradients and a
  // monotone backtracking line search.
  auto clamp_theta = [&](Eigen::Vector2d th) {
    th[1] = std::clamp(th[1], ctl.log_sigma_min, ctl.log_sigma_max);
    return th;
  };
  auto objective = [&](const Eigen::Vector2d& th) { return lik(th[0], th[1]); };
  auto gradient = [&](const Eigen::Vector2d& th) {
    Eigen::Vector2d g;
    for (int d = 0; d < 2; ++d) {
      const double h = 1e-5 * (1.0 + std::abs(th[d]));
      Eigen::Vector2d a = th, b = th;
      a[d] += h;
      b[d] -= h;
      g[d] = (objective(a) - objective(b)) / (2.0 * h);
    }
    return g;
  };

  Eigen::Vector2d theta(beta_glm, 0.0);
  double f = objective(theta);
  Eigen::Vector2d g = gradient(theta);
  Eigen::Matrix2d Hinv = Eigen::Matrix2d::Identity() / std::max(1.0, static_cast<double>(N));
  fit.objective_trace.push_back(f);
  bool converged = false;
  int it = 0;
  for (; it < ctl.max_iter; ++it) {
    const double gtol = 1e-7 * (1.0 + std::abs(f));
    Eigen::Vector2d free_g = g;
    // Gradient pushing against an active bound does not count.
    if ((theta[1] <= ctl.log_sigma_min && g[1] < 0) || (theta[1] >= ctl.log_sigma_max && g[1] > 0))
      free_g[1] = 0.0;
    if (free_g.lpNorm<Eigen::Infinity>() <= gtol) {
      converged = true;
      break;
    }
    Eigen::Vector2d dir = Hinv * g;
    if (dir.dot(g) <= 0) {
      Hinv = Eigen::Matrix2d::Identity() / std::max(1.0, static_cast<double>(N));
      dir = Hinv * g;
    }
    double step = 1.0;
    Eigen::Vector2d cand;
    double fc = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      cand = clamp_theta(theta + step * dir);
      fc = objective(cand);
      if (std::isfinite(fc) && fc >= f + 1e-4 * g.dot(cand - theta)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No ascent possible along the quasi-Newton direction: treat a small
      // projected gradient as convergence.
      converged = free_g.lpNorm<Eigen::Infinity>() <= 1e-3 * (1.0 + std::abs(f));
      break;
    }
    const Eigen::Vector2d s = cand - theta;
    const Eigen::Vector2d gn = gradient(cand);
    const Eigen::Vector2d yv = g - gn;  // ascent: curvature pair of -f
    const double sy = s.dot(yv);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
      Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) +
             rho * s * s.transpose();
    }
    const double df = fc - f;
    theta = cand;
    f = fc;
    g = gn;
    fit.objective_trace.push_back(f);
    if (df <= 1e-13 * (1.0 + std::abs(f)) && s.lpNorm<Eigen::Infinity>() <= 1e-10) {
      converged = true;
      break;
    }
  }
  fit.iterations = it;

  double sigma2 = std::exp(2.0 * theta[1]);
  double beta = theta[0];
  double ll = f;
  if (!converged) {
    // Fallback: plain GLM intercept.
    beta = beta_glm;
    sigma2 = 0.0;
    ll = ll_glm;
  } else if (ll_glm >= f) {
    // Boundary solution.
    beta = beta_glm;
    sigma2 = 0.0;
    ll = ll_glm;
  }
  fit.converged = converged;
  fit.beta0 = beta;
  fit.sigma2 = sigma2;
  fit.log_likelihood = ll;

  std::map<std::pair<int, int>, double> mode;
  for (const auto& grp : groups)
    mode[{grp.successes, grp.trials}] =
        sigma2 > 0 ? detail::RandomInterceptLikelihood::conditional_mode(grp, beta, sigma2) : 0.0;
  for (Index i = 0; i < N; ++i) {
    double eta = beta + mode[{succ[i], trials[i]}];
    if (std::abs(eta) > eta_max) {
      eta = std::copysign(eta_max, eta);
      fit.degenerate = true;
    }
    fit.eta_hat[i] = eta;
  }
  if (std::abs(fit.beta0) > eta_max) {
    fit.beta0 = std::copysign(eta_max, fit.beta0);
    fit.degenerate = true;
  }
  return fit;
}

// Latent values on the binned grid: one local GLMM per bin.
struct LatentMatrix {
  MatrixXd eta;  // N x S
  VectorXd t;    // binned grid
  std::vector<char> degenerate;
  std::vector<char> converged;
  VectorXd beta0;
  VectorXd sigma2;
};

inline LatentMatrix estimate_latent_matrix(const FunctionalDataset& data, const BinningSpec& spec,
                                           const Family& family, const LocalGlmmControls& ctl = {}) {
  if (!data.fully_observed())
    throw Error(ErrorKind::InvalidDataset, "local-glmm", "training data must be fully observed");
  if (spec.num_points != data.num_points())
    throw Error(ErrorKind::GridMismatch, "local-glmm", "binning does not match the data grid");
  const Index N = data.num_subjects();
  const Index S = spec.num_bins();
  LatentMatrix out;
  out.eta.resize(N, S);
  out.t = binned_grid(spec, data.grid);
  out.degenerate.assign(S, 0);
  out.converged.assign(S, 1);
  out.beta0.resize(S);
  out.sigma2.resize(S);
  parallel_for(S, [&](Index s) {
    const auto block = data.y.middleCols(spec.begin[s], spec.bin_size(s));
    LocalBinFit fit = fit_local_bin(block, family, ctl);
    out.eta.col(s) = fit.eta_hat;
    out.degenerate[s] = fit.degenerate;
    out.converged[s] = fit.converged;
    out.beta0[s] = fit.beta0;
    out.sigma2[s] = fit.sigma2;
  });
  return out;
}

}  // namespace fgfpca
