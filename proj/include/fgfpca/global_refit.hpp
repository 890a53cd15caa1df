#pragma once

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fgfpca/core.hpp"
#include "fgfpca/score_posterior.hpp"
#include "fgfpca/spline.hpp"

namespace fgfpca {

// Modified Gram-Schmidt under diagonal quadrature weights; column order and
// direction are preserved.
inline MatrixXd orthonormalize(MatrixXd Q, const VectorXd& weights) {
  for (Index k = 0; k < Q.cols(); ++k) {
    for (Index l = 0; l < k; ++l) {
      const double proj = (Q.col(l).array() * Q.col(k).array() * weights.array()).sum();
      Q.col(k) -= proj * Q.col(l);
    }
    const double nrm = std::sqrt((Q.col(k).array().square() * weights.array()).sum());
    if (!(nrm > 0.0))
      throw Error(ErrorKind::InvalidBasis, "global-refit", "eigenfunctions are linearly dependent");
    Q.col(k) /= nrm;
  }
  return Q;
}

// Least-squares regression of binned eigenfunctions on a cubic B-spline basis,
// evaluated on the fine grid and re-orthonormalized there.
inline MatrixXd project_eigenfunctions(const MatrixXd& phi_binned, const VectorXd& t_binned,
                                       const RegularGrid& fine, Index basis_size) {
  const Index S = phi_binned.rows();
  const Index K = phi_binned.cols();
  if (t_binned.size() != S)
    throw Error(ErrorKind::DimensionMismatch, "global-refit", "binned grid and eigenfunctions differ in length");
  if (basis_size < K + 4 || basis_size > S)
    throw Error(ErrorKind::InvalidBasis, "global-refit",
                "projection basis size " + std::to_string(basis_size) + " outside [K+4, S] = [" +
                    std::to_string(K + 4) + ", " + std::to_string(S) + "]");
  const BSplineBasis basis(basis_size, fine.t_min(), fine.t_max());
  const MatrixXd B = basis.design(t_binned);
  const MatrixXd coef = B.colPivHouseholderQr().solve(phi_binned);
  const MatrixXd on_fine = basis.design(fine.points()) * coef;
  return orthonormalize(on_fine, fine.quadrature_weights());
}

struct RefitControls {
  Index f0_basis = 25;
  int max_outer = 50;
  double tol = 1e-6;
  double lambda_floor = 1e-6;
  // Candidate f0 smoothing parameters searched by approximate REML.
  double rho_min = 1e-4;
  double rho_max = 1e8;
  int rho_ladder = 25;
  ScoreSolverOptions scores;
};

struct RefitResult {
  VectorXd f0;        // J
  VectorXd f0_coef;   // spline coefficients
  double rho = 0.0;
  MatrixXd phi;       // J x K
  VectorXd lambda;    // K
  MatrixXd scores;    // N x K posterior modes
  MatrixXd score_var; // N x K posterior variances (Laplace)
  std::vector<double> objective_trace;
  int outer_iterations = 0;
  bool converged = false;
  double max_decrement = 0.0;  // largest per-subject Newton decrement at exit
  std::vector<std::string> warnings;
};

namespace detail {

// Pooled per-grid-point residuals and weights for the f0 update.
struct PooledMoments {
  VectorXd resid;
  VectorXd weight;
  double loglik = 0.0;
};

inline PooledMoments pooled_moments(const Eigen::MatrixXi& y, const VectorXd& f0, const MatrixXd& offset) {
  const Index N = y.rows(), J = y.cols();
  PooledMoments m;
  m.resid = VectorXd::Zero(J);
  m.weight = VectorXd::Zero(J);
  for (Index j = 0; j < J; ++j) {
    double r = 0.0, w = 0.0, ll = 0.0;
    for (Index i = 0; i < N; ++i) {
      const double eta = f0[j] + offset(i, j);
      const double p = clamped_expit(eta, 30.0);
      r += y(i, j) - p;
      w += p * (1.0 - p);
      ll += y(i, j) * eta - log1pexp_stable(eta);
    }
    m.resid[j] = r;
    m.weight[j] = w;
    m.loglik += ll;
  }
  return m;
}

struct F0Fit {
  VectorXd coef;
  double penalized_loglik = 0.0;
  double reml = 0.0;  // Laplace approximate restricted criterion (to minimize)
};

// Penalized IRLS for the mean spline coefficients with the score part held
// fixed as an offset.
inline F0Fit fit_f0(const Eigen::MatrixXi& y, const MatrixXd& offset, const MatrixXd& Bf, const MatrixXd& P,
                    double rho, VectorXd coef, Index penalty_rank) {
  auto objective = [&](const VectorXd& a, PooledMoments& mom) {
    mom = pooled_moments(y, Bf * a, offset);
    return mom.loglik - 0.5 * rho * a.dot(P * a);
  };
  PooledMoments mom;
  double f = objective(coef, mom);
  for (int it = 0; it < 100; ++it) {
    const VectorXd g = Bf.transpose() * mom.resid - rho * (P * coef);
    const MatrixXd H = Bf.transpose() * mom.weight.asDiagonal() * Bf + rho * P;
    const VectorXd step = H.ldlt().solve(g);
    const double dec2 = g.dot(step);
    if (dec2 <= 1e-16) break;
    if (dec2 < 1e-8) {
      coef += step;
      f = objective(coef, mom);
      continue;
    }
    double t = 1.0;
    bool moved = false;
    for (int h = 0; h < 60; ++h) {
      const VectorXd cand = coef + t * step;
      PooledMoments cm;
      const double fc = objective(cand, cm);
      if (fc >= f) {
        moved = true;
        coef = cand;
        f = fc;
        mom = std::move(cm);
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  F0Fit out;
  out.coef = coef;
  out.penalized_loglik = f;
  const MatrixXd H = Bf.transpose() * mom.weight.asDiagonal() * Bf + rho * P;
  const double logdet = 2.0 * H.llt().matrixLLT().diagonal().array().log().sum();
  out.reml = -f + 0.5 * logdet - 0.5 * static_cast<double>(penalty_rank) * std::log(rho);
  return out;
}

}  // namespace detail

// Global refit of f0 and the score variances on the fine grid with the
// eigenfunctions held fixed. Block coordinate ascent: mean spline by
// penalized IRLS, per-subject scores by Newton, variances by the Laplace
// moment update. `f0_init` and `lambda_init` come from the binned FPCA.
inline RefitResult fit_global_model(const FunctionalDataset& data, const MatrixXd& phi, const Family& family,
                                    const VectorXd& f0_init, const VectorXd& lambda_init,
                                    const RefitControls& ctl = {}) {
  if (!data.fully_observed())
    throw Error(ErrorKind::InvalidDataset, "global-refit", "training data must be fully observed");
  if (family.kind() != FamilyKind::BinomialLogit)
    throw Error(ErrorKind::InvalidArgument, "global-refit", "only binomial-logit is supported");
  const Index N = data.num_subjects(), J = data.num_points(), K = phi.cols();
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "global-refit", "need at least one component");
  if (phi.rows() != J || f0_init.size() != J || lambda_init.size() != K)
    throw Error(ErrorKind::DimensionMismatch, "global-refit", "initial values do not match the grid");

  RefitResult res;
  res.phi = phi;
  res.lambda = lambda_init.cwiseMax(ctl.lambda_floor);
  res.scores = MatrixXd::Zero(N, K);
  res.score_var = MatrixXd::Zero(N, K);

  const Index q = std::min<Index>(ctl.f0_basis, J);
  const BSplineBasis fbasis(q, data.grid.t_min(), data.grid.t_max());
  const MatrixXd Bf = fbasis.design(data.grid.points());
  const MatrixXd P = difference_penalty(q, 2);
  const Index penalty_rank = q - 2;
  VectorXd coef = Bf.colPivHouseholderQr().solve(f0_init);
  VectorXd f0 = Bf * coef;

  std::vector<double> logdet(N, 0.0);
  std::vector<double> logpost(N, 0.0);
  auto update_scores = [&]() {
    double max_dec = 0.0;
    std::vector<double> dec(N, 0.0);
    parallel_for(N, [&](Index i) {
      const auto yi = data.y.row(i).transpose();
      const ScorePosterior sp =
          maximize_score_posterior(yi, f0, phi, res.lambda, VectorXd(res.scores.row(i).transpose()), ctl.scores);
      res.scores.row(i) = sp.xi.transpose();
      const Eigen::LLT<MatrixXd> llt(sp.precision);
      res.score_var.row(i) = llt.solve(MatrixXd::Identity(K, K)).diagonal().transpose();
      logdet[i] = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      logpost[i] = sp.log_posterior;
      dec[i] = sp.decrement;
    });
    for (double d : dec) max_dec = std::max(max_dec, d);
    res.max_decrement = max_dec;
  };
  // Laplace approximation to the penalized marginal log-likelihood.
  auto objective = [&]() {
    double obj = -0.5 * res.rho * coef.dot(P * coef);
    const double sum_log_lambda = res.lambda.array().log().sum();
    for (Index i = 0; i < N; ++i) obj += logpost[i] - 0.5 * sum_log_lambda - 0.5 * logdet[i];
    return obj;
  };

  struct State {
    VectorXd coef, f0, lambda;
    MatrixXd scores, score_var;
    std::vector<double> logdet, logpost;
    double max_decrement;
  };
  auto save = [&]() { return State{coef, f0, res.lambda, res.scores, res.score_var, logdet, logpost, res.max_decrement}; };
  auto restore = [&](const State& st) {
    coef = st.coef;
    f0 = st.f0;
    res.lambda = st.lambda;
    res.scores = st.scores;
    res.score_var = st.score_var;
    logdet = st.logdet;
    logpost = st.logpost;
    res.max_decrement = st.max_decrement;
  };

  update_scores();

  int strikes = 0;
  double prev = -std::numeric_limits<double>::infinity();
  State accepted = save();
  for (int outer = 1; outer <= ctl.max_outer; ++outer) {
    res.outer_iterations = outer;
    const MatrixXd offset = res.scores * phi.transpose();  // N x J

    // (a) mean function; the smoothing parameter is fixed on the first pass.
    if (outer == 1) {
      double best = std::numeric_limits<double>::infinity();
      VectorXd best_coef = coef;
      for (int r = 0; r < ctl.rho_ladder; ++r) {
        const double lo = std::log10(ctl.rho_min), hi = std::log10(ctl.rho_max);
        const double rho = std::pow(10.0, lo + (hi - lo) * r / std::max(1, ctl.rho_ladder - 1));
        const auto fit = detail::fit_f0(data.y, offset, Bf, P, rho, coef, penalty_rank);
        if (fit.reml < best) {
          best = fit.reml;
          best_coef = fit.coef;
          res.rho = rho;
        }
      }
      coef = best_coef;
    } else {
      coef = detail::fit_f0(data.y, offset, Bf, P, res.rho, coef, penalty_rank).coef;
    }
    f0 = Bf * coef;

    // (b) scores
    update_scores();
    const double obj = objective();
    const double change = obj - prev;

    // The mean step ascends the joint rather than the Laplace marginal, so
    // near the optimum the marginal can dip by rounding-sized amounts. Such a
    // step is rejected and the previous state is final.
    if (std::isfinite(prev) && change < 0 && -change <= 10.0 * ctl.tol * std::abs(prev)) {
      restore(accepted);
      res.converged = true;
      break;
    }
    res.objective_trace.push_back(obj);
    accepted = save();

    // (c) variances
    for (Index k = 0; k < K; ++k) {
      const double v = (res.scores.col(k).array().square() + res.score_var.col(k).array()).mean();
      res.lambda[k] = std::max(v, ctl.lambda_floor);
    }

    if (std::isfinite(prev) && std::abs(change) <= ctl.tol * std::abs(obj)) {
      res.converged = true;
      break;
    }
    if (std::isfinite(prev) && change < 0) {
      if (++strikes >= 2) {
        std::ostringstream msg;
        msg << "objective decreased on two consecutive outer iterations; trace:";
        for (double v : res.objective_trace) msg << ' ' << v;
        throw Error(ErrorKind::ConvergenceError, "global-refit", msg.str());
      }
    } else {
      strikes = 0;
    }
    prev = obj;
  }
  // Scores consistent with the final variances.
  update_scores();

  // The variance update approaches a zero boundary only sublinearly; compare
  // against the floor directly for components that have shrunk markedly.
  for (Index k = 0; k < K; ++k) {
    if (res.lambda[k] >= 0.1 * lambda_init[k] || res.lambda[k] <= ctl.lambda_floor) continue;
    const double base = objective();
    const State before = save();
    res.lambda[k] = ctl.lambda_floor;
    res.scores.col(k).setZero();
    update_scores();
    if (objective() < base) restore(before);
  }

  res.f0 = f0;
  res.f0_coef = coef;
  if (!res.converged)
    res.warnings.push_back("global refit stopped after " + std::to_string(res.outer_iterations) +
                           " outer iterations without meeting the tolerance");
  for (Index k = 0; k < K; ++k) {
    if (res.lambda[k] <= ctl.lambda_floor * (1.0 + 1e-12) || res.lambda[k] < 1e-3 * lambda_init[k])
      res.warnings.push_back("degenerate variance for component " + std::to_string(k + 1) +
                             ": lambda collapsed to " + std::to_string(res.lambda[k]));
  }
  return res;
}

}  // namespace fgfpca
