#pragma once

#include <algorithm>
#include <cmath>

#include "fgfpca/core.hpp"

namespace fgfpca {

// Posterior of one subject's scores given fixed population parameters:
//   l(xi) = sum_j [y_j eta_j - log(1 + exp(eta_j))] - 1/2 sum_k xi_k^2 / lambda_k,
//   eta_j = f0_j + phi_j^T xi,
// summed over the subject's observed points.
struct ScorePosterior {
  VectorXd xi;
  MatrixXd precision;  // negative Hessian at xi
  double log_posterior = 0.0;
  double gradient_norm = 0.0;
  double decrement = 0.0;  // Newton decrement sqrt(g^T H^-1 g)
  int iterations = 0;
};

struct ScoreSolverOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double eta_clamp = 30.0;
};

namespace detail {

inline double clamped_expit(double eta, double clamp) {
  eta = std::clamp(eta, -clamp, clamp);
  return 1.0 / (1.0 + std::exp(-eta));
}

inline double log1pexp_stable(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

// Log posterior (up to a constant) at xi.
template <typename YVec, typename FVec, typename PMat>
double score_log_posterior(const YVec& y, const FVec& f0, const PMat& phi, const VectorXd& lambda,
                           const VectorXd& xi) {
  double ll = -0.5 * (xi.array().square() / lambda.array()).sum();
  if (y.size() == 0) return ll;
  const VectorXd eta = f0 + phi * xi;
  for (Index j = 0; j < eta.size(); ++j) ll += y[j] * eta[j] - detail::log1pexp_stable(eta[j]);
  return ll;
}

// Gradient of the log posterior at xi.
template <typename YVec, typename FVec, typename PMat>
VectorXd score_gradient(const YVec& y, const FVec& f0, const PMat& phi, const VectorXd& lambda,
                        const VectorXd& xi, double eta_clamp = 30.0) {
  VectorXd g = -(xi.array() / lambda.array()).matrix();
  if (y.size() == 0) return g;
  const VectorXd eta = f0 + phi * xi;
  VectorXd r(eta.size());
  for (Index j = 0; j < eta.size(); ++j) r[j] = y[j] - detail::clamped_expit(eta[j], eta_clamp);
  g.noalias() += phi.transpose() * r;
  return g;
}

// Negative Hessian phi^T W phi + diag(1 / lambda).
template <typename FVec, typename PMat>
MatrixXd score_precision(const FVec& f0, const PMat& phi, const VectorXd& lambda, const VectorXd& xi,
                         double eta_clamp = 30.0) {
  MatrixXd H = lambda.cwiseInverse().asDiagonal();
  if (f0.size() == 0) return H;
  const VectorXd eta = f0 + phi * xi;
  VectorXd w(eta.size());
  for (Index j = 0; j < eta.size(); ++j) {
    const double p = detail::clamped_expit(eta[j], eta_clamp);
    w[j] = p * (1.0 - p);
  }
  H.noalias() += phi.transpose() * w.asDiagonal() * phi;
  return H;
}

// Newton ascent with step halving. The objective is strictly concave, so the
// mode is unique and reached from any start.
template <typename YVec, typename FVec, typename PMat>
ScorePosterior maximize_score_posterior(const YVec& y, const FVec& f0, const PMat& phi, const VectorXd& lambda,
                                        VectorXd start, const ScoreSolverOptions& opt = {}) {
  ScorePosterior out;
  out.xi = std::move(start);
  double f = score_log_posterior(y, f0, phi, lambda, out.xi);
  for (int it = 0; it < opt.max_iter; ++it) {
    const VectorXd g = score_gradient(y, f0, phi, lambda, out.xi, opt.eta_clamp);
    const MatrixXd H = score_precision(f0, phi, lambda, out.xi, opt.eta_clamp);
    const Eigen::LLT<MatrixXd> llt(H);
    const VectorXd step = llt.solve(g);
    out.gradient_norm = g.norm();
    out.decrement = std::sqrt(std::max(0.0, g.dot(step)));
    out.iterations = it;
    if (out.gradient_norm <= opt.tol && out.decrement <= opt.tol) break;
    // Near the mode the gain of a full step is below the rounding of f, so the
    // monotone check is only applied farther out.
    if (out.decrement < 1e-4) {
      out.xi += step;
      f = score_log_posterior(y, f0, phi, lambda, out.xi);
      continue;
    }
    double t = 1.0;
    bool moved = false;
    for (int h = 0; h < 60; ++h) {
      const VectorXd cand = out.xi + t * step;
      const double fc = score_log_posterior(y, f0, phi, lambda, cand);
      if (fc >= f) {
        moved = (cand - out.xi).norm() > 0.0;
        out.xi = cand;
        f = fc;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;  // at the floating-point resolution of the objective
  }
  out.log_posterior = f;
  out.precision = score_precision(f0, phi, lambda, out.xi, opt.eta_clamp);
  const VectorXd g = score_gradient(y, f0, phi, lambda, out.xi, opt.eta_clamp);
  out.gradient_norm = g.norm();
  out.decrement = std::sqrt(std::max(0.0, g.dot(out.precision.llt().solve(g))));
  return out;
}

}  // namespace fgfpca
