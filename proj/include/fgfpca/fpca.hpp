#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "fgfpca/core.hpp"
#include "fgfpca/spline.hpp"

namespace fgfpca {

struct MeanCovariance {
  VectorXd mean;
  MatrixXd cov;
};

// Column means and the (N-1)-denominator sample covariance of the rows of H.
inline MeanCovariance center_and_covariance(const MatrixXd& H) {
  if (H.rows() < 2)
    throw Error(ErrorKind::InsufficientSubjects, "fpca", "covariance needs at least two subjects");
  MeanCovariance out;
  out.mean = H.colwise().mean().transpose();
  const MatrixXd centered = H.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / static_cast<double>(H.rows() - 1);
  return out;
}

struct CovSmoothingOptions {
  Index basis_size = 15;
  // When set, skips the GCV search.
  std::optional<double> penalty;
  double ladder_min = 1e-6;
  double ladder_max = 1e4;
  int ladder_size = 20;
};

struct SmoothedCovariance {
  MatrixXd cov;
  double penalty = 0.0;
  double gcv = 0.0;
  double edf = 0.0;
};

// Bivariate tensor-product P-spline smooth of a raw covariance surface. The
// diagonal is left out of the fit (it carries the measurement-error
// variance) and is filled back in from the fitted surface.
inline SmoothedCovariance smooth_covariance(const MatrixXd& C_raw, const VectorXd& t,
                                            const CovSmoothingOptions& opt = {}) {
  const Index S = C_raw.rows();
  if (C_raw.cols() != S || t.size() != S)
    throw Error(ErrorKind::DimensionMismatch, "fpca", "covariance and grid sizes differ");
  const double scale = std::max(1.0, C_raw.cwiseAbs().maxCoeff());
  if ((C_raw - C_raw.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw Error(ErrorKind::AsymmetricCovariance, "fpca", "raw covariance is not symmetric");

  SmoothedCovariance out;
  const Index c = std::min(opt.basis_size, S);
  if (S < 4 || c < 4) {
    out.cov = 0.5 * (C_raw + C_raw.transpose());
    return out;
  }
  const BSplineBasis basis(c, t[0], t[S - 1]);
  const MatrixXd B = basis.design(t);  // S x c
  const Index p = c * c;

  // Normal equations over the off-diagonal cells, assembled from the full
  // tensor product minus the diagonal rows. Coefficient (a, b) -> a * c + b.
  const MatrixXd G = B.transpose() * B;
  MatrixXd R(S, p);  // rows kron(B_s, B_s)
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < c; ++a)
      for (Index b = 0; b < c; ++b) R(s, a * c + b) = B(s, a) * B(s, b);
  MatrixXd XtX(p, p);
  for (Index a = 0; a < c; ++a)
    for (Index a2 = 0; a2 < c; ++a2)
      XtX.block(a * c, a2 * c, c, c) = G(a, a2) * G;
  XtX.noalias() -= R.transpose() * R;

  const MatrixXd BtCB = B.transpose() * C_raw * B;
  VectorXd Xty(p);
  for (Index a = 0; a < c; ++a)
    for (Index b = 0; b < c; ++b) Xty[a * c + b] = BtCB(a, b);
  Xty.noalias() -= R.transpose() * C_raw.diagonal();
  const double yty = C_raw.squaredNorm() - C_raw.diagonal().squaredNorm();
  const double n_obs = static_cast<double>(S * S - S);

  const MatrixXd P1 = difference_penalty(c, 2);
  const MatrixXd I = MatrixXd::Identity(c, c);
  MatrixXd Pen(p, p);
  for (Index a = 0; a < c; ++a)
    for (Index a2 = 0; a2 < c; ++a2) Pen.block(a * c, a2 * c, c, c) = P1(a, a2) * I + (a == a2 ? P1 : MatrixXd::Zero(c, c));

  auto solve = [&](double lam, VectorXd& theta, double& gcv, double& edf) {
    const Eigen::LDLT<MatrixXd> ldlt(XtX + lam * Pen);
    theta = ldlt.solve(Xty);
    edf = ldlt.solve(XtX).trace();
    const double rss = std::max(0.0, yty - 2.0 * theta.dot(Xty) + theta.dot(XtX * theta));
    const double denom = std::max(n_obs - edf, 1.0);
    gcv = n_obs * rss / (denom * denom);
  };

  VectorXd theta;
  if (opt.penalty) {
    out.penalty = *opt.penalty;
    solve(out.penalty, theta, out.gcv, out.edf);
  } else {
    double best = std::numeric_limits<double>::infinity();
    const double lo = std::log10(opt.ladder_min), hi = std::log10(opt.ladder_max);
    for (int k = 0; k < opt.ladder_size; ++k) {
      const double lam = std::pow(10.0, lo + (hi - lo) * k / std::max(1, opt.ladder_size - 1));
      VectorXd th;
      double gcv = 0, edf = 0;
      solve(lam, th, gcv, edf);
      if (gcv < best) {
        best = gcv;
        theta = th;
        out.penalty = lam;
        out.gcv = gcv;
        out.edf = edf;
      }
    }
  }

  MatrixXd Theta(c, c);
  for (Index a = 0; a < c; ++a)
    for (Index b = 0; b < c; ++b) Theta(a, b) = theta[a * c + b];
  const MatrixXd M = B * Theta * B.transpose();
  out.cov = 0.5 * (M + M.transpose());
  return out;
}

struct EigenResult {
  MatrixXd phi;         // S x K_max, orthonormal under the quadrature weights
  VectorXd eigenvalues;  // K_max, positive, non-increasing
  VectorXd pve;          // cumulative proportion, K_max
  Index K = 0;           // selected number of components
};

// Eigenpairs of the integral operator with kernel C under diagonal quadrature
// weights. Each eigenfunction's largest-magnitude entry is made positive.
inline EigenResult eigendecompose(const MatrixXd& C, const VectorXd& weights, double pve_threshold = 0.95) {
  const Index S = C.rows();
  if (C.cols() != S || weights.size() != S)
    throw Error(ErrorKind::DimensionMismatch, "fpca", "covariance and weight sizes differ");
  if (!(pve_threshold > 0.0 && pve_threshold <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "fpca", "pve threshold must lie in (0, 1]");
  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw Error(ErrorKind::AsymmetricCovariance, "fpca", "covariance is not symmetric");

  const VectorXd sw = weights.array().sqrt();
  const MatrixXd A = sw.asDiagonal() * (0.5 * (C + C.transpose())) * sw.asDiagonal();
  const Eigen::SelfAdjointEigenSolver<MatrixXd> es(A);
  const VectorXd ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  if (!(top > 0.0)) throw Error(ErrorKind::NoVariation, "fpca", "covariance has no positive eigenvalues");

  // Orient each eigenfunction and note where its peak sits for tie-breaking.
  MatrixXd phi = sw.cwiseInverse().asDiagonal() * es.eigenvectors();
  std::vector<Index> peak(S);
  for (Index k = 0; k < S; ++k) {
    Index arg = 0;
    double best = -1.0;
    for (Index s = 0; s < S; ++s)
      if (std::abs(phi(s, k)) > best * (1.0 + 1e-12)) {
        best = std::abs(phi(s, k));
        arg = s;
      }
    if (phi(arg, k) < 0) phi.col(k) *= -1.0;
    peak[k] = arg;
  }

  const double tie = 1e-12 * top;
  std::vector<Index> order;
  for (Index k = 0; k < S; ++k)
    if (ev[k] > tie) order.push_back(k);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (std::abs(ev[a] - ev[b]) > tie) return ev[a] > ev[b];
    return peak[a] < peak[b];
  });

  const Index kmax = static_cast<Index>(order.size());
  EigenResult out;
  out.phi.resize(S, kmax);
  out.eigenvalues.resize(kmax);
  for (Index k = 0; k < kmax; ++k) {
    out.phi.col(k) = phi.col(order[k]);
    out.eigenvalues[k] = ev[order[k]];
  }
  out.pve.resize(kmax);
  std::partial_sum(out.eigenvalues.begin(), out.eigenvalues.end(), out.pve.begin());
  out.pve /= out.eigenvalues.sum();
  out.K = kmax;
  for (Index k = 0; k < kmax; ++k)
    if (out.pve[k] >= pve_threshold - 1e-12) {
      out.K = k + 1;
      break;
    }
  return out;
}

struct FPCAOptions {
  double pve_threshold = 0.95;
  CovSmoothingOptions smoothing;
};

struct FPCAResult {
  VectorXd mean;        // S
  MatrixXd cov_raw;     // S x S
  MatrixXd cov;         // smoothed, S x S
  EigenResult eig;
  double residual_variance = 0.0;
  double penalty = 0.0;
};

// Mean, smoothed covariance, and eigen-decomposition of binned latent values.
inline FPCAResult run_fpca(const MatrixXd& H, const VectorXd& t, const VectorXd& weights,
                           const FPCAOptions& opt = {}) {
  FPCAResult out;
  auto mc = center_and_covariance(H);
  out.mean = std::move(mc.mean);
  out.cov_raw = std::move(mc.cov);
  const auto sm = smooth_covariance(out.cov_raw, t, opt.smoothing);
  out.cov = sm.cov;
  out.penalty = sm.penalty;
  out.residual_variance = (out.cov_raw.diagonal() - out.cov.diagonal()).mean();
  out.eig = eigendecompose(out.cov, weights, opt.pve_threshold);
  return out;
}

}  // namespace fgfpca
