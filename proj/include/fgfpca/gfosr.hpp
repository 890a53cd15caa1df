#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fgfpca/core.hpp"
#include "fgfpca/dynpred.hpp"
#include "fgfpca/metrics.hpp"
#include "fgfpca/stats.hpp"

namespace fgfpca {

// Pointwise logistic regression of each future outcome on the last L observed
// outcomes. `cutoff` is the number of observed points m; lag l is the outcome
// at index m - l, so lag 1 is the most recent.
struct GFOSRModel {
  RegularGrid grid;
  Family family;
  Index cutoff = 0;
  Index lags = 0;
  double ridge = 1e-4;
  double eta_max = 8.0;
  MatrixXd coef;                    // (J - m) x (L + 1): intercept, lag 1..L
  std::vector<MatrixXd> inv_info;   // per future point, (X'WX + ridge I)^{-1}
  std::vector<char> degenerate;     // constant outcome column
  std::vector<int> iterations;

  Index num_future() const { return coef.rows(); }
};

struct GFOSRControls {
  double ridge = 1e-4;
  double eta_max = 8.0;
  double tol = 1e-8;
  int max_iter = 100;
};

namespace detail {

inline Eigen::RowVectorXd gfosr_design_row(const Eigen::VectorXi& y, Index m, Index L) {
  Eigen::RowVectorXd x(L + 1);
  x[0] = 1.0;
  for (Index l = 1; l <= L; ++l) x[l] = static_cast<double>(y[m - l]);
  return x;
}

}  // namespace detail

inline GFOSRModel fit_gfosr(const FunctionalDataset& train, Index cutoff, Index lags, const GFOSRControls& ctl = {}) {
  train.validate();
  if (!train.fully_observed())
    throw Error(ErrorKind::InvalidDataset, "gfosr", "training subjects must be fully observed");
  const Index N = train.num_subjects(), J = train.num_points();
  if (lags < 1 || lags > cutoff)
    throw Error(ErrorKind::InvalidLag, "gfosr",
                "need 1 <= L <= m, got L=" + std::to_string(lags) + ", m=" + std::to_string(cutoff));
  if (cutoff >= J) throw Error(ErrorKind::InvalidArgument, "gfosr", "cutoff leaves no future points");
  if (!(ctl.ridge >= 0.0)) throw Error(ErrorKind::InvalidArgument, "gfosr", "ridge must be non-negative");

  GFOSRModel mod;
  mod.grid = train.grid;
  mod.cutoff = cutoff;
  mod.lags = lags;
  mod.ridge = ctl.ridge;
  mod.eta_max = ctl.eta_max;
  const Index F = J - cutoff, P = lags + 1;
  mod.coef = MatrixXd::Zero(F, P);
  mod.inv_info.assign(static_cast<std::size_t>(F), MatrixXd());
  mod.degenerate.assign(static_cast<std::size_t>(F), 0);
  mod.iterations.assign(static_cast<std::size_t>(F), 0);

  MatrixXd X(N, P);
  for (Index i = 0; i < N; ++i) X.row(i) = detail::gfosr_design_row(train.y.row(i).transpose(), cutoff, lags);
  const MatrixXd R = ctl.ridge * MatrixXd::Identity(P, P);

  parallel_for(F, [&](Index f) {
    const auto s = static_cast<std::size_t>(f);
    const VectorXd y = train.y.col(cutoff + f).cast<double>();
    const double ones = y.sum();
    auto info_at = [&](const VectorXd& b) {
      const VectorXd eta = X * b;
      VectorXd w(N);
      for (Index i = 0; i < N; ++i) {
        const double p = mod.family.inverse_link(eta[i]);
        w[i] = p * (1.0 - p);
      }
      return MatrixXd(X.transpose() * w.asDiagonal() * X + R);
    };
    if (ones == 0.0 || ones == static_cast<double>(N)) {
      VectorXd b = VectorXd::Zero(P);
      b[0] = ones == 0.0 ? -ctl.eta_max : ctl.eta_max;
      mod.coef.row(f) = b.transpose();
      mod.degenerate[s] = 1;
      mod.inv_info[s] = info_at(b).ldlt().solve(MatrixXd::Identity(P, P));
      return;
    }
    auto objective = [&](const VectorXd& b) {
      const VectorXd eta = X * b;
      double v = -0.5 * ctl.ridge * b.squaredNorm();
      for (Index i = 0; i < N; ++i) v += y[i] * eta[i] - detail::log1pexp_stable(eta[i]);
      return v;
    };
    VectorXd b = VectorXd::Zero(P);
    double fb = objective(b);
    int it = 0;
    for (; it < ctl.max_iter; ++it) {
      const VectorXd eta = X * b;
      VectorXd r(N);
      for (Index i = 0; i < N; ++i) r[i] = y[i] - mod.family.inverse_link(eta[i]);
      const VectorXd g = X.transpose() * r - ctl.ridge * b;
      if (g.norm() <= ctl.tol) break;
      const VectorXd step = info_at(b).ldlt().solve(g);
      if (g.dot(step) < 1e-10) {  // quadratic region: the gain is below rounding of the objective
        b += step;
        fb = objective(b);
        continue;
      }
      double t = 1.0;
      bool moved = false;
      for (int h = 0; h < 60 && !moved; ++h, t *= 0.5) {
        const VectorXd cand = b + t * step;
        const double fc = objective(cand);
        if (fc >= fb) {
          b = cand;
          fb = fc;
          moved = true;
        }
      }
      if (!moved) break;
    }
    mod.iterations[s] = it;
    mod.coef.row(f) = b.transpose();
    mod.inv_info[s] = info_at(b).ldlt().solve(MatrixXd::Identity(P, P));
  });
  return mod;
}

inline void check_history(const GFOSRModel& model, const PartialTrack& track) {
  if (track.observed() < model.cutoff)
    throw Error(ErrorKind::InsufficientHistory, "gfosr",
                "track " + track.subject_id + " observes " + std::to_string(track.observed()) +
                    " points; the model needs " + std::to_string(model.cutoff));
}

// Predicted latent values on the full grid; entries before the cutoff are NaN.
inline VectorXd predict_gfosr(const GFOSRModel& model, const PartialTrack& track) {
  check_history(model, track);
  const Index J = model.grid.size();
  VectorXd eta = VectorXd::Constant(J, std::numeric_limits<double>::quiet_NaN());
  const Eigen::RowVectorXd x = detail::gfosr_design_row(track.y, model.cutoff, model.lags);
  eta.tail(model.num_future()) = model.coef * x.transpose();
  return eta;
}

// Wald interval from the inverse penalized information of each pointwise fit.
inline Interval interval_gfosr_wald(const GFOSRModel& model, const PartialTrack& track, double level = 0.95) {
  const double z = normal_critical(level);
  const VectorXd eta = predict_gfosr(model, track);
  const Eigen::RowVectorXd x = detail::gfosr_design_row(track.y, model.cutoff, model.lags);
  const Index J = model.grid.size();
  Interval iv;
  iv.lower = VectorXd::Constant(J, std::numeric_limits<double>::quiet_NaN());
  iv.upper = iv.lower;
  for (Index f = 0; f < model.num_future(); ++f) {
    const Index j = model.cutoff + f;
    const double sd = std::sqrt(std::max(0.0, (x * model.inv_info[static_cast<std::size_t>(f)] * x.transpose()).value()));
    iv.lower[j] = eta[j] - z * sd;
    iv.upper[j] = eta[j] + z * sd;
  }
  return iv;
}

}  // namespace fgfpca
