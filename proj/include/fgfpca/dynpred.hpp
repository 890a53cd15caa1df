#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "fgfpca/core.hpp"
#include "fgfpca/metrics.hpp"
#include "fgfpca/score_posterior.hpp"
#include "fgfpca/stats.hpp"

namespace fgfpca {

// A subject observed on the first J_u grid points only.
struct PartialTrack {
  std::string subject_id;
  Eigen::VectorXi y;  // length J_u

  Index observed() const { return y.size(); }
};

inline PartialTrack track_from_dataset(const FunctionalDataset& data, Index row) {
  PartialTrack tr;
  tr.subject_id = data.subject_ids[row];
  tr.y = data.y.row(row).head(data.observed_upto[row]).transpose();
  return tr;
}

enum class IntervalMethod { WaldHessian, PluginPrior, McCredible };

inline std::string to_string(IntervalMethod m) {
  switch (m) {
    case IntervalMethod::WaldHessian: return "wald-hessian";
    case IntervalMethod::PluginPrior: return "plugin-prior";
    case IntervalMethod::McCredible: return "mc-credible";
  }
  return "unknown";
}

// Accepts the short CLI names as well as the method tags.
inline IntervalMethod parse_interval_method(const std::string& s) {
  if (s == "wald" || s == "wald-hessian") return IntervalMethod::WaldHessian;
  if (s == "plugin" || s == "plugin-prior") return IntervalMethod::PluginPrior;
  if (s == "mc" || s == "mc-credible") return IntervalMethod::McCredible;
  throw Error(ErrorKind::InvalidArgument, "dynpred", "unknown interval method '" + s + "'");
}

// Pointwise interval on the fine grid; entries outside `window` are NaN.
struct PredictionInterval : Interval {
  IndexRange window;
  double level = 0.95;
  IntervalMethod method = IntervalMethod::WaldHessian;
  double acceptance_rate = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
};

struct PredictionResult {
  std::string subject_id;
  Index observed = 0;
  VectorXd xi;
  MatrixXd precision;  // negative Hessian of the log posterior at xi
  VectorXd eta_hat;    // J
  VectorXd p_hat;      // J
  PredictionInterval interval;
  int iterations = 0;
  double gradient_norm = 0.0;
};

struct McOptions {
  Index n_samples = 5000;  // total chain length, burn-in included
  double burn_in = 0.2;
  std::uint64_t seed = 1;
};

namespace detail {

inline void check_track(const PartialTrack& track, const FGFPCAModel& model) {
  const Index Ju = track.observed();
  if (Ju >= model.grid.size())
    throw Error(ErrorKind::InvalidDataset, "dynpred",
                "track " + track.subject_id + " observes " + std::to_string(Ju) + " of " +
                    std::to_string(model.grid.size()) + " points; nothing left to predict");
  for (Index j = 0; j < Ju; ++j)
    if (!model.family.valid_outcome(track.y[j]))
      throw Error(ErrorKind::InvalidOutcome, "dynpred", "invalid outcome in track " + track.subject_id);
}

inline void check_window(const FGFPCAModel& model, IndexRange window) {
  if (window.begin < 0 || window.end > model.grid.size() || window.begin > window.end)
    throw Error(ErrorKind::InvalidArgument, "dynpred", "window outside the model grid");
}

inline PredictionInterval blank_interval(Index J, IndexRange window, double level, IntervalMethod m) {
  PredictionInterval iv;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  iv.lower = VectorXd::Constant(J, nan);
  iv.upper = VectorXd::Constant(J, nan);
  iv.window = window;
  iv.level = level;
  iv.method = m;
  return iv;
}

}  // namespace detail

// Posterior mode of the scores given the observed part of the track. With no
// observations this is the prior mode 0 with precision diag(1 / lambda).
inline ScorePosterior posterior_mode_scores(const PartialTrack& track, const FGFPCAModel& model,
                                            const VectorXd& start = {}, const ScoreSolverOptions& opt = {}) {
  detail::check_track(track, model);
  const Index Ju = track.observed(), K = model.K;
  VectorXd xi0 = start.size() == K ? start : VectorXd::Zero(K);
  if (start.size() != 0 && start.size() != K)
    throw Error(ErrorKind::DimensionMismatch, "dynpred", "starting scores have the wrong length");
  return maximize_score_posterior(track.y.cast<double>(), model.f0.head(Ju), model.phi.topRows(Ju), model.lambda,
                                  std::move(xi0), opt);
}

// f0 + phi * xi on the window.
inline VectorXd predict_latent(const FGFPCAModel& model, const VectorXd& xi, IndexRange window) {
  if (xi.size() != model.K)
    throw Error(ErrorKind::DimensionMismatch, "dynpred",
                "expected " + std::to_string(model.K) + " scores, got " + std::to_string(xi.size()));
  detail::check_window(model, window);
  return model.f0.segment(window.begin, window.size()) + model.phi.middleRows(window.begin, window.size()) * xi;
}

inline VectorXd predict_latent(const FGFPCAModel& model, const VectorXd& xi) {
  return predict_latent(model, xi, {0, model.grid.size()});
}

inline VectorXd predict_probability(const FGFPCAModel& model, const VectorXd& xi, IndexRange window) {
  VectorXd p = predict_latent(model, xi, window);
  for (Index j = 0; j < p.size(); ++j) p[j] = model.family.inverse_link(p[j]);
  return p;
}

// eta_hat +- z sd with var = phi_j' precision^{-1} phi_j.
inline PredictionInterval interval_wald(const FGFPCAModel& model, const VectorXd& xi, const MatrixXd& precision,
                                        IndexRange window, double level = 0.95) {
  const Index K = model.K;
  if (precision.rows() != K || precision.cols() != K)
    throw Error(ErrorKind::DimensionMismatch, "dynpred", "precision matrix does not match K");
  const double z = normal_critical(level);
  const Eigen::LLT<MatrixXd> llt(precision);
  const Eigen::SelfAdjointEigenSolver<MatrixXd> es(precision, Eigen::EigenvaluesOnly);
  const double emax = es.eigenvalues().maxCoeff(), emin = es.eigenvalues().minCoeff();
  if (llt.info() != Eigen::Success || !(emin > 0.0) || emin < 1e-14 * emax)
    throw Error(ErrorKind::SingularPrecision, "dynpred", "posterior precision is not positive definite");
  const MatrixXd cov = llt.solve(MatrixXd::Identity(K, K));
  const VectorXd eta = predict_latent(model, xi, window);
  auto iv = detail::blank_interval(model.grid.size(), window, level, IntervalMethod::WaldHessian);
  for (Index j = 0; j < window.size(); ++j) {
    const auto row = model.phi.row(window.begin + j);
    const double sd = std::sqrt(std::max(0.0, (row * cov * row.transpose()).value()));
    iv.lower[window.begin + j] = eta[j] - z * sd;
    iv.upper[window.begin + j] = eta[j] + z * sd;
  }
  return iv;
}

// eta_hat +- z sd with the data-free variance sum_k phi_k^2 lambda_k.
inline PredictionInterval interval_plugin_prior(const FGFPCAModel& model, const VectorXd& xi, IndexRange window,
                                                double level = 0.95) {
  const double z = normal_critical(level);
  const VectorXd eta = predict_latent(model, xi, window);
  auto iv = detail::blank_interval(model.grid.size(), window, level, IntervalMethod::PluginPrior);
  for (Index j = 0; j < window.size(); ++j) {
    const double var = (model.phi.row(window.begin + j).array().square() * model.lambda.transpose().array()).sum();
    const double sd = std::sqrt(var);
    iv.lower[window.begin + j] = eta[j] - z * sd;
    iv.upper[window.begin + j] = eta[j] + z * sd;
  }
  return iv;
}

// Random-walk Metropolis on the score posterior started at the mode, with
// proposal covariance 2.38^2 / K times the inverse precision. Pointwise
// quantiles of eta over the retained draws.
inline PredictionInterval interval_mc_credible(const PartialTrack& track, const FGFPCAModel& model,
                                               const ScorePosterior& mode, IndexRange window, double level = 0.95,
                                               const McOptions& mc = {}) {
  detail::check_track(track, model);
  detail::check_window(model, window);
  if (!(level > 0.0 && level < 1.0))
    throw Error(ErrorKind::InvalidArgument, "dynpred", "interval level must lie in (0, 1)");
  if (mc.n_samples < 1000) throw Error(ErrorKind::InvalidArgument, "dynpred", "mc sampling needs at least 1000 draws");
  if (!(mc.burn_in >= 0.0 && mc.burn_in < 1.0))
    throw Error(ErrorKind::InvalidArgument, "dynpred", "burn-in fraction must lie in [0, 1)");
  const Index K = model.K, Ju = track.observed();
  const Eigen::LLT<MatrixXd> prec(mode.precision);
  if (prec.info() != Eigen::Success)
    throw Error(ErrorKind::SingularPrecision, "dynpred", "posterior precision is not positive definite");
  const MatrixXd cov = prec.solve(MatrixXd::Identity(K, K));
  const MatrixXd L = (2.38 * 2.38 / static_cast<double>(K) * cov).llt().matrixL();

  const VectorXd y = track.y.cast<double>();
  const auto f0u = model.f0.head(Ju);
  const auto phiu = model.phi.topRows(Ju);
  auto logpost = [&](const VectorXd& xi) { return score_log_posterior(y, f0u, phiu, model.lambda, xi); };

  std::mt19937_64 rng(mc.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Index burn = static_cast<Index>(std::floor(mc.burn_in * static_cast<double>(mc.n_samples)));
  const Index kept = mc.n_samples - burn;
  MatrixXd draws(K, kept);
  VectorXd cur = mode.xi, z(K);
  double lcur = logpost(cur);
  Index accepted = 0;
  for (Index s = 0; s < mc.n_samples; ++s) {
    for (Index k = 0; k < K; ++k) z[k] = normal(rng);
    const VectorXd prop = cur + L * z;
    const double lprop = logpost(prop);
    if (std::log(unif(rng)) < lprop - lcur) {
      cur = prop;
      lcur = lprop;
      ++accepted;
    }
    if (s >= burn) draws.col(s - burn) = cur;
  }

  auto iv = detail::blank_interval(model.grid.size(), window, level, IntervalMethod::McCredible);
  iv.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(mc.n_samples);
  if (iv.acceptance_rate < 0.05 || iv.acceptance_rate > 0.8)
    iv.warnings.push_back("mc acceptance rate " + std::to_string(iv.acceptance_rate) + " outside [0.05, 0.8]");
  const double a = 0.5 * (1.0 - level);
  std::vector<double> col(static_cast<std::size_t>(kept));
  for (Index j = 0; j < window.size(); ++j) {
    const Index g = window.begin + j;
    const Eigen::RowVectorXd row = model.phi.row(g);
    for (Index s = 0; s < kept; ++s) col[static_cast<std::size_t>(s)] = model.f0[g] + row.dot(draws.col(s));
    iv.lower[g] = sample_quantile(col, a);
    iv.upper[g] = sample_quantile(col, 1.0 - a);
  }
  return iv;
}

struct PredictOptions {
  IntervalMethod method = IntervalMethod::WaldHessian;
  double level = 0.95;
  McOptions mc;
  ScoreSolverOptions solver;
};

// Scores, predicted track on the whole grid, and an interval over the
// unobserved part [J_u, J).
inline PredictionResult predict_subject(const PartialTrack& track, const FGFPCAModel& model,
                                        const PredictOptions& opt = {}) {
  const ScorePosterior mode = posterior_mode_scores(track, model, {}, opt.solver);
  PredictionResult r;
  r.subject_id = track.subject_id;
  r.observed = track.observed();
  r.xi = mode.xi;
  r.precision = mode.precision;
  r.iterations = mode.iterations;
  r.gradient_norm = mode.gradient_norm;
  const IndexRange all{0, model.grid.size()};
  r.eta_hat = predict_latent(model, r.xi, all);
  r.p_hat = predict_probability(model, r.xi, all);
  const IndexRange future{r.observed, model.grid.size()};
  switch (opt.method) {
    case IntervalMethod::WaldHessian: r.interval = interval_wald(model, r.xi, r.precision, future, opt.level); break;
    case IntervalMethod::PluginPrior: r.interval = interval_plugin_prior(model, r.xi, future, opt.level); break;
    case IntervalMethod::McCredible:
      r.interval = interval_mc_credible(track, model, mode, future, opt.level, opt.mc);
      break;
  }
  return r;
}

}  // namespace fgfpca
