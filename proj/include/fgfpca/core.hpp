#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fgfpca/error.hpp"

namespace fgfpca {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Outcome matrix entry for columns beyond a subject's observed length.
inline constexpr int kMissing = -1;

// ---------------------------------------------------------------------------
// Grid

class RegularGrid {
 public:
  RegularGrid() = default;

  RegularGrid(Index num_points, double t_min, double t_max)
      : t_min_(t_min), t_max_(t_max) {
    if (num_points < 2)
      throw Error(ErrorKind::InvalidGrid, "fd-core",
                  "grid needs at least 2 points, got " + std::to_string(num_points));
    if (!(t_min < t_max) || !std::isfinite(t_min) || !std::isfinite(t_max))
      throw Error(ErrorKind::InvalidGrid, "fd-core", "grid bounds must satisfy t_min < t_max");
    points_.resize(num_points);
    const double h = spacing_for(num_points);
    for (Index j = 0; j < num_points; ++j) points_[j] = t_min + h * static_cast<double>(j);
    points_[num_points - 1] = t_max;
  }

  Index size() const { return points_.size(); }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  double spacing() const { return spacing_for(size()); }
  double operator[](Index j) const { return points_[j]; }
  const VectorXd& points() const { return points_; }

  // Rectangle-rule weights; every point carries one grid spacing.
  VectorXd quadrature_weights() const { return VectorXd::Constant(size(), spacing()); }

  // Number of grid points with t <= t_cut (the observed length at a cutoff).
  Index count_upto(double t_cut) const {
    const double tol = 1e-9 * spacing();
    Index n = 0;
    while (n < size() && points_[n] <= t_cut + tol) ++n;
    return n;
  }

  bool same_as(const RegularGrid& o) const {
    const double tol = 1e-12 * std::max(1.0, std::abs(t_max_ - t_min_));
    return size() == o.size() && std::abs(t_min_ - o.t_min_) <= tol &&
           std::abs(t_max_ - o.t_max_) <= tol;
  }

 private:
  double spacing_for(Index n) const { return (t_max_ - t_min_) / static_cast<double>(n - 1); }

  double t_min_ = 0.0;
  double t_max_ = 1.0;
  VectorXd points_;
};

inline RegularGrid make_grid(Index num_points, double t_min, double t_max) {
  return RegularGrid(num_points, t_min, t_max);
}

// ---------------------------------------------------------------------------
// Exponential family

enum class FamilyKind { BinomialLogit };

// Log-density written as log h(y) + eta T(y) - log A(eta).
class Family {
 public:
  explicit Family(FamilyKind kind = FamilyKind::BinomialLogit) : kind_(kind) {}

  FamilyKind kind() const { return kind_; }
  std::string name() const { return "binomial-logit"; }

  static Family from_name(const std::string& name) {
    if (name == "binomial-logit") return Family(FamilyKind::BinomialLogit);
    throw Error(ErrorKind::ModelFormatError, "fd-core", "unknown family '" + name + "'");
  }

  bool valid_outcome(int y) const { return y == 0 || y == 1; }

  double link(double mu) const { return std::log(mu) - std::log1p(-mu); }
  double inverse_link(double eta) const {
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
  }

  double log_h(double /*y*/) const { return 0.0; }
  double sufficient_stat(double y) const { return y; }
  // log A(eta) = log(1 + exp(eta)), evaluated without overflow.
  double log_partition(double eta) const {
    return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
  }

  double log_density(double y, double eta) const {
    return log_h(y) + eta * sufficient_stat(y) - log_partition(eta);
  }
  // d/d eta of the log-density.
  double score(double y, double eta) const { return y - inverse_link(eta); }
  // d^2/d eta^2 of the log-density (always <= 0).
  double curvature(double /*y*/, double eta) const {
    const double p = inverse_link(eta);
    return -p * (1.0 - p);
  }

 private:
  FamilyKind kind_;
};

// ---------------------------------------------------------------------------
// Data

struct FunctionalDataset {
  RegularGrid grid;
  std::vector<std::string> subject_ids;
  // N x J; entries beyond observed_upto[i] hold kMissing.
  Eigen::MatrixXi y;
  // Observed length J_u per subject (columns 0..J_u-1 observed).
  std::vector<Index> observed_upto;

  Index num_subjects() const { return y.rows(); }
  Index num_points() const { return y.cols(); }

  bool fully_observed() const {
    return std::all_of(observed_upto.begin(), observed_upto.end(),
                       [&](Index u) { return u == num_points(); });
  }

  void validate(const Family& family = Family{}) const {
    if (y.rows() < 1) throw Error(ErrorKind::InvalidDataset, "fd-core", "dataset has no subjects");
    if (y.cols() != grid.size())
      throw Error(ErrorKind::DimensionMismatch, "fd-core", "outcome columns do not match grid size");
    if (static_cast<Index>(subject_ids.size()) != y.rows() ||
        static_cast<Index>(observed_upto.size()) != y.rows())
      throw Error(ErrorKind::DimensionMismatch, "fd-core", "subject metadata length mismatch");
    std::set<std::string> seen(subject_ids.begin(), subject_ids.end());
    if (static_cast<Index>(seen.size()) != y.rows())
      throw Error(ErrorKind::InvalidDataset, "fd-core", "subject ids are not unique");
    for (Index i = 0; i < y.rows(); ++i) {
      const Index ju = observed_upto[i];
      if (ju < 0 || ju > y.cols())
        throw Error(ErrorKind::InvalidDataset, "fd-core", "observed length out of range");
      for (Index j = 0; j < y.cols(); ++j) {
        const int v = y(i, j);
        if (j < ju && !family.valid_outcome(v))
          throw Error(ErrorKind::InvalidOutcome, "fd-core",
                      "invalid outcome " + std::to_string(v) + " for subject " + subject_ids[i]);
        if (j >= ju && v != kMissing)
          throw Error(ErrorKind::InvalidDataset, "fd-core", "unobserved column not marked missing");
      }
    }
  }

  // Copy with every subject truncated to at most `upto` observed columns.
  FunctionalDataset truncated(Index upto) const {
    FunctionalDataset out = *this;
    for (Index i = 0; i < y.rows(); ++i) {
      const Index ju = std::min(observed_upto[i], upto);
      out.observed_upto[i] = ju;
      for (Index j = ju; j < y.cols(); ++j) out.y(i, j) = kMissing;
    }
    return out;
  }

  FunctionalDataset subset(const std::vector<Index>& rows) const {
    FunctionalDataset out;
    out.grid = grid;
    out.y.resize(static_cast<Index>(rows.size()), y.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.y.row(static_cast<Index>(r)) = y.row(rows[r]);
      out.subject_ids.push_back(subject_ids[rows[r]]);
      out.observed_upto.push_back(observed_upto[rows[r]]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Fitted model

struct FitDiagnostics {
  int local_bins = 0;
  int degenerate_bins = 0;
  int nonconverged_bins = 0;
  double residual_variance = 0.0;  // noise variance of the binned FPCA fit
  double cov_smoothing = 0.0;      // GCV-selected covariance penalty
  double f0_smoothing = 0.0;       // REML-selected mean penalty
  int outer_iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, double>> timings;  // seconds per step
};

struct FGFPCAModel {
  RegularGrid grid;
  VectorXd f0;    // J
  Index K = 0;
  MatrixXd phi;   // J x K
  VectorXd lambda;  // K
  VectorXd pve;     // cumulative, K
  Family family;
  Index bin_width = 10;
  FitDiagnostics diagnostics;

  void validate() const {
    const Index J = grid.size();
    if (f0.size() != J || phi.rows() != J || phi.cols() != K || lambda.size() != K ||
        pve.size() != K)
      throw Error(ErrorKind::ModelFormatError, "fd-core", "model dimensions are inconsistent");
    if (K < 1) throw Error(ErrorKind::ModelFormatError, "fd-core", "model has no components");
    if (!f0.allFinite() || !phi.allFinite() || !lambda.allFinite())
      throw Error(ErrorKind::ModelFormatError, "fd-core", "model contains non-finite values");
    if ((lambda.array() <= 0.0).any())
      throw Error(ErrorKind::ModelFormatError, "fd-core", "score variances must be positive");
    for (Index k = 1; k < K; ++k)
      if (pve[k] < pve[k - 1])
        throw Error(ErrorKind::ModelFormatError, "fd-core", "pve must be non-decreasing");
    if (pve[K - 1] > 1.0 + 1e-12)
      throw Error(ErrorKind::ModelFormatError, "fd-core", "pve exceeds one");
  }
};

// Gram matrix of the columns of `basis` under diagonal quadrature weights.
inline MatrixXd weighted_gram(const MatrixXd& basis, const VectorXd& weights) {
  return basis.transpose() * weights.asDiagonal() * basis;
}

// ---------------------------------------------------------------------------
// Worker parallelism. Each task writes only its own output slot, so results
// do not depend on the thread count.

namespace detail {
inline std::atomic<unsigned>& max_threads_ref() {
  static std::atomic<unsigned> n{0};
  return n;
}
}  // namespace detail

// 0 means "use hardware concurrency".
inline void set_max_threads(unsigned n) { detail::max_threads_ref() = n; }

inline unsigned max_threads() {
  unsigned n = detail::max_threads_ref();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

namespace detail {
inline bool& inside_parallel_region() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

// Nested calls run serially on the calling worker.
template <typename Fn>
void parallel_for(Index count, Fn&& fn) {
  const unsigned workers =
      static_cast<unsigned>(std::min<Index>(static_cast<Index>(max_threads()), count));
  if (workers <= 1 || detail::inside_parallel_region()) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      detail::inside_parallel_region() = true;
      try {
        for (Index i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace fgfpca
