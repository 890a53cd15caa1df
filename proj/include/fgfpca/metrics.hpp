#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "fgfpca/core.hpp"

namespace fgfpca {

// Contiguous 0-based index range [begin, end).
struct IndexRange {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

// Grid indices with lo < t_j <= hi.
inline IndexRange window_indices(const RegularGrid& grid, double lo, double hi) {
  return {grid.count_upto(lo), grid.count_upto(hi)};
}

// Sum of squared latent errors over the window (no grid-spacing factor).
inline double ise(const VectorXd& eta_hat, const VectorXd& eta_true, IndexRange window) {
  if (eta_hat.size() != eta_true.size())
    throw Error(ErrorKind::DimensionMismatch, "simeval", "prediction and truth differ in length");
  if (window.empty() || window.begin < 0 || window.end > eta_hat.size())
    throw Error(ErrorKind::InvalidArgument, "simeval", "window is empty or out of range");
  return (eta_hat.segment(window.begin, window.size()) - eta_true.segment(window.begin, window.size()))
      .squaredNorm();
}

// Mann-Whitney AUC with half credit for ties, computed from mid-ranks.
// Returns nullopt when the window holds a single outcome class.
template <typename YVec>
std::optional<double> try_auc(const VectorXd& score, const YVec& y, IndexRange window) {
  if (score.size() != y.size())
    throw Error(ErrorKind::DimensionMismatch, "simeval", "scores and outcomes differ in length");
  const Index n = window.size();
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), window.begin);
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) { return score[a] < score[b]; });
  double rank_sum_pos = 0.0;
  long n_pos = 0, n_neg = 0;
  for (Index a = 0; a < n;) {
    Index b = a;
    while (b + 1 < n && score[idx[b + 1]] == score[idx[a]]) ++b;
    const double mid = 0.5 * static_cast<double>(a + b) + 1.0;
    for (Index c = a; c <= b; ++c) {
      if (y[idx[c]] == 1) {
        rank_sum_pos += mid;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    a = b + 1;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

template <typename YVec>
double auc(const VectorXd& score, const YVec& y, IndexRange window) {
  const auto a = try_auc(score, y, window);
  if (!a) throw Error(ErrorKind::UndefinedAUC, "simeval", "window contains a single outcome class");
  return *a;
}

struct Interval {
  VectorXd lower;
  VectorXd upper;
};

// Pointwise indicator lower <= truth <= upper over the window.
inline VectorXd coverage_curve(const Interval& iv, const VectorXd& eta_true, IndexRange window) {
  VectorXd hit(window.size());
  for (Index j = 0; j < window.size(); ++j) {
    const Index g = window.begin + j;
    hit[j] = (iv.lower[g] <= eta_true[g] && eta_true[g] <= iv.upper[g]) ? 1.0 : 0.0;
  }
  return hit;
}

inline double coverage(const Interval& iv, const VectorXd& eta_true, IndexRange window) {
  if (window.empty()) return std::numeric_limits<double>::quiet_NaN();
  return coverage_curve(iv, eta_true, window).mean();
}

}  // namespace fgfpca
