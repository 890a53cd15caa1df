#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "fgfpca/error.hpp"

namespace fgfpca {

// Cubic B-spline basis on [lo, hi] with equally spaced knots extended past
// both ends (P-spline construction). Needs at least 4 basis functions.
class BSplineBasis {
 public:
  static constexpr int kDegree = 3;

  BSplineBasis(Eigen::Index num_basis, double lo, double hi)
      : n_(num_basis), lo_(lo), hi_(hi) {
    if (num_basis < kDegree + 1)
      throw Error(ErrorKind::InvalidBasis, "spline",
                  "cubic B-spline basis needs at least 4 functions");
    if (!(lo < hi)) throw Error(ErrorKind::InvalidBasis, "spline", "basis range is empty");
    const Eigen::Index intervals = n_ - kDegree;
    h_ = (hi_ - lo_) / static_cast<double>(intervals);
    knots_.resize(n_ + kDegree + 1);
    for (Eigen::Index i = 0; i < knots_.size(); ++i)
      knots_[i] = lo_ + h_ * static_cast<double>(i - kDegree);
  }

  Eigen::Index size() const { return n_; }

  // Row vector of all basis functions at x (x clamped into [lo, hi]).
  Eigen::RowVectorXd eval(double x) const {
    x = std::clamp(x, lo_, hi_);
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n_);
    Eigen::Index span = static_cast<Eigen::Index>(std::floor((x - lo_) / h_));
    span = std::clamp<Eigen::Index>(span, 0, n_ - kDegree - 1);
    // Knot interval [knots_[span+3], knots_[span+4]) carries basis span..span+3.
    const Eigen::Index mu = span + kDegree;
    double N[kDegree + 1] = {1.0, 0.0, 0.0, 0.0};
    double left[kDegree + 1], right[kDegree + 1];
    for (int d = 1; d <= kDegree; ++d) {
      left[d] = x - knots_[mu + 1 - d];
      right[d] = knots_[mu + d] - x;
      double saved = 0.0;
      for (int r = 0; r < d; ++r) {
        const double tmp = N[r] / (right[r + 1] + left[d - r]);
        N[r] = saved + right[r + 1] * tmp;
        saved = left[d - r] * tmp;
      }
      N[d] = saved;
    }
    for (int r = 0; r <= kDegree; ++r) row[span + r] = N[r];
    return row;
  }

  Eigen::MatrixXd design(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd B(x.size(), n_);
    for (Eigen::Index i = 0; i < x.size(); ++i) B.row(i) = eval(x[i]);
    return B;
  }

 private:
  Eigen::Index n_;
  double lo_, hi_, h_ = 1.0;
  Eigen::VectorXd knots_;
};

// D^T D for the order-`order` difference operator on n coefficients.
inline Eigen::MatrixXd difference_penalty(Eigen::Index n, int order = 2) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(n, n);
  for (int o = 0; o < order; ++o) {
    const Eigen::Index r = D.rows();
    D = (D.bottomRows(r - 1) - D.topRows(r - 1)).eval();
  }
  return D.transpose() * D;
}

}  // namespace fgfpca
