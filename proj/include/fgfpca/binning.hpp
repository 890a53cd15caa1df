#pragma once

#include <vector>

#include "fgfpca/core.hpp"

namespace fgfpca {

// Equal-width partition of the fine grid. Indices are 0-based; bin s covers
// [begin[s], end[s]). The final bin may be short when J is not a multiple of
// the width.
struct BinningSpec {
  Index bin_width = 1;
  Index num_points = 0;  // J
  std::vector<Index> begin;
  std::vector<Index> end;
  std::vector<Index> midpoint;  // lower median of each bin

  Index num_bins() const { return static_cast<Index>(begin.size()); }
  Index bin_size(Index s) const { return end[s] - begin[s]; }
};

inline BinningSpec make_bins(const RegularGrid& grid, Index bin_width) {
  const Index J = grid.size();
  if (bin_width < 1 || bin_width > J)
    throw Error(ErrorKind::InvalidBinWidth, "binning",
                "bin width " + std::to_string(bin_width) + " outside [1, " + std::to_string(J) + "]");
  BinningSpec spec;
  spec.bin_width = bin_width;
  spec.num_points = J;
  for (Index a = 0; a < J; a += bin_width) {
    const Index b = std::min(a + bin_width, J);
    spec.begin.push_back(a);
    spec.end.push_back(b);
    spec.midpoint.push_back(a + (b - a - 1) / 2);
  }
  return spec;
}

// Midpoint times t_{m_s}.
inline VectorXd binned_grid(const BinningSpec& spec, const RegularGrid& grid) {
  VectorXd t(spec.num_bins());
  for (Index s = 0; s < spec.num_bins(); ++s) t[s] = grid[spec.midpoint[s]];
  return t;
}

// Bin widths in domain units, used as quadrature weights on the binned grid.
inline VectorXd bin_weights(const BinningSpec& spec, const RegularGrid& grid) {
  VectorXd w(spec.num_bins());
  for (Index s = 0; s < spec.num_bins(); ++s)
    w[s] = static_cast<double>(spec.bin_size(s)) * grid.spacing();
  return w;
}

}  // namespace fgfpca
