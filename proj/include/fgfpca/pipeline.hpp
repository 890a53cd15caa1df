#pragma once

#include <algorithm>
#include <chrono>
#include <string>
#include <utility>

#include "fgfpca/binning.hpp"
#include "fgfpca/core.hpp"
#include "fgfpca/fpca.hpp"
#include "fgfpca/global_refit.hpp"
#include "fgfpca/local_glmm.hpp"

namespace fgfpca {

struct FitOptions {
  Index bin_width = 10;
  LocalGlmmControls local;
  FPCAOptions fpca;
  // Spline basis used to carry eigenfunctions from the binned to the fine
  // grid. 0 picks min(30, max(K + 4, S / 2)); interpolating with S functions
  // overshoots near the ends of the grid.
  Index phi_basis = 0;
  RefitControls refit;
  // Caps K regardless of the PVE rule; 0 means no cap.
  Index max_components = 0;
};

struct FitReport {
  FGFPCAModel model;
  LatentMatrix latent;
  FPCAResult fpca;
  RefitResult refit;
};

// Bin, fit local GLMMs, smooth and decompose the covariance, then refit the
// mean and variances globally.
inline FitReport fit_fgfpca(const FunctionalDataset& data, const FitOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  data.validate();
  if (!data.fully_observed())
    throw Error(ErrorKind::InvalidDataset, "fit", "training subjects must be fully observed");
  const Family family;
  FitReport rep;
  auto& diag = rep.model.diagnostics;

  auto t0 = clock::now();
  const BinningSpec spec = make_bins(data.grid, opt.bin_width);
  rep.latent = estimate_latent_matrix(data, spec, family, opt.local);
  diag.timings.emplace_back("local-glmm", seconds_since(t0));
  diag.local_bins = static_cast<int>(spec.num_bins());
  for (Index s = 0; s < spec.num_bins(); ++s) {
    diag.degenerate_bins += rep.latent.degenerate[s] ? 1 : 0;
    diag.nonconverged_bins += rep.latent.converged[s] ? 0 : 1;
  }

  t0 = clock::now();
  rep.fpca = run_fpca(rep.latent.eta, rep.latent.t, bin_weights(spec, data.grid), opt.fpca);
  diag.timings.emplace_back("fpca", seconds_since(t0));
  diag.residual_variance = rep.fpca.residual_variance;
  diag.cov_smoothing = rep.fpca.penalty;

  Index K = rep.fpca.eig.K;
  if (opt.max_components > 0) K = std::min(K, opt.max_components);
  const Index S = spec.num_bins();
  if (K + 4 > S)
    throw Error(ErrorKind::InvalidBasis, "fit",
                "too few bins (" + std::to_string(S) + ") to carry " + std::to_string(K) + " components");
  const Index basis = opt.phi_basis > 0 ? opt.phi_basis : std::min<Index>(30, std::max(K + 4, S / 2));

  t0 = clock::now();
  const MatrixXd phi_fine = project_eigenfunctions(rep.fpca.eig.phi.leftCols(K), rep.latent.t, data.grid, basis);
  const BSplineBasis mb(basis, data.grid.t_min(), data.grid.t_max());
  const VectorXd f0_init =
      mb.design(data.grid.points()) * mb.design(rep.latent.t).colPivHouseholderQr().solve(rep.fpca.mean);
  rep.refit = fit_global_model(data, phi_fine, family, f0_init, rep.fpca.eig.eigenvalues.head(K), opt.refit);
  diag.timings.emplace_back("global-refit", seconds_since(t0));

  auto& m = rep.model;
  m.grid = data.grid;
  m.family = family;
  m.bin_width = opt.bin_width;
  m.K = K;
  m.f0 = rep.refit.f0;
  m.phi = rep.refit.phi;
  m.lambda = rep.refit.lambda;
  m.pve = rep.fpca.eig.pve.head(K);
  diag.f0_smoothing = rep.refit.rho;
  diag.outer_iterations = rep.refit.outer_iterations;
  diag.converged = rep.refit.converged;
  diag.objective_trace = rep.refit.objective_trace;
  diag.warnings = rep.refit.warnings;
  if (diag.degenerate_bins > 0)
    diag.warnings.push_back(std::to_string(diag.degenerate_bins) + " degenerate local bins were clamped");
  m.validate();
  return rep;
}

}  // namespace fgfpca
