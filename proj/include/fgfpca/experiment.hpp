#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "fgfpca/dynpred.hpp"
#include "fgfpca/gfosr.hpp"
#include "fgfpca/metrics.hpp"
#include "fgfpca/pipeline.hpp"
#include "fgfpca/simulate.hpp"

namespace fgfpca {

// Stateless 64-bit mixer used to derive independent seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix_seed(mix_seed(mix_seed(base ^ mix_seed(a)) ^ b) ^ c);
}

enum class Method { FGFPCA, GFOSR_L1, GFOSR_L5 };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::FGFPCA: return "fgfpca";
    case Method::GFOSR_L1: return "gfosr-l1";
    case Method::GFOSR_L5: return "gfosr-l5";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  std::string t = s;
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "fgfpca") return Method::FGFPCA;
  if (t == "gfosr-l1") return Method::GFOSR_L1;
  if (t == "gfosr-l5") return Method::GFOSR_L5;
  throw Error(ErrorKind::InvalidArgument, "simeval", "unknown method '" + s + "'");
}

inline Index method_lags(Method m) { return m == Method::GFOSR_L1 ? 1 : 5; }

struct ExperimentOptions {
  SimulationConfig sim;
  std::vector<Method> methods{Method::FGFPCA, Method::GFOSR_L1, Method::GFOSR_L5};
  int replicates = 20;
  std::uint64_t seed = 1;
  FitOptions fit;
  double ridge = 1e-4;
  // Interval coverage along the unobserved track.
  bool coverage = true;
  double level = 0.95;
  McOptions mc{2000, 0.2, 1};
};

// One (method, replicate, cutoff, window) cell of the results table.
struct CellResult {
  Method method = Method::FGFPCA;
  int replicate = 0;
  int cutoff = 0;  // position in the cutoff list
  int window = 0;  // position in the window list
  double ise_mean = 0.0;
  // AUC pooled over every (subject, time) pair of the test set in the window;
  // NaN when the pooled outcomes hold a single class.
  double auc_mean = std::numeric_limits<double>::quiet_NaN();
};

// Mean coverage of one interval type over a (cutoff, window) cell.
struct CoverageCell {
  std::string source;  // e.g. "fgfpca/mc-credible"
  int replicate = 0;
  int cutoff = 0;
  int window = 0;
  double coverage = 0.0;
};

struct MethodTiming {
  Method method = Method::FGFPCA;
  int replicate = 0;
  double fit_seconds = 0.0;
  double predict_seconds = 0.0;
};

struct ReplicateOutcome {
  int replicate = 0;
  std::uint64_t seed = 0;
  bool completed = false;
  std::string error;
  std::vector<CellResult> cells;
  std::vector<CoverageCell> coverage;
  std::vector<MethodTiming> timings;
  // Pointwise coverage sums over test subjects, keyed by (source, cutoff).
  std::map<std::pair<std::string, int>, VectorXd> curve_sum;
  std::map<std::pair<std::string, int>, VectorXd> curve_count;
  std::vector<std::string> warnings;
};

struct TableRow {
  Method method = Method::FGFPCA;
  int cutoff = 0;
  int window = 0;
  double ise_mean = 0.0;
  double auc_mean = std::numeric_limits<double>::quiet_NaN();
  int replicates = 0;      // replicates contributing to ise
  int auc_replicates = 0;  // replicates contributing to auc
  double fit_seconds = 0.0;
  double predict_seconds = 0.0;
};

struct CoverageCurve {
  std::string source;
  int cutoff = 0;
  VectorXd coverage;  // J, NaN where undefined
};

struct ExperimentResult {
  ExperimentOptions options;
  std::vector<ReplicateOutcome> replicates;
  std::vector<TableRow> table;
  std::vector<CoverageCurve> curves;

  int completed() const {
    int n = 0;
    for (const auto& r : replicates) n += r.completed ? 1 : 0;
    return n;
  }
};

// Windows entirely after the cutoff (the upper-triangular cells).
inline bool cell_filled(const SimulationConfig& cfg, int cutoff, int window) {
  return cfg.windows[static_cast<std::size_t>(window)].first >= cfg.cutoffs[static_cast<std::size_t>(cutoff)] - 1e-12;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct CellAccumulator {
  double ise = 0.0;
  int n = 0;
  std::vector<double> score;
  std::vector<int> label;
};

inline void add_curve(ReplicateOutcome& out, const std::string& source, int cutoff, const Interval& iv,
                      const VectorXd& truth, IndexRange future) {
  const Index J = truth.size();
  auto& s = out.curve_sum[{source, cutoff}];
  auto& c = out.curve_count[{source, cutoff}];
  if (s.size() == 0) {
    s = VectorXd::Zero(J);
    c = VectorXd::Zero(J);
  }
  const VectorXd hit = coverage_curve(iv, truth, future);
  s.segment(future.begin, future.size()) += hit;
  c.segment(future.begin, future.size()).array() += 1.0;
}

inline ReplicateOutcome run_replicate(const ExperimentOptions& opt, int rep) {
  ReplicateOutcome out;
  out.replicate = rep;
  out.seed = derive_seed(opt.seed, static_cast<std::uint64_t>(rep));
  SimulationConfig cfg = opt.sim;
  cfg.seed = out.seed;
  const auto sim = generate_dataset(cfg);
  const auto split = split_train_test(sim, cfg.n_train);
  const auto& grid = split.test.grid;
  const int C = static_cast<int>(cfg.cutoffs.size()), W = static_cast<int>(cfg.windows.size());
  const Index Ntest = split.test.num_subjects();

  std::vector<IndexRange> windows;
  for (const auto& [lo, hi] : cfg.windows) windows.push_back(window_indices(grid, lo, hi));
  std::vector<Index> cut_index;
  for (double c : cfg.cutoffs) cut_index.push_back(grid.count_upto(c));

  for (const Method method : opt.methods) {
    MethodTiming timing;
    timing.method = method;
    timing.replicate = rep;
    std::vector<CellAccumulator> acc(static_cast<std::size_t>(C * W));
    std::vector<std::pair<std::string, std::vector<double>>> cov_acc;  // per source: C*W sums
    auto cov_slot = [&](const std::string& src) -> std::vector<double>& {
      for (auto& [name, v] : cov_acc)
        if (name == src) return v;
      cov_acc.emplace_back(src, std::vector<double>(static_cast<std::size_t>(C * W), 0.0));
      return cov_acc.back().second;
    };

    auto score_cell = [&](int c, const VectorXd& eta_hat, Index i) {
      const VectorXd truth = split.test_eta.row(i).transpose();
      const Eigen::VectorXi yrow = split.test.y.row(i).transpose();
      for (int w = 0; w < W; ++w) {
        if (!cell_filled(cfg, c, w)) continue;
        auto& a = acc[static_cast<std::size_t>(c * W + w)];
        a.ise += ise(eta_hat, truth, windows[static_cast<std::size_t>(w)]);
        ++a.n;
        const auto& win = windows[static_cast<std::size_t>(w)];
        for (Index j = win.begin; j < win.end; ++j) {
          a.score.push_back(eta_hat[j]);
          a.label.push_back(yrow[j]);
        }
      }
    };
    auto record_coverage = [&](const std::string& src, int c, const Interval& iv, Index i) {
      const VectorXd truth = split.test_eta.row(i).transpose();
      auto& slot = cov_slot(src);
      for (int w = 0; w < W; ++w)
        if (cell_filled(cfg, c, w))
          slot[static_cast<std::size_t>(c * W + w)] += coverage(iv, truth, windows[static_cast<std::size_t>(w)]);
      add_curve(out, src, c, iv, truth, {cut_index[static_cast<std::size_t>(c)], grid.size()});
    };

    if (method == Method::FGFPCA) {
      auto t0 = Clock::now();
      const FitReport rep_fit = fit_fgfpca(split.train, opt.fit);
      timing.fit_seconds = elapsed(t0);
      for (const auto& w : rep_fit.model.diagnostics.warnings) out.warnings.push_back("fgfpca: " + w);
      const FGFPCAModel& model = rep_fit.model;
      for (int c = 0; c < C; ++c) {
        const Index m = cut_index[static_cast<std::size_t>(c)];
        const auto part = split.test.truncated(m);
        const IndexRange future{m, grid.size()};
        std::vector<ScorePosterior> modes(static_cast<std::size_t>(Ntest));
        std::vector<VectorXd> etas(static_cast<std::size_t>(Ntest));
        t0 = Clock::now();
        parallel_for(Ntest, [&](Index i) {
          modes[static_cast<std::size_t>(i)] = posterior_mode_scores(track_from_dataset(part, i), model);
          etas[static_cast<std::size_t>(i)] = predict_latent(model, modes[static_cast<std::size_t>(i)].xi);
        });
        timing.predict_seconds += elapsed(t0);
        for (Index i = 0; i < Ntest; ++i) score_cell(c, etas[static_cast<std::size_t>(i)], i);
        if (!opt.coverage) continue;
        std::vector<PredictionInterval> mc(static_cast<std::size_t>(Ntest));
        parallel_for(Ntest, [&](Index i) {
          McOptions mo = opt.mc;
          mo.seed = derive_seed(out.seed, 0x6d63ULL, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i));
          mc[static_cast<std::size_t>(i)] = interval_mc_credible(track_from_dataset(part, i), model,
                                                                  modes[static_cast<std::size_t>(i)], future, opt.level, mo);
        });
        for (Index i = 0; i < Ntest; ++i) {
          const auto& sp = modes[static_cast<std::size_t>(i)];
          record_coverage("fgfpca/mc-credible", c, mc[static_cast<std::size_t>(i)], i);
          record_coverage("fgfpca/wald-hessian", c, interval_wald(model, sp.xi, sp.precision, future, opt.level), i);
          record_coverage("fgfpca/plugin-prior", c, interval_plugin_prior(model, sp.xi, future, opt.level), i);
        }
      }
    } else {
      const Index L = method_lags(method);
      GFOSRControls gc;
      gc.ridge = opt.ridge;
      for (int c = 0; c < C; ++c) {
        const Index m = cut_index[static_cast<std::size_t>(c)];
        auto t0 = Clock::now();
        const GFOSRModel gm = fit_gfosr(split.train, m, L, gc);
        timing.fit_seconds += elapsed(t0);
        const auto part = split.test.truncated(m);
        std::vector<VectorXd> etas(static_cast<std::size_t>(Ntest));
        t0 = Clock::now();
        for (Index i = 0; i < Ntest; ++i) etas[static_cast<std::size_t>(i)] = predict_gfosr(gm, track_from_dataset(part, i));
        timing.predict_seconds += elapsed(t0);
        for (Index i = 0; i < Ntest; ++i) {
          score_cell(c, etas[static_cast<std::size_t>(i)], i);
          if (opt.coverage)
            record_coverage(to_string(method) + "/wald", c, interval_gfosr_wald(gm, track_from_dataset(part, i), opt.level), i);
        }
      }
    }

    for (int c = 0; c < C; ++c)
      for (int w = 0; w < W; ++w) {
        if (!cell_filled(cfg, c, w)) continue;
        const auto& a = acc[static_cast<std::size_t>(c * W + w)];
        CellResult cell;
        cell.method = method;
        cell.replicate = rep;
        cell.cutoff = c;
        cell.window = w;
        cell.ise_mean = a.ise / a.n;
        const auto n = static_cast<Index>(a.score.size());
        if (const auto v = try_auc(Eigen::Map<const VectorXd>(a.score.data(), n),
                                   Eigen::Map<const Eigen::VectorXi>(a.label.data(), n), {0, n}))
          cell.auc_mean = *v;
        out.cells.push_back(cell);
        for (const auto& [src, sums] : cov_acc)
          out.coverage.push_back({src, rep, c, w, sums[static_cast<std::size_t>(c * W + w)] / static_cast<double>(Ntest)});
      }
    out.timings.push_back(timing);
  }
  out.completed = true;
  return out;
}

}  // namespace detail

// Train/test simulation study: every replicate draws a fresh dataset, fits
// each method on the training subjects, and predicts the test subjects from
// each cutoff. Replicates that hit a numerical failure are recorded and left
// out of the summary table.
inline ExperimentResult run_experiment(const ExperimentOptions& opt) {
  opt.sim.validate();
  if (opt.replicates < 1) throw Error(ErrorKind::InvalidArgument, "simeval", "need at least one replicate");
  if (opt.methods.empty()) throw Error(ErrorKind::InvalidArgument, "simeval", "no methods selected");
  ExperimentResult res;
  res.options = opt;
  res.replicates.resize(static_cast<std::size_t>(opt.replicates));
  parallel_for(opt.replicates, [&](Index r) {
    auto& slot = res.replicates[static_cast<std::size_t>(r)];
    try {
      slot = detail::run_replicate(opt, static_cast<int>(r));
    } catch (const Error& e) {
      if (!is_numerical(e.kind())) throw;
      slot = {};
      slot.replicate = static_cast<int>(r);
      slot.seed = derive_seed(opt.seed, static_cast<std::uint64_t>(r));
      slot.error = std::string(to_string(e.kind())) + " in " + e.module() + ": " + e.what();
    }
  });

  // Summary in a fixed (method, cutoff, window) order.
  const int C = static_cast<int>(opt.sim.cutoffs.size()), W = static_cast<int>(opt.sim.windows.size());
  for (const Method m : opt.methods) {
    double fit = 0.0, pred = 0.0;
    int nt = 0;
    for (const auto& r : res.replicates)
      for (const auto& t : r.timings)
        if (t.method == m) {
          fit += t.fit_seconds;
          pred += t.predict_seconds;
          ++nt;
        }
    for (int c = 0; c < C; ++c)
      for (int w = 0; w < W; ++w) {
        if (!cell_filled(opt.sim, c, w)) continue;
        TableRow row;
        row.method = m;
        row.cutoff = c;
        row.window = w;
        double ise_sum = 0.0, auc_sum = 0.0;
        for (const auto& r : res.replicates)
          for (const auto& cell : r.cells)
            if (cell.method == m && cell.cutoff == c && cell.window == w) {
              ise_sum += cell.ise_mean;
              ++row.replicates;
              if (!std::isnan(cell.auc_mean)) {
                auc_sum += cell.auc_mean;
                ++row.auc_replicates;
              }
            }
        if (row.replicates > 0) row.ise_mean = ise_sum / row.replicates;
        if (row.auc_replicates > 0) row.auc_mean = auc_sum / row.auc_replicates;
        if (nt > 0) {
          row.fit_seconds = fit / nt;
          row.predict_seconds = pred / nt;
        }
        res.table.push_back(row);
      }
  }

  std::map<std::pair<std::string, int>, std::pair<VectorXd, VectorXd>> curves;
  for (const auto& r : res.replicates)
    for (const auto& [key, sum] : r.curve_sum) {
      auto& [s, n] = curves[key];
      if (s.size() == 0) {
        s = VectorXd::Zero(sum.size());
        n = VectorXd::Zero(sum.size());
      }
      s += sum;
      n += r.curve_count.at(key);
    }
  for (const auto& [key, sn] : curves) {
    CoverageCurve cc;
    cc.source = key.first;
    cc.cutoff = key.second;
    cc.coverage = VectorXd::Constant(sn.first.size(), std::numeric_limits<double>::quiet_NaN());
    for (Index j = 0; j < sn.first.size(); ++j)
      if (sn.second[j] > 0) cc.coverage[j] = sn.first[j] / sn.second[j];
    res.curves.push_back(std::move(cc));
  }
  return res;
}

// Mean window coverage of one interval source at one cutoff, averaged over
// completed replicates and the filled windows.
inline double mean_coverage(const ExperimentResult& res, const std::string& source, std::optional<int> cutoff = {}) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : res.replicates)
    for (const auto& c : r.coverage)
      if (c.source == source && (!cutoff || c.cutoff == *cutoff)) {
        s += c.coverage;
        ++n;
      }
  return n > 0 ? s / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace fgfpca
