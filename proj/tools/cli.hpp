#pragma once

// Command-line front end. `run_cli` is kept separate from main so the tests
// can drive it in-process.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fgfpca/dynpred.hpp"
#include "fgfpca/experiment.hpp"
#include "fgfpca/gfosr.hpp"
#include "fgfpca/io.hpp"
#include "fgfpca/metrics.hpp"
#include "fgfpca/pipeline.hpp"
#include "fgfpca/simulate.hpp"

namespace fgfpca::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kInputError = 2, kNumericalError = 3 };

// ---------------------------------------------------------------------------
// Flat key=value config files.

using KeyValues = std::map<std::string, std::string>;

inline KeyValues read_key_values(std::istream& in, const std::set<std::string>& allowed) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::ParseError, "cli", "config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!allowed.count(key))
      throw Error(ErrorKind::ParseError, "cli", "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = detail::trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline double parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::ParseError, "cli", what + ": '" + s + "' is not a number");
  }
}

inline long parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::ParseError, "cli", what + ": '" + s + "' is not an integer");
  }
}

inline std::vector<double> parse_reals(const std::string& s, const std::string& what) {
  std::vector<double> v;
  for (const auto& x : split_list(s)) v.push_back(parse_real(x, what));
  return v;
}

// "0.2:0.4,0.4:0.6" or "(0.2,0.4],(0.4,0.6]".
inline std::vector<std::pair<double, double>> parse_windows(const std::string& s) {
  std::string t;
  for (char c : s)
    if (c != '(' && c != ' ') t += c == ']' ? ';' : c;
  std::vector<std::pair<double, double>> out;
  std::string item;
  std::stringstream ss(t);
  const bool bracketed = t.find(';') != std::string::npos;
  while (std::getline(ss, item, bracketed ? ';' : ',')) {
    if (!item.empty() && item.front() == ',') item.erase(0, 1);
    if (item.empty()) continue;
    const auto sep = item.find(bracketed ? ',' : ':');
    if (sep == std::string::npos) throw Error(ErrorKind::ParseError, "cli", "bad window '" + item + "'");
    out.emplace_back(parse_real(item.substr(0, sep), "window"), parse_real(item.substr(sep + 1), "window"));
  }
  if (out.empty()) throw Error(ErrorKind::ParseError, "cli", "no windows given");
  return out;
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline std::string window_label(const std::pair<double, double>& w) {
  return "(" + format_number(w.first) + "," + format_number(w.second) + "]";
}

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{"n_train",  "n_test",     "J",          "seed",       "score_variances",
                                          "cutoffs",  "windows",    "methods",    "replicates", "bin_width",
                                          "pve",      "level",      "mc_samples", "ridge",      "coverage"};
  return keys;
}

inline void apply_config(const KeyValues& kv, ExperimentOptions& o) {
  for (const auto& [k, v] : kv) {
    if (k == "n_train") o.sim.n_train = parse_int(v, k);
    else if (k == "n_test") o.sim.n_test = parse_int(v, k);
    else if (k == "J") o.sim.J = parse_int(v, k);
    else if (k == "seed") o.seed = o.sim.seed = static_cast<std::uint64_t>(parse_int(v, k));
    else if (k == "score_variances") o.sim.score_variances = parse_reals(v, k);
    else if (k == "cutoffs") o.sim.cutoffs = parse_reals(v, k);
    else if (k == "windows") o.sim.windows = parse_windows(v);
    else if (k == "methods") {
      o.methods.clear();
      for (const auto& m : split_list(v)) o.methods.push_back(parse_method(m));
    } else if (k == "replicates") o.replicates = static_cast<int>(parse_int(v, k));
    else if (k == "bin_width") o.fit.bin_width = parse_int(v, k);
    else if (k == "pve") o.fit.fpca.pve_threshold = parse_real(v, k);
    else if (k == "level") o.level = parse_real(v, k);
    else if (k == "mc_samples") o.mc.n_samples = static_cast<int>(parse_int(v, k));
    else if (k == "ridge") o.ridge = parse_real(v, k);
    else if (k == "coverage") {
      if (v != "true" && v != "false") throw Error(ErrorKind::ParseError, "cli", "coverage must be true or false");
      o.coverage = v == "true";
    }
  }
}

inline KeyValues load_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ParseError, "cli", "cannot open config '" + path + "'");
  return read_key_values(in, config_keys());
}

// ---------------------------------------------------------------------------
// Shared option groups.

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  bool verbose = false;
};

struct FitFlags {
  Index bin_width = 10;
  Index quad_points = 10;
  double eta_max = 8.0;
  double pve = 0.95;
  Index cov_basis = 15;
  Index f0_basis = 25;
  int max_outer = 50;
  double tol = 1e-6;
  Index max_components = 0;

  void add(CLI::App* app) {
    app->add_option("--bin-width", bin_width, "Fine-grid points per bin")->check(CLI::PositiveNumber);
    app->add_option("--quad-points", quad_points, "Gauss-Hermite nodes for local fits")->check(CLI::PositiveNumber);
    app->add_option("--eta-max", eta_max, "Clamp for degenerate bins on the link scale")->check(CLI::PositiveNumber);
    app->add_option("--pve", pve, "Cumulative variance explained when picking K");
    app->add_option("--cov-basis", cov_basis, "Spline basis size for covariance smoothing")->check(CLI::PositiveNumber);
    app->add_option("--f0-basis", f0_basis, "Spline basis size for the mean")->check(CLI::PositiveNumber);
    app->add_option("--max-outer", max_outer, "Outer iterations of the global refit")->check(CLI::PositiveNumber);
    app->add_option("--tol", tol, "Relative objective tolerance of the global refit")->check(CLI::PositiveNumber);
    app->add_option("--max-components", max_components, "Upper bound on K (0 = none)");
  }

  void apply(FitOptions& o) const {
    o.bin_width = bin_width;
    o.local.quad_points = quad_points;
    o.local.eta_max = eta_max;
    o.fpca.pve_threshold = pve;
    o.fpca.smoothing.basis_size = cov_basis;
    o.refit.f0_basis = f0_basis;
    o.refit.max_outer = max_outer;
    o.refit.tol = tol;
    o.max_components = max_components;
  }
};

class Logger {
 public:
  Logger(std::ostream& err, const bool& verbose) : err_(err), verbose_(verbose) {}
  void info(const std::string& msg) const {
    if (verbose_) err_ << "info: " << msg << '\n';
  }
  void warn(const std::string& msg) const { err_ << "warning: " << msg << '\n'; }

 private:
  std::ostream& err_;
  const bool& verbose_;
};

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorKind::InvalidArgument, "cli", "cannot create output directory '" + dir + "'");
}

inline void check_readable(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::ParseError, "cli", what + " '" + path + "' does not exist");
}

inline void check_writable_parent(const std::string& path) {
  const fs::path p = fs::absolute(path).parent_path();
  if (!fs::is_directory(p))
    throw Error(ErrorKind::InvalidArgument, "cli", "output directory '" + p.string() + "' does not exist");
}

// ---------------------------------------------------------------------------
// simulate

inline void cmd_simulate(const std::string& config, const std::string& out_dir, std::optional<Index> n_train,
                         std::optional<Index> n_test, std::optional<Index> J, const Globals& g, const Logger& log) {
  ExperimentOptions o;
  apply_config(load_config(config), o);
  if (n_train) o.sim.n_train = *n_train;
  if (n_test) o.sim.n_test = *n_test;
  if (J) o.sim.J = *J;
  if (g.seed) o.sim.seed = *g.seed;
  o.sim.validate();
  ensure_dir(out_dir);
  const auto sim = generate_dataset(o.sim);
  const auto split = split_train_test(sim, o.sim.n_train);
  write_dataset_csv((fs::path(out_dir) / "train.csv").string(), split.train);
  write_dataset_csv((fs::path(out_dir) / "test.csv").string(), split.test);
  auto truth = detail::open_out((fs::path(out_dir) / "truth.csv").string());
  write_truth_csv(truth, split.test, split.test_eta);
  log.info("wrote " + std::to_string(split.train.num_subjects()) + " training and " +
           std::to_string(split.test.num_subjects()) + " test subjects to " + out_dir);
}

// ---------------------------------------------------------------------------
// fit

inline std::string fit_report_text(const FGFPCAModel& m) {
  std::ostringstream os;
  os.precision(6);
  const auto& d = m.diagnostics;
  os << "grid J=" << m.grid.size() << " bin_width=" << m.bin_width << " bins=" << d.local_bins << '\n';
  os << "K=" << m.K << '\n';
  os << "pve=";
  for (Index k = 0; k < m.K; ++k) os << (k ? "," : "") << m.pve[k];
  os << "\nlambda=";
  for (Index k = 0; k < m.K; ++k) os << (k ? "," : "") << m.lambda[k];
  os << "\nconverged=" << (d.converged ? "true" : "false") << " outer_iterations=" << d.outer_iterations << '\n';
  os << "degenerate_bins=" << d.degenerate_bins << " nonconverged_bins=" << d.nonconverged_bins << '\n';
  os << "f0_smoothing=" << d.f0_smoothing << " cov_smoothing=" << d.cov_smoothing << '\n';
  double total = 0.0;
  for (const auto& [step, sec] : d.timings) {
    os << "time." << step << "=" << sec << "s\n";
    total += sec;
  }
  os << "time.total=" << total << "s\n";
  for (const auto& w : d.warnings) os << "warning: " << w << '\n';
  return os.str();
}

inline void cmd_fit(const std::string& data_path, const std::string& out, const std::string& report,
                    const FitFlags& flags, std::ostream& stdout_, const Logger& log) {
  check_readable(data_path, "data file");
  check_writable_parent(out);
  if (!report.empty()) check_writable_parent(report);
  const auto data = read_dataset_csv(data_path);
  FitOptions opt;
  flags.apply(opt);
  log.info("fitting " + std::to_string(data.num_subjects()) + " subjects on " + std::to_string(data.num_points()) +
           " grid points");
  const FitReport rep = fit_fgfpca(data, opt);
  save_model(out, rep.model);
  const std::string text = fit_report_text(rep.model);
  stdout_ << text;
  if (!report.empty()) {
    auto f = detail::open_out(report);
    f << text;
  }
  for (const auto& w : rep.model.diagnostics.warnings) log.warn(w);
}

inline void cmd_fit_gfosr(const std::string& data_path, Index cutoff, Index lags, double ridge, const std::string& out,
                          const Logger& log) {
  check_readable(data_path, "data file");
  check_writable_parent(out);
  const auto data = read_dataset_csv(data_path);
  GFOSRControls ctl;
  ctl.ridge = ridge;
  const auto mod = fit_gfosr(data, cutoff, lags, ctl);
  save_gfosr(out, mod);
  Index deg = 0;
  for (char c : mod.degenerate) deg += c ? 1 : 0;
  log.info("fitted " + std::to_string(mod.num_future()) + " pointwise regressions (" + std::to_string(deg) +
           " degenerate)");
}

// ---------------------------------------------------------------------------
// predict

struct PredictFlags {
  std::string model, data, out;
  std::vector<Index> cutoff_index;
  std::vector<double> cutoff;
  double level = 0.95;
  std::string interval = "wald";
  int mc_samples = 5000;
};

inline std::vector<Index> resolve_cutoffs(const PredictFlags& f, const RegularGrid& grid) {
  std::vector<Index> cuts = f.cutoff_index;
  for (double c : f.cutoff) {
    if (!(c >= grid.t_min() && c <= grid.t_max()))
      throw Error(ErrorKind::InvalidArgument, "cli", "cutoff " + format_number(c) + " lies outside the grid");
    cuts.push_back(grid.count_upto(c));
  }
  for (Index c : cuts)
    if (c < 0 || c >= grid.size())
      throw Error(ErrorKind::InvalidArgument, "cli", "cutoff index " + std::to_string(c) + " must lie in [0, J)");
  return cuts;
}

inline void cmd_predict(const PredictFlags& f, const Globals& g, const Logger& log) {
  check_readable(f.model, "model file");
  check_readable(f.data, "data file");
  check_writable_parent(f.out);
  std::ifstream min(f.model);
  json j;
  try {
    j = json::parse(min);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::ModelFormatError, "io", std::string("model file is not valid JSON: ") + e.what());
  }
  const std::string format = j.is_object() && j.contains("format_version") && j["format_version"].is_string()
                               ? j["format_version"].get<std::string>()
                               : "";
  const bool is_gfosr = format == kGfosrFormat;
  std::optional<FGFPCAModel> fm;
  std::optional<GFOSRModel> gm;
  if (is_gfosr) gm = gfosr_from_json(j);
  else fm = model_from_json(j);
  const RegularGrid& grid = is_gfosr ? gm->grid : fm->grid;

  GridSpec gs;
  gs.num_points = grid.size();
  gs.t_min = grid.t_min();
  gs.t_max = grid.t_max();
  const auto data = read_dataset_csv(f.data, gs);
  std::vector<Index> cuts = resolve_cutoffs(f, grid);
  const bool own_cutoff = cuts.empty();
  if (own_cutoff) cuts.push_back(-1);

  PredictOptions po;
  po.method = parse_interval_method(f.interval);
  po.level = f.level;
  po.mc.n_samples = f.mc_samples;
  const std::uint64_t seed = g.seed.value_or(1);

  auto out = detail::open_out(f.out);
  write_predictions_header(out);
  const Index N = data.num_subjects(), J = grid.size();
  for (const Index cut : cuts) {
    const FunctionalDataset part = cut < 0 ? data : data.truncated(cut);
    std::vector<std::vector<PredictionRow>> rows(static_cast<std::size_t>(N));
    std::vector<std::vector<std::string>> warnings(static_cast<std::size_t>(N));
    parallel_for(N, [&](Index i) {
      const PartialTrack tr = track_from_dataset(part, i);
      auto& r = rows[static_cast<std::size_t>(i)];
      if (is_gfosr) {
        const VectorXd eta = predict_gfosr(*gm, tr);
        const Interval iv = interval_gfosr_wald(*gm, tr, f.level);
        for (Index t = gm->cutoff; t < J; ++t)
          r.push_back({tr.subject_id, t + 1, eta[t], gm->family.inverse_link(eta[t]), iv.lower[t], iv.upper[t], "gfosr-wald",
                       cut < 0 ? tr.observed() : cut});
      } else {
        PredictOptions local = po;
        local.mc.seed = derive_seed(seed, static_cast<std::uint64_t>(cut + 1), static_cast<std::uint64_t>(i));
        const PredictionResult p = predict_subject(tr, *fm, local);
        for (Index t = p.observed; t < J; ++t)
          r.push_back({tr.subject_id, t + 1, p.eta_hat[t], p.p_hat[t], p.interval.lower[t], p.interval.upper[t],
                       to_string(po.method), cut < 0 ? p.observed : cut});
        warnings[static_cast<std::size_t>(i)] = p.interval.warnings;
      }
    });
    for (Index i = 0; i < N; ++i) {
      for (const auto& r : rows[static_cast<std::size_t>(i)]) write_prediction_row(out, r);
      for (const auto& w : warnings[static_cast<std::size_t>(i)]) log.warn(data.subject_ids[i] + ": " + w);
    }
    log.info("predicted " + std::to_string(N) + " subjects" + (cut < 0 ? std::string() : " from cutoff index " + std::to_string(cut)));
  }
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalCell {
  double ise = 0.0, cov = 0.0;
  int n = 0;
  std::vector<double> score;  // pooled over subjects for the AUC
  std::vector<int> label;
};

inline void cmd_evaluate(const std::string& pred_path, const std::string& truth_path, const std::string& windows_arg,
                         const std::string& out_path, const Logger& log) {
  check_readable(pred_path, "prediction file");
  check_readable(truth_path, "truth file");
  check_writable_parent(out_path);
  const auto windows = windows_arg.empty() ? SimulationConfig{}.windows : parse_windows(windows_arg);
  const auto truth = read_truth_csv(truth_path);
  const auto preds = read_predictions_csv(pred_path);
  const auto& grid = truth.data.grid;
  const Index J = grid.size();
  std::map<std::string, Index> row_of;
  for (Index i = 0; i < truth.data.num_subjects(); ++i) row_of[truth.data.subject_ids[i]] = i;

  // Reassemble tracks keyed by (method, cutoff_index, subject).
  struct Track {
    VectorXd eta, lower, upper;
  };
  std::map<std::tuple<std::string, Index, std::string>, Track> tracks;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : preds) {
    if (!row_of.count(r.subject_id))
      throw Error(ErrorKind::InvalidDataset, "cli", "subject '" + r.subject_id + "' is missing from the truth file");
    if (r.t_index < 1 || r.t_index > J)
      throw Error(ErrorKind::GridMismatch, "cli", "t_index " + std::to_string(r.t_index) + " outside the truth grid");
    auto& tr = tracks[{r.method, r.cutoff_index, r.subject_id}];
    if (tr.eta.size() == 0) {
      tr.eta = tr.lower = tr.upper = VectorXd::Constant(J, nan);
    }
    tr.eta[r.t_index - 1] = r.eta_hat;
    tr.lower[r.t_index - 1] = r.lower;
    tr.upper[r.t_index - 1] = r.upper;
  }

  std::map<std::tuple<std::string, Index, std::size_t>, EvalCell> cells;
  for (const auto& [key, tr] : tracks) {
    const auto& [method, cut, sid] = key;
    const Index i = row_of.at(sid);
    const VectorXd eta_true = truth.eta.row(i).transpose();
    const Eigen::VectorXi y = truth.data.y.row(i).transpose();
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const IndexRange win = window_indices(grid, windows[w].first, windows[w].second);
      if (win.empty()) continue;
      // Only windows the prediction fully covers.
      if (!tr.eta.segment(win.begin, win.size()).allFinite()) continue;
      auto& c = cells[{method, cut, w}];
      c.ise += ise(tr.eta, eta_true, win);
      c.cov += coverage(Interval{tr.lower, tr.upper}, eta_true, win);
      ++c.n;
      for (Index j = win.begin; j < win.end; ++j) {
        c.score.push_back(tr.eta[j]);
        c.label.push_back(y[j]);
      }
    }
  }

  auto out = detail::open_out(out_path);
  out << "method,cutoff_index,window,n_subjects,ise_mean,auc,coverage\n";
  for (const auto& [key, c] : cells) {
    const auto& [method, cut, w] = key;
    out << method << ',' << cut << ",\"" << window_label(windows[w]) << "\"," << c.n << ',' << c.ise / c.n << ',';
    const auto n = static_cast<Index>(c.score.size());
    const auto a = try_auc(Eigen::Map<const VectorXd>(c.score.data(), n),
                           Eigen::Map<const Eigen::VectorXi>(c.label.data(), n), {0, n});
    out << (a ? format_number(*a) : std::string("NA")) << ',' << c.cov / c.n << '\n';
  }
  log.info("evaluated " + std::to_string(tracks.size()) + " predicted tracks");
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkFlags {
  std::string config, out, methods;
  std::optional<int> replicates;
  std::optional<Index> n_train, n_test, J;
  std::optional<int> mc_samples;
  bool no_coverage = false;
  bool no_timings = false;
};

inline std::string csv_real(double v) { return std::isnan(v) ? "NA" : format_number(v); }

inline void write_benchmark(const ExperimentResult& res, const std::string& dir, bool timings) {
  const auto& cfg = res.options.sim;
  auto wl = [&](int w) { return "\"" + window_label(cfg.windows[static_cast<std::size_t>(w)]) + "\""; };
  auto cl = [&](int c) { return format_number(cfg.cutoffs[static_cast<std::size_t>(c)]); };
  auto secs = [&](double s) { return timings ? format_number(s) : std::string("NA"); };

  {
    auto f = detail::open_out((fs::path(dir) / "results.csv").string());
    f << "method,replicate,cutoff,window,ise_mean,auc_mean,fit_seconds,predict_seconds\n";
    for (const auto& r : res.replicates)
      for (const auto& c : r.cells) {
        double fit = 0.0, pred = 0.0;
        for (const auto& t : r.timings)
          if (t.method == c.method) {
            fit = t.fit_seconds;
            pred = t.predict_seconds;
          }
        f << to_string(c.method) << ',' << c.replicate << ',' << cl(c.cutoff) << ',' << wl(c.window) << ','
          << csv_real(c.ise_mean) << ',' << csv_real(c.auc_mean) << ',' << secs(fit) << ',' << secs(pred) << '\n';
      }
  }
  {
    auto f = detail::open_out((fs::path(dir) / "table1.csv").string());
    f << "method,cutoff,window,ise_mean,auc_mean,replicates,auc_replicates\n";
    for (const auto& row : res.table)
      f << to_string(row.method) << ',' << cl(row.cutoff) << ',' << wl(row.window) << ',' << csv_real(row.ise_mean) << ','
        << csv_real(row.auc_mean) << ',' << row.replicates << ',' << row.auc_replicates << '\n';
  }
  {
    auto f = detail::open_out((fs::path(dir) / "coverage.csv").string());
    f << "source,cutoff,t_index,t,coverage\n";
    const VectorXd t = make_grid(cfg.J, 0.0, 1.0).points();
    for (const auto& cc : res.curves)
      for (Index j = 0; j < cc.coverage.size(); ++j)
        if (!std::isnan(cc.coverage[j]))
          f << cc.source << ',' << cl(cc.cutoff) << ',' << j + 1 << ',' << t[j] << ',' << cc.coverage[j] << '\n';
  }
  {
    auto f = detail::open_out((fs::path(dir) / "coverage_windows.csv").string());
    f << "source,replicate,cutoff,window,coverage\n";
    for (const auto& r : res.replicates)
      for (const auto& c : r.coverage)
        f << c.source << ',' << c.replicate << ',' << cl(c.cutoff) << ',' << wl(c.window) << ',' << csv_real(c.coverage) << '\n';
  }
  {
    auto f = detail::open_out((fs::path(dir) / "timings.csv").string());
    f << "method,replicate,fit_seconds,predict_seconds\n";
    for (const auto& r : res.replicates)
      for (const auto& t : r.timings)
        f << to_string(t.method) << ',' << t.replicate << ',' << secs(t.fit_seconds) << ',' << secs(t.predict_seconds) << '\n';
  }
  {
    json m;
    m["format_version"] = "fgfpca-benchmark/1";
    m["seed"] = res.options.seed;
    m["replicates_requested"] = res.options.replicates;
    json done = json::array(), failed = json::array();
    for (const auto& r : res.replicates) {
      if (r.completed) done.push_back(r.replicate);
      else failed.push_back({{"replicate", r.replicate}, {"seed", r.seed}, {"error", r.error}});
    }
    m["completed"] = done;
    m["failed"] = failed;
    json methods = json::array();
    for (const auto meth : res.options.methods) methods.push_back(to_string(meth));
    m["methods"] = methods;
    m["config"] = {{"n_train", cfg.n_train}, {"n_test", cfg.n_test}, {"J", cfg.J}, {"score_variances", cfg.score_variances},
                   {"cutoffs", cfg.cutoffs}};
    json wins = json::array();
    for (const auto& w : cfg.windows) wins.push_back(window_label(w));
    m["config"]["windows"] = wins;
    auto f = detail::open_out((fs::path(dir) / "manifest.json").string());
    f << m.dump(1) << '\n';
  }
}

inline void cmd_benchmark(const BenchmarkFlags& b, const FitFlags& fit, const Globals& g, const Logger& log,
                          const std::set<std::string>& fit_flags_given) {
  ExperimentOptions o;
  apply_config(load_config(b.config), o);
  // Explicit fit flags win over the file.
  FitOptions given;
  fit.apply(given);
  if (fit_flags_given.count("--bin-width")) o.fit.bin_width = given.bin_width;
  if (fit_flags_given.count("--pve")) o.fit.fpca.pve_threshold = given.fpca.pve_threshold;
  if (!b.methods.empty()) {
    o.methods.clear();
    for (const auto& m : split_list(b.methods)) o.methods.push_back(parse_method(m));
  }
  if (b.replicates) o.replicates = *b.replicates;
  if (b.n_train) o.sim.n_train = *b.n_train;
  if (b.n_test) o.sim.n_test = *b.n_test;
  if (b.J) o.sim.J = *b.J;
  if (b.mc_samples) o.mc.n_samples = *b.mc_samples;
  if (b.no_coverage) o.coverage = false;
  if (g.seed) o.seed = *g.seed;
  o.sim.validate();
  ensure_dir(b.out);
  log.info("running " + std::to_string(o.replicates) + " replicates");
  const auto res = run_experiment(o);
  for (const auto& r : res.replicates) {
    if (!r.completed) log.warn("replicate " + std::to_string(r.replicate) + " failed: " + r.error);
    for (const auto& w : r.warnings) log.info("replicate " + std::to_string(r.replicate) + ": " + w);
  }
  write_benchmark(res, b.out, !b.no_timings);
  log.info("completed " + std::to_string(res.completed()) + " of " + std::to_string(o.replicates) + " replicates");
}

// ---------------------------------------------------------------------------

inline std::string quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') q += '\\';
    q += c == '\n' ? ' ' : c;
  }
  return q + "\"";
}

inline int report_error(std::ostream& err, const std::string& kind, const std::string& module, const std::string& msg,
                        int code) {
  err << "error: kind=" << kind << " module=" << module << " exit=" << code << " message=" << quote(msg) << '\n';
  return code;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Fast generalized functional PCA for binary functional data"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Random seed")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", g.threads, "Worker thread cap (0 = hardware)");
  app.add_flag("--verbose,-v", g.verbose, "Progress messages on standard error");
  app.fallthrough();
  Logger log(err, g.verbose);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Draw a synthetic train/test dataset");
  std::string sim_config, sim_out;
  std::optional<Index> sim_ntrain, sim_ntest, sim_J;
  sim->add_option("--config", sim_config, "key=value simulation config");
  sim->add_option("--out", sim_out, "Output directory")->required();
  sim->add_option("--n-train", sim_ntrain, "Training subjects");
  sim->add_option("--n-test", sim_ntest, "Test subjects");
  sim->add_option("--J", sim_J, "Grid size");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit an fGFPCA model to fully observed data");
  std::string fit_data, fit_out, fit_report;
  FitFlags fit_flags;
  fit->add_option("--data", fit_data, "Training CSV")->required();
  fit->add_option("--out", fit_out, "Model JSON")->required();
  fit->add_option("--report", fit_report, "Also write the fit report here");
  fit_flags.add(fit);

  // fit-gfosr
  auto* fg = app.add_subcommand("fit-gfosr", "Fit the lagged-outcome regression baseline");
  std::string fg_data, fg_out;
  Index fg_cut = 0, fg_lags = 5;
  double fg_ridge = 1e-4;
  fg->add_option("--data", fg_data, "Training CSV")->required();
  fg->add_option("--cutoff-index", fg_cut, "Observed points m")->required();
  fg->add_option("--lags", fg_lags, "Number of lagged outcomes L");
  fg->add_option("--ridge", fg_ridge, "Ridge penalty");
  fg->add_option("--out", fg_out, "Model JSON")->required();

  // predict
  auto* pr = app.add_subcommand("predict", "Predict future latent tracks from partial data");
  PredictFlags pf;
  pr->add_option("--model", pf.model, "Model JSON (fgfpca or gfosr)")->required();
  pr->add_option("--data", pf.data, "Partial-track CSV")->required();
  pr->add_option("--cutoff-index", pf.cutoff_index, "Truncate tracks to this many points (repeatable)")->delimiter(',');
  pr->add_option("--cutoff", pf.cutoff, "Truncate tracks at this time (repeatable)")->delimiter(',');
  pr->add_option("--level", pf.level, "Interval level")->check(CLI::Range(0.0, 1.0));
  pr->add_option("--interval", pf.interval, "wald | plugin | mc");
  pr->add_option("--mc-samples", pf.mc_samples, "Total Metropolis draws including burn-in");
  pr->add_option("--out", pf.out, "Predictions CSV")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score predictions against the simulation truth");
  std::string ev_pred, ev_truth, ev_windows, ev_out;
  ev->add_option("--pred", ev_pred, "Predictions CSV")->required();
  ev->add_option("--truth", ev_truth, "Truth CSV from simulate")->required();
  ev->add_option("--windows", ev_windows, "e.g. 0.2:0.4,0.4:0.6");
  ev->add_option("--out", ev_out, "Summary CSV")->required();

  // benchmark
  auto* bm = app.add_subcommand("benchmark", "Run the simulation study");
  BenchmarkFlags bf;
  FitFlags bm_fit;
  bm->add_option("--config", bf.config, "key=value simulation config");
  bm->add_option("--methods", bf.methods, "Comma list of fgfpca, gfosr-l1, gfosr-l5");
  bm->add_option("--replicates", bf.replicates, "Simulation replicates");
  bm->add_option("--n-train", bf.n_train, "Training subjects");
  bm->add_option("--n-test", bf.n_test, "Test subjects");
  bm->add_option("--J", bf.J, "Grid size");
  bm->add_option("--mc-samples", bf.mc_samples, "Metropolis draws per credible interval");
  bm->add_flag("--no-coverage", bf.no_coverage, "Skip interval coverage");
  bm->add_flag("--no-timings", bf.no_timings, "Write NA for wall-clock columns");
  bm->add_option("--out", bf.out, "Results directory")->required();
  bm->add_option("--bin-width", bm_fit.bin_width, "Fine-grid points per bin")->check(CLI::PositiveNumber);
  bm->add_option("--pve", bm_fit.pve, "Cumulative variance explained when picking K");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return kOk;
    return report_error(err, "UsageError", "cli", e.what(), kInputError);
  }
  if (seed_opt->count() > 0) g.seed = seed_value;
  set_max_threads(g.threads);

  try {
    if (sim->parsed()) cmd_simulate(sim_config, sim_out, sim_ntrain, sim_ntest, sim_J, g, log);
    else if (fit->parsed()) cmd_fit(fit_data, fit_out, fit_report, fit_flags, out, log);
    else if (fg->parsed()) cmd_fit_gfosr(fg_data, fg_cut, fg_lags, fg_ridge, fg_out, log);
    else if (pr->parsed()) cmd_predict(pf, g, log);
    else if (ev->parsed()) cmd_evaluate(ev_pred, ev_truth, ev_windows, ev_out, log);
    else if (bm->parsed()) {
      std::set<std::string> given;
      for (const char* name : {"--bin-width", "--pve"})
        if (bm->get_option(name)->count() > 0) given.insert(name);
      cmd_benchmark(bf, bm_fit, g, log, given);
    }
  } catch (const Error& e) {
    return report_error(err, std::string(to_string(e.kind())), e.module(), e.what(),
                        is_numerical(e.kind()) ? kNumericalError : kInputError);
  } catch (const std::exception& e) {
    return report_error(err, "InternalError", "cli", e.what(), kNumericalError);
  }
  return kOk;
}

}  // namespace fgfpca::cli
