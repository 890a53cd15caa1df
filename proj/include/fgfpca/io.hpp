#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fgfpca/core.hpp"
#include "fgfpca/gfosr.hpp"

namespace fgfpca {

inline constexpr const char* kModelFormat = "fgfpca-model/1";
inline constexpr const char* kGfosrFormat = "fgfpca-gfosr/1";

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline long parse_long(const std::string& s, const std::string& what, std::size_t line) {
  long v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw Error(ErrorKind::ParseError, "io", "line " + std::to_string(line) + ": " + what + " '" + s + "' is not an integer");
  return v;
}

inline double parse_double(const std::string& s, const std::string& what, std::size_t line) {
  if (s == "NA" || s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::ParseError, "io", "line " + std::to_string(line) + ": " + what + " '" + s + "' is not a number");
  }
}

// Maps header names to column positions and checks that `required` exist.
inline std::unordered_map<std::string, std::size_t> header_index(const std::string& header,
                                                                  const std::vector<std::string>& required) {
  std::unordered_map<std::string, std::size_t> idx;
  const auto cols = split_csv_line(header);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::string name = cols[c];
    if (c == 0 && name.size() >= 3 && name.compare(0, 3, "\xEF\xBB\xBF") == 0) name = name.substr(3);
    idx[name] = c;
  }
  for (const auto& r : required)
    if (!idx.count(r)) throw Error(ErrorKind::ParseError, "io", "header lacks column '" + r + "'");
  return idx;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ParseError, "io", "cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "io", "cannot write '" + path + "'");
  out.precision(17);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Long-format dataset CSV: subject_id, t_index (1-based), y.

struct GridSpec {
  std::optional<Index> num_points;  // inferred from the largest t_index when absent
  double t_min = 0.0;
  double t_max = 1.0;
};

inline FunctionalDataset read_dataset_csv(std::istream& in, const GridSpec& gs = {}) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw Error(ErrorKind::ParseError, "io", "dataset is empty");
  const auto idx = detail::header_index(line, {"subject_id", "t_index", "y"});
  const std::size_t cs = idx.at("subject_id"), ct = idx.at("t_index"), cy = idx.at("y");
  const std::size_t need = std::max({cs, ct, cy}) + 1;

  std::vector<std::string> order;
  std::unordered_map<std::string, std::map<long, int>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() < need)
      throw Error(ErrorKind::ParseError, "io", "line " + std::to_string(lineno) + ": expected at least " +
                                                   std::to_string(need) + " columns");
    const std::string& id = cells[cs];
    if (id.empty()) throw Error(ErrorKind::ParseError, "io", "line " + std::to_string(lineno) + ": empty subject_id");
    const long t = detail::parse_long(cells[ct], "t_index", lineno);
    const long y = detail::parse_long(cells[cy], "y", lineno);
    if (t < 1) throw Error(ErrorKind::ParseError, "io", "line " + std::to_string(lineno) + ": t_index must be >= 1");
    auto [it, fresh] = rows.try_emplace(id);
    if (fresh) order.push_back(id);
    if (!it->second.emplace(t, static_cast<int>(y)).second)
      throw Error(ErrorKind::ParseError, "io",
                  "line " + std::to_string(lineno) + ": duplicate t_index " + std::to_string(t) + " for " + id);
  }
  if (order.empty()) throw Error(ErrorKind::ParseError, "io", "dataset has no rows");

  long max_t = 0;
  for (const auto& [id, m] : rows) max_t = std::max(max_t, m.rbegin()->first);
  const Index J = gs.num_points.value_or(max_t);
  if (max_t > J)
    throw Error(ErrorKind::GridMismatch, "io",
                "t_index " + std::to_string(max_t) + " exceeds the grid size " + std::to_string(J));

  FunctionalDataset d;
  d.grid = make_grid(J, gs.t_min, gs.t_max);
  d.y = Eigen::MatrixXi::Constant(static_cast<Index>(order.size()), J, kMissing);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& m = rows.at(order[i]);
    const Index ju = static_cast<Index>(m.size());
    if (m.rbegin()->first != ju)
      throw Error(ErrorKind::ParseError, "io", "t_index values for subject " + order[i] + " are not contiguous from 1");
    for (const auto& [t, y] : m) d.y(static_cast<Index>(i), t - 1) = y;
    d.subject_ids.push_back(order[i]);
    d.observed_upto.push_back(ju);
  }
  d.validate();
  return d;
}

inline FunctionalDataset read_dataset_csv(const std::string& path, const GridSpec& gs = {}) {
  auto in = detail::open_in(path);
  return read_dataset_csv(in, gs);
}

inline void write_dataset_csv(std::ostream& out, const FunctionalDataset& d) {
  out << "subject_id,t_index,y\n";
  for (Index i = 0; i < d.num_subjects(); ++i)
    for (Index j = 0; j < d.observed_upto[i]; ++j) out << d.subject_ids[i] << ',' << j + 1 << ',' << d.y(i, j) << '\n';
}

inline void write_dataset_csv(const std::string& path, const FunctionalDataset& d) {
  auto out = detail::open_out(path);
  write_dataset_csv(out, d);
}

// Simulation truth: the observed outcomes alongside the latent values.
inline void write_truth_csv(std::ostream& out, const FunctionalDataset& d, const MatrixXd& eta) {
  out.precision(17);
  out << "subject_id,t_index,t,y,eta\n";
  for (Index i = 0; i < d.num_subjects(); ++i)
    for (Index j = 0; j < d.num_points(); ++j)
      out << d.subject_ids[i] << ',' << j + 1 << ',' << d.grid.points()[j] << ',' << d.y(i, j) << ',' << eta(i, j)
          << '\n';
}

struct TruthTable {
  FunctionalDataset data;
  MatrixXd eta;  // subjects x J
};

inline TruthTable read_truth_csv(std::istream& in, const GridSpec& gs = {}) {
  std::stringstream ds;
  ds << "subject_id,t_index,y\n";
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw Error(ErrorKind::ParseError, "io", "truth file is empty");
  const auto idx = detail::header_index(line, {"subject_id", "t_index", "y", "eta"});
  const std::size_t cs = idx.at("subject_id"), ct = idx.at("t_index"), cy = idx.at("y"), ce = idx.at("eta");
  std::vector<std::tuple<std::string, long, double>> etas;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() <= std::max({cs, ct, cy, ce}))
      throw Error(ErrorKind::ParseError, "io", "line " + std::to_string(lineno) + ": too few columns");
    ds << c[cs] << ',' << c[ct] << ',' << c[cy] << '\n';
    etas.emplace_back(c[cs], detail::parse_long(c[ct], "t_index", lineno), detail::parse_double(c[ce], "eta", lineno));
  }
  TruthTable tt;
  tt.data = read_dataset_csv(ds, gs);
  std::unordered_map<std::string, Index> row;
  for (Index i = 0; i < tt.data.num_subjects(); ++i) row[tt.data.subject_ids[i]] = i;
  tt.eta = MatrixXd::Constant(tt.data.num_subjects(), tt.data.num_points(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& [id, t, e] : etas) tt.eta(row.at(id), t - 1) = e;
  return tt;
}

inline TruthTable read_truth_csv(const std::string& path, const GridSpec& gs = {}) {
  auto in = detail::open_in(path);
  return read_truth_csv(in, gs);
}

// ---------------------------------------------------------------------------
// Predictions CSV.

struct PredictionRow {
  std::string subject_id;
  Index t_index = 0;  // 1-based
  double eta_hat = 0, p_hat = 0, lower = 0, upper = 0;
  std::string method;
  Index cutoff_index = 0;
};

inline void write_predictions_header(std::ostream& out) {
  out << "subject_id,t_index,eta_hat,p_hat,lower,upper,method,cutoff_index\n";
}

inline void write_prediction_row(std::ostream& out, const PredictionRow& r) {
  out << r.subject_id << ',' << r.t_index << ',' << r.eta_hat << ',' << r.p_hat << ',' << r.lower << ',' << r.upper
      << ',' << r.method << ',' << r.cutoff_index << '\n';
}

inline std::vector<PredictionRow> read_predictions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw Error(ErrorKind::ParseError, "io", "prediction file is empty");
  const auto idx = detail::header_index(line, {"subject_id", "t_index", "eta_hat", "p_hat", "lower", "upper", "method"});
  const auto cut = idx.find("cutoff_index");
  std::vector<PredictionRow> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() < idx.size()) throw Error(ErrorKind::ParseError, "io", "line " + std::to_string(lineno) + ": too few columns");
    PredictionRow r;
    r.subject_id = c[idx.at("subject_id")];
    r.t_index = detail::parse_long(c[idx.at("t_index")], "t_index", lineno);
    r.eta_hat = detail::parse_double(c[idx.at("eta_hat")], "eta_hat", lineno);
    r.p_hat = detail::parse_double(c[idx.at("p_hat")], "p_hat", lineno);
    r.lower = detail::parse_double(c[idx.at("lower")], "lower", lineno);
    r.upper = detail::parse_double(c[idx.at("upper")], "upper", lineno);
    r.method = c[idx.at("method")];
    r.cutoff_index = cut == idx.end() ? 0 : detail::parse_long(c[cut->second], "cutoff_index", lineno);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<PredictionRow> read_predictions_csv(const std::string& path) {
  auto in = detail::open_in(path);
  return read_predictions_csv(in);
}

// ---------------------------------------------------------------------------
// Model JSON.

using json = nlohmann::json;

namespace detail {

inline json to_json(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline VectorXd vector_from(const json& j, const char* what, const std::string& module) {
  if (!j.is_array()) throw Error(ErrorKind::ModelFormatError, module, std::string(what) + " must be an array");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::ModelFormatError, module, std::string(what) + " holds a non-number");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json grid_json(const RegularGrid& g) { return {{"J", g.size()}, {"t_min", g.t_min()}, {"t_max", g.t_max()}}; }

inline RegularGrid grid_from(const json& j, const std::string& module) {
  try {
    return make_grid(j.at("J").get<Index>(), j.at("t_min").get<double>(), j.at("t_max").get<double>());
  } catch (const Error& e) {
    throw Error(ErrorKind::ModelFormatError, module, std::string("invalid grid: ") + e.what());
  }
}

template <typename Fn>
auto guarded(const std::string& module, Fn&& fn) {
  try {
    return fn();
  } catch (const Error&) {
    throw;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ModelFormatError, module, e.what());
  }
}

}  // namespace detail

inline json model_to_json(const FGFPCAModel& m) {
  json phi = json::array();
  for (Index k = 0; k < m.K; ++k) phi.push_back(detail::to_json(m.phi.col(k)));
  const auto& d = m.diagnostics;
  json timings = json::object();
  for (const auto& [name, sec] : d.timings) timings[name] = sec;
  return {{"format_version", kModelFormat},
          {"family", m.family.name()},
          {"grid", detail::grid_json(m.grid)},
          {"f0", detail::to_json(m.f0)},
          {"K", m.K},
          {"phi", phi},
          {"lambda", detail::to_json(m.lambda)},
          {"pve", detail::to_json(m.pve)},
          {"binning", {{"bin_width", m.bin_width}}},
          {"diagnostics",
           {{"local_bins", d.local_bins},
            {"degenerate_bins", d.degenerate_bins},
            {"nonconverged_bins", d.nonconverged_bins},
            {"residual_variance", d.residual_variance},
            {"cov_smoothing", d.cov_smoothing},
            {"f0_smoothing", d.f0_smoothing},
            {"outer_iterations", d.outer_iterations},
            {"converged", d.converged},
            {"objective_trace", d.objective_trace},
            {"warnings", d.warnings},
            {"timings", timings}}}};
}

inline FGFPCAModel model_from_json(const json& j) {
  const std::string mod = "fd-core";
  return detail::guarded(mod, [&] {
    if (!j.is_object()) throw Error(ErrorKind::ModelFormatError, mod, "model must be a JSON object");
    const auto version = j.at("format_version").get<std::string>();
    if (version != kModelFormat)
      throw Error(ErrorKind::ModelFormatError, mod, "unsupported model format '" + version + "'");
    FGFPCAModel m;
    try {
      m.family = Family::from_name(j.at("family").get<std::string>());
    } catch (const Error& e) {
      throw Error(ErrorKind::ModelFormatError, mod, e.what());
    }
    m.grid = detail::grid_from(j.at("grid"), mod);
    m.f0 = detail::vector_from(j.at("f0"), "f0", mod);
    m.K = j.at("K").get<Index>();
    const auto& phi = j.at("phi");
    if (!phi.is_array() || static_cast<Index>(phi.size()) != m.K)
      throw Error(ErrorKind::ModelFormatError, mod, "phi must hold K arrays");
    m.phi.resize(m.grid.size(), m.K);
    for (Index k = 0; k < m.K; ++k) {
      const VectorXd col = detail::vector_from(phi[static_cast<std::size_t>(k)], "phi", mod);
      if (col.size() != m.grid.size()) throw Error(ErrorKind::ModelFormatError, mod, "phi column length differs from J");
      m.phi.col(k) = col;
    }
    m.lambda = detail::vector_from(j.at("lambda"), "lambda", mod);
    m.pve = detail::vector_from(j.at("pve"), "pve", mod);
    m.bin_width = j.at("binning").at("bin_width").get<Index>();
    if (j.contains("diagnostics")) {
      const auto& d = j.at("diagnostics");
      auto& o = m.diagnostics;
      o.local_bins = d.value("local_bins", 0);
      o.degenerate_bins = d.value("degenerate_bins", 0);
      o.nonconverged_bins = d.value("nonconverged_bins", 0);
      o.residual_variance = d.value("residual_variance", 0.0);
      o.cov_smoothing = d.value("cov_smoothing", 0.0);
      o.f0_smoothing = d.value("f0_smoothing", 0.0);
      o.outer_iterations = d.value("outer_iterations", 0);
      o.converged = d.value("converged", false);
      o.objective_trace = d.value("objective_trace", std::vector<double>{});
      o.warnings = d.value("warnings", std::vector<std::string>{});
      if (d.contains("timings"))
        for (const auto& [name, sec] : d.at("timings").items()) o.timings.emplace_back(name, sec.get<double>());
    }
    m.validate();
    return m;
  });
}

inline std::string serialize_model(const FGFPCAModel& m) { return model_to_json(m).dump(1); }

inline FGFPCAModel deserialize_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ModelFormatError, "fd-core", std::string("malformed model file: ") + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const std::string& path, const FGFPCAModel& m) {
  auto out = detail::open_out(path);
  out << serialize_model(m) << '\n';
}

inline FGFPCAModel load_model(const std::string& path) {
  auto in = detail::open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

// ---------------------------------------------------------------------------
// GFOSR model JSON.

inline json gfosr_to_json(const GFOSRModel& m) {
  json coef = json::array(), info = json::array();
  for (Index f = 0; f < m.num_future(); ++f) {
    coef.push_back(detail::to_json(m.coef.row(f).transpose()));
    const MatrixXd& V = m.inv_info[static_cast<std::size_t>(f)];
    info.push_back(detail::to_json(Eigen::Map<const VectorXd>(V.data(), V.size())));
  }
  std::vector<int> degenerate(m.degenerate.begin(), m.degenerate.end());
  return {{"format_version", kGfosrFormat},
          {"family", m.family.name()},
          {"grid", detail::grid_json(m.grid)},
          {"cutoff_index", m.cutoff},
          {"lags", m.lags},
          {"ridge", m.ridge},
          {"eta_max", m.eta_max},
          {"coef", coef},
          {"inv_info", info},
          {"degenerate", degenerate},
          {"iterations", m.iterations}};
}

inline GFOSRModel gfosr_from_json(const json& j) {
  const std::string mod = "gfosr";
  return detail::guarded(mod, [&] {
    const auto version = j.at("format_version").get<std::string>();
    if (version != kGfosrFormat)
      throw Error(ErrorKind::ModelFormatError, mod, "unsupported GFOSR format '" + version + "'");
    GFOSRModel m;
    m.family = Family::from_name(j.at("family").get<std::string>());
    m.grid = detail::grid_from(j.at("grid"), mod);
    m.cutoff = j.at("cutoff_index").get<Index>();
    m.lags = j.at("lags").get<Index>();
    m.ridge = j.at("ridge").get<double>();
    m.eta_max = j.at("eta_max").get<double>();
    const Index F = m.grid.size() - m.cutoff, P = m.lags + 1;
    if (m.lags < 1 || m.lags > m.cutoff || F < 1)
      throw Error(ErrorKind::ModelFormatError, mod, "cutoff and lag count are inconsistent with the grid");
    const auto& coef = j.at("coef");
    const auto& info = j.at("inv_info");
    if (static_cast<Index>(coef.size()) != F || static_cast<Index>(info.size()) != F)
      throw Error(ErrorKind::ModelFormatError, mod, "one coefficient vector per future point is required");
    m.coef.resize(F, P);
    for (Index f = 0; f < F; ++f) {
      const VectorXd c = detail::vector_from(coef[static_cast<std::size_t>(f)], "coef", mod);
      const VectorXd v = detail::vector_from(info[static_cast<std::size_t>(f)], "inv_info", mod);
      if (c.size() != P || v.size() != P * P) throw Error(ErrorKind::ModelFormatError, mod, "coefficient block has the wrong size");
      m.coef.row(f) = c.transpose();
      m.inv_info.push_back(Eigen::Map<const MatrixXd>(v.data(), P, P));
    }
    for (int d : j.at("degenerate").get<std::vector<int>>()) m.degenerate.push_back(static_cast<char>(d));
    m.iterations = j.value("iterations", std::vector<int>(static_cast<std::size_t>(F), 0));
    if (static_cast<Index>(m.degenerate.size()) != F)
      throw Error(ErrorKind::ModelFormatError, mod, "degenerate flags do not match the future points");
    if (!m.coef.allFinite()) throw Error(ErrorKind::ModelFormatError, mod, "coefficients must be finite");
    return m;
  });
}

inline void save_gfosr(const std::string& path, const GFOSRModel& m) {
  auto out = detail::open_out(path);
  out << gfosr_to_json(m).dump(1) << '\n';
}

inline GFOSRModel load_gfosr(const std::string& path) {
  auto in = detail::open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ModelFormatError, "gfosr", std::string("malformed GFOSR file: ") + e.what());
  }
  return gfosr_from_json(j);
}

}  // namespace fgfpca
