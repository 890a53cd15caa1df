#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cli.hpp"

using namespace fgfpca;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fgfpca_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Desk-scale simulated data plus a fitted model, shared by several tests.
  void simulate_and_fit() {
    ASSERT_EQ(run({"--seed", "4", "simulate", "--out", path("sim"), "--n-train", "100", "--n-test", "10"}).code, 0);
    const auto r = run({"fit", "--data", path("sim/train.csv"), "--out", path("model.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    report_ = r.out;
  }

  fs::path dir_;
  std::string report_;
};

}  // namespace

TEST_F(CliTest, EmptyCsvIsAParseError) {
  std::ofstream(path("empty.csv")).close();
  const auto r = run({"fit", "--data", path("empty.csv"), "--out", path("m.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error: kind=ParseError module=io exit=2"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownFlagsAndMissingFilesAreInputErrors) {
  EXPECT_EQ(run({"fit", "--data", path("x.csv"), "--out", path("m.json"), "--frobnicate", "3"}).code, 2);
  EXPECT_EQ(run({"fit", "--data", path("missing.csv"), "--out", path("m.json")}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, ConfigRejectsUnknownKeys) {
  std::ofstream(path("cfg.txt")) << "J = 100\nbogus = 1\n";
  const auto r = run({"simulate", "--config", path("cfg.txt"), "--out", path("sim")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown key 'bogus'"), std::string::npos);
}

TEST_F(CliTest, ConfigValuesAndFlagOverrides) {
  std::ofstream(path("cfg.txt")) << "# desk config\nJ = 60\nn_train = 30\nn_test = 7\n";
  ASSERT_EQ(run({"simulate", "--config", path("cfg.txt"), "--n-test", "5", "--out", path("sim")}).code, 0);
  const auto test = read_dataset_csv(path("sim/test.csv"));
  EXPECT_EQ(test.num_subjects(), 5);
  EXPECT_EQ(test.num_points(), 60);
  EXPECT_EQ(read_dataset_csv(path("sim/train.csv")).num_subjects(), 30);
  const auto truth = read_truth_csv(path("sim/truth.csv"));
  EXPECT_EQ(truth.data.y, test.y);
  EXPECT_TRUE(truth.eta.allFinite());
}

TEST_F(CliTest, SimulateIsIdempotent) {
  ASSERT_EQ(run({"--seed", "9", "simulate", "--out", path("a"), "--J", "50", "--n-train", "20", "--n-test", "5"}).code, 0);
  ASSERT_EQ(run({"--seed", "9", "simulate", "--out", path("b"), "--J", "50", "--n-train", "20", "--n-test", "5"}).code, 0);
  for (const char* f : {"train.csv", "test.csv", "truth.csv"}) EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(CliTest, FitReportsFourComponentsAtDeskScale) {
  simulate_and_fit();
  EXPECT_NE(report_.find("K=4\n"), std::string::npos) << report_;
  EXPECT_NE(report_.find("time.global-refit="), std::string::npos);
  EXPECT_NE(report_.find("lambda="), std::string::npos);
  const auto m = load_model(path("model.json"));
  EXPECT_EQ(m.K, 4);
  EXPECT_GE(m.pve[3], 0.95);
}

TEST_F(CliTest, PredictMultipleCutoffsKeyedByCutoff) {
  simulate_and_fit();
  const auto r = run({"predict", "--model", path("model.json"), "--data", path("sim/test.csv"), "--cutoff",
                      "0.2,0.4,0.6,0.8", "--out", path("pred.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_predictions_csv(path("pred.csv"));
  std::map<Index, int> per_cut;
  for (const auto& row : rows)
    if (row.subject_id == rows.front().subject_id) ++per_cut[row.cutoff_index];
  ASSERT_EQ(per_cut.size(), 4u);
  const auto grid = make_grid(250, 0.0, 1.0);
  for (double c : {0.2, 0.4, 0.6, 0.8}) {
    const Index m = grid.count_upto(c);
    EXPECT_EQ(per_cut[m], 250 - m);
  }
  for (const auto& row : rows) {
    EXPECT_GT(row.t_index, row.cutoff_index);
    EXPECT_LE(row.lower, row.eta_hat);
    EXPECT_GE(row.upper, row.eta_hat);
    EXPECT_EQ(row.method, "wald-hessian");
  }
}

TEST_F(CliTest, EmptyHistoryPredictsPopulationMean) {
  simulate_and_fit();
  ASSERT_EQ(run({"predict", "--model", path("model.json"), "--data", path("sim/test.csv"), "--cutoff-index", "0",
                 "--interval", "plugin", "--out", path("pred.csv")})
                .code,
            0);
  const auto m = load_model(path("model.json"));
  for (const auto& row : read_predictions_csv(path("pred.csv")))
    EXPECT_NEAR(row.eta_hat, m.f0[row.t_index - 1], 1e-10);
}

TEST_F(CliTest, PredictionsFromLoadedModelMatchInMemory) {
  ASSERT_EQ(run({"--seed", "4", "simulate", "--out", path("sim"), "--n-train", "100", "--n-test", "10"}).code, 0);
  const auto train = read_dataset_csv(path("sim/train.csv"));
  const auto model = fit_fgfpca(train).model;
  save_model(path("model.json"), model);
  ASSERT_EQ(run({"predict", "--model", path("model.json"), "--data", path("sim/test.csv"), "--cutoff-index", "120",
                 "--out", path("pred.csv")})
                .code,
            0);
  const auto test = read_dataset_csv(path("sim/test.csv")).truncated(120);
  const auto rows = read_predictions_csv(path("pred.csv"));
  std::size_t k = 0;
  for (Index i = 0; i < test.num_subjects(); ++i) {
    const auto p = predict_subject(track_from_dataset(test, i), model);
    for (Index t = 120; t < 250; ++t, ++k) {
      ASSERT_LT(k, rows.size());
      EXPECT_NEAR(rows[k].eta_hat, p.eta_hat[t], 1e-12);
      EXPECT_NEAR(rows[k].lower, p.interval.lower[t], 1e-12);
      EXPECT_NEAR(rows[k].upper, p.interval.upper[t], 1e-12);
    }
  }
  EXPECT_EQ(k, rows.size());
}

TEST_F(CliTest, GridMismatchIsReported) {
  simulate_and_fit();
  ASSERT_EQ(run({"--seed", "4", "simulate", "--out", path("big"), "--J", "300", "--n-train", "5", "--n-test", "2"}).code, 0);
  const auto r = run({"predict", "--model", path("model.json"), "--data", path("big/test.csv"), "--cutoff-index", "10",
                      "--out", path("pred.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("kind=GridMismatch"), std::string::npos) << r.err;
}

TEST_F(CliTest, FullyObservedTrackHasNothingToPredict) {
  simulate_and_fit();
  const auto r = run({"predict", "--model", path("model.json"), "--data", path("sim/test.csv"), "--out", path("p.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("kind=InvalidDataset"), std::string::npos);
}

TEST_F(CliTest, NumericalFailureExitsWithThree) {
  // Every outcome is zero, so no bin carries any variation.
  FunctionalDataset d;
  d.grid = make_grid(100, 0.0, 1.0);
  d.y = Eigen::MatrixXi::Zero(40, 100);
  for (int i = 0; i < 40; ++i) {
    d.subject_ids.push_back("s" + std::to_string(i));
    d.observed_upto.push_back(100);
  }
  write_dataset_csv(path("zeros.csv"), d);
  const auto r = run({"fit", "--data", path("zeros.csv"), "--out", path("m.json")});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("error: kind="), std::string::npos);
}

TEST_F(CliTest, GfosrFitPredictEvaluate) {
  ASSERT_EQ(run({"--seed", "4", "simulate", "--out", path("sim"), "--n-train", "100", "--n-test", "10"}).code, 0);
  ASSERT_EQ(run({"fit-gfosr", "--data", path("sim/train.csv"), "--cutoff-index", "100", "--lags", "5", "--out",
                 path("g.json")})
                .code,
            0);
  ASSERT_EQ(run({"predict", "--model", path("g.json"), "--data", path("sim/test.csv"), "--cutoff-index", "100",
                 "--out", path("gp.csv")})
                .code,
            0);
  const auto rows = read_predictions_csv(path("gp.csv"));
  EXPECT_EQ(rows.size(), 10u * 150u);
  EXPECT_EQ(rows.front().method, "gfosr-wald");
  EXPECT_EQ(run({"fit-gfosr", "--data", path("sim/train.csv"), "--cutoff-index", "3", "--lags", "5", "--out",
                 path("bad.json")})
                .code,
            2);
  const auto r = run({"evaluate", "--pred", path("gp.csv"), "--truth", path("sim/truth.csv"), "--windows",
                      "0.4:0.6,0.6:0.8,0.8:1.0", "--out", path("eval.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path("eval.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1 + 3);
}

TEST_F(CliTest, EvaluateMatchesLibraryMetrics) {
  simulate_and_fit();
  ASSERT_EQ(run({"predict", "--model", path("model.json"), "--data", path("sim/test.csv"), "--cutoff", "0.6",
                 "--out", path("pred.csv")})
                .code,
            0);
  ASSERT_EQ(run({"evaluate", "--pred", path("pred.csv"), "--truth", path("sim/truth.csv"), "--windows", "(0.8,1.0]",
                 "--out", path("eval.csv")})
                .code,
            0);
  const auto model = load_model(path("model.json"));
  const auto truth = read_truth_csv(path("sim/truth.csv"));
  const Index m = truth.data.grid.count_upto(0.6);
  const auto part = truth.data.truncated(m);
  const auto win = window_indices(truth.data.grid, 0.8, 1.0);
  double total = 0.0;
  for (Index i = 0; i < part.num_subjects(); ++i)
    total += ise(predict_subject(track_from_dataset(part, i), model).eta_hat, truth.eta.row(i).transpose(), win);
  std::ifstream in(path("eval.csv"));
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  const auto cells = cli::split_list(line);
  ASSERT_GE(cells.size(), 6u);
  EXPECT_EQ(cells[1], std::to_string(m));
  EXPECT_NEAR(std::stod(cells[5]), total / part.num_subjects(), 1e-9);
}

TEST_F(CliTest, BenchmarkIsDeterministicByDigest) {
  std::ofstream(path("cfg.txt")) << "J = 100\nn_train = 60\nn_test = 15\nreplicates = 2\nmc_samples = 1000\n";
  ASSERT_EQ(run({"--seed", "2", "benchmark", "--config", path("cfg.txt"), "--no-timings", "--out", path("a")}).code, 0);
  ASSERT_EQ(run({"--seed", "2", "--threads", "1", "benchmark", "--config", path("cfg.txt"), "--no-timings", "--out",
                 path("b")})
                .code,
            0);
  for (const char* f : {"results.csv", "table1.csv", "coverage.csv", "coverage_windows.csv", "timings.csv", "manifest.json"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  // Ten filled cells per method.
  std::ifstream in(path("a/table1.csv"));
  std::string line;
  std::map<std::string, int> per_method;
  std::getline(in, line);
  while (std::getline(in, line)) ++per_method[line.substr(0, line.find(','))];
  EXPECT_EQ(per_method.size(), 3u);
  for (const auto& [m, n] : per_method) EXPECT_EQ(n, 10) << m;
}

TEST_F(CliTest, BenchmarkMethodFilter) {
  ASSERT_EQ(run({"benchmark", "--methods", "fgfpca", "--J", "100", "--n-train", "60", "--n-test", "10", "--replicates",
                 "1", "--no-coverage", "--out", path("r")})
                .code,
            0);
  std::ifstream in(path("r/table1.csv"));
  std::string line;
  std::getline(in, line);
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.rfind("fgfpca,", 0), 0u);
    ++n;
  }
  EXPECT_EQ(n, 10);
  EXPECT_EQ(run({"benchmark", "--methods", "glmm", "--out", path("r2")}).code, 2);
}
