#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "covreg/config.hpp"
#include "covreg/errors.hpp"
#include "covreg/harness.hpp"
#include "covreg/report.hpp"

using namespace covreg;
namespace fs = std::filesystem;

namespace {

ExperimentConfig config_from(const std::vector<std::string>& overrides) {
  ConfigTree t = ConfigTree::parse("version = 1\n");
  for (const auto& o : overrides) t.apply_override(o);
  return ExperimentConfig::from_tree(t);
}

// Small traffic run: a few seconds at most.
ExperimentConfig small_stgcn(double lambda) {
  return config_from({"--data.n_nodes=8", "--data.t_total=400", "--optimizer.epochs=2",
                      "--covloss.lambda=" + std::to_string(lambda), "--diagnostics.pair_samples=2000"});
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / "covreg_test_harness" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(COVREG_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Numeric comparison of two JSON trees with a relative tolerance.
void expect_json_near(const Json& a, const Json& b, double rtol, const std::string& path = "") {
  ASSERT_EQ(a.type(), b.type()) << path;
  if (a.is_object()) {
    ASSERT_EQ(a.size(), b.size()) << path;
    for (auto it = a.begin(); it != a.end(); ++it) {
      ASSERT_TRUE(b.contains(it.key())) << path + "." + it.key();
      expect_json_near(it.value(), b.at(it.key()), rtol, path + "." + it.key());
    }
  } else if (a.is_array()) {
    ASSERT_EQ(a.size(), b.size()) << path;
    for (std::size_t i = 0; i < a.size(); ++i) expect_json_near(a[i], b[i], rtol, path + "[" + std::to_string(i) + "]");
  } else if (a.is_number_float()) {
    const double x = a.get<double>(), y = b.get<double>();
    EXPECT_LE(std::abs(x - y), rtol * std::max({1.0, std::abs(x), std::abs(y)})) << path;
  } else {
    EXPECT_EQ(a, b) << path;
  }
}

}  // namespace

TEST(Harness, SmokeRunProducesFiniteResults) {
  const RunResult r = train(small_stgcn(1.0), 0);
  EXPECT_EQ(r.model, "stgcn_lite");
  EXPECT_EQ(r.epochs_run, 2u);
  EXPECT_EQ(r.train_loss.size(), 2u);
  EXPECT_TRUE(std::isfinite(r.test.rmse));
  EXPECT_GT(r.steps, 0u);
  ASSERT_TRUE(r.cross_term.has_value());
  EXPECT_GE(r.cross_term->zero_fraction, 0.0);
  EXPECT_LE(r.cross_term->zero_fraction, 1.0);
  ASSERT_TRUE(r.alignment.has_value());
  EXPECT_GT(r.alignment->initial_gap, 0.0);
  EXPECT_EQ(r.horizons.size(), 3u);
}

TEST(Harness, ResultJsonIsDeterministicWithoutTiming) {
  const ExperimentConfig cfg = small_stgcn(1.0);
  const Json a = without_timing(to_json(train(cfg, 5)));
  const Json b = without_timing(to_json(train(cfg, 5)));
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_FALSE(a.contains("timing"));
  EXPECT_NE(a.dump(), without_timing(to_json(train(cfg, 6))).dump());
}

TEST(Harness, ZeroLambdaTrajectoryEqualsPureMse) {
  struct Log {
    std::vector<double> losses;
    std::vector<Params> params;
  };
  auto record = [](Log& log) {
    TrainHooks h;
    h.on_step = [&log](const StepRecord& s) {
      log.losses.push_back(s.loss);
      log.params.push_back(*s.params);
    };
    return h;
  };
  ExperimentConfig cov = small_stgcn(0.0);
  ExperimentConfig mse = cov;
  mse.objective = Objective::Mse;
  Log a, b;
  const TrainHooks ha = record(a), hb = record(b);
  const RunResult ra = train(cov, 2, &ha), rb = train(mse, 2, &hb);
  ASSERT_EQ(a.losses.size(), b.losses.size());
  ASSERT_GT(a.losses.size(), 0u);
  for (std::size_t i = 0; i < a.losses.size(); ++i) {
    ASSERT_EQ(std::memcmp(&a.losses[i], &b.losses[i], sizeof(double)), 0) << "step " << i;
    ASSERT_TRUE(a.params[i] == b.params[i]) << "step " << i;
  }
  EXPECT_TRUE(ra.params == rb.params);
  EXPECT_EQ(ra.test.rmse, rb.test.rmse);
}

TEST(Harness, LoggedLossMatchesBatchObjective) {
  const ExperimentConfig cfg = small_stgcn(1.0);
  std::vector<double> losses;
  std::vector<Params> params;
  std::vector<WindowedBatch> batches;
  TrainHooks h;
  h.on_step = [&](const StepRecord& s) {
    if (losses.size() >= 3) return;
    losses.push_back(s.loss);
    params.push_back(*s.params);
    batches.push_back(*s.batch);
  };
  train(cfg, 1, &h);
  ASSERT_EQ(losses.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(batch_objective(cfg, 1, params[i], batches[i]), losses[i]);
}

TEST(Harness, EvaluateReproducesTrainedMetricsThroughCheckpoint) {
  const ExperimentConfig cfg = small_stgcn(1.0);
  const RunResult r = train(cfg, 3);
  const fs::path dir = temp_dir("ckpt");
  save_params(dir / "model.ckpt", r.params);
  const RunResult e = evaluate(cfg, 3, load_params(dir / "model.ckpt"));
  EXPECT_EQ(e.test.rmse, r.test.rmse);
  EXPECT_EQ(e.test.mae, r.test.mae);
  ASSERT_TRUE(e.median_correlation && r.median_correlation);
  EXPECT_EQ(*e.median_correlation, *r.median_correlation);
}

TEST(Harness, DiagnoseBundleMatchesRunSummary) {
  const ExperimentConfig cfg = small_stgcn(1.0);
  const RunResult r = train(cfg, 0);
  const DiagnosticsBundle b = diagnose(cfg, 0, r.params);
  EXPECT_EQ(b.cross_term.zero_fraction, r.cross_term->zero_fraction);
  EXPECT_EQ(b.cross_term.epsilon, r.cross_term->epsilon);
  EXPECT_FALSE(b.basis.time_index.empty());
  EXPECT_FALSE(b.alignment.frobenius_gap.empty());
}

TEST(Harness, ToyMlpReportsAccuracyAndGram) {
  const ExperimentConfig cfg =
      config_from({"--experiment.model=mlp", "--data.source=toy", "--optimizer.epochs=5", "--covloss.lambda=1"});
  const RunResult r = train(cfg, 0);
  ASSERT_TRUE(r.accuracy.has_value());
  EXPECT_GE(*r.accuracy, 0.0);
  EXPECT_LE(*r.accuracy, 1.0);
  ASSERT_TRUE(r.gram_same_class && r.gram_cross_class);
  EXPECT_TRUE(std::isfinite(*r.gram_same_class));
}

TEST(Harness, LambdaSweepRowsAndCsv) {
  ExperimentConfig cfg = small_stgcn(1.0);
  cfg.train.epochs = 1;
  cfg.sweep.axis = SweepAxis::Lambda;
  cfg.sweep.values = {0, 1};
  cfg.seeds = {0, 1};
  const SweepResult s = sweep(cfg);
  EXPECT_EQ(s.cells.size(), 4u);
  ASSERT_EQ(s.rows.size(), 2u);
  EXPECT_EQ(s.rows[0].n_seeds, 2u);
  EXPECT_EQ(s.rows[1].lambda, 1.0);
  const std::string csv = sweep_csv(s);
  std::string header;
  for (std::size_t i = 0; i < sweep_csv_header().size(); ++i) header += (i ? "," : "") + sweep_csv_header()[i];
  EXPECT_EQ(csv.substr(0, csv.find('\n')), header);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Harness, SweepIsThreadCountInvariant) {
  ExperimentConfig cfg = small_stgcn(1.0);
  cfg.train.epochs = 1;
  cfg.sweep.axis = SweepAxis::Lambda;
  cfg.sweep.values = {0, 0.5, 1};
  const SweepResult one = sweep(cfg);
  cfg.sweep.threads = 3;
  const SweepResult three = sweep(cfg);
  ASSERT_EQ(one.cells.size(), three.cells.size());
  for (std::size_t i = 0; i < one.cells.size(); ++i)
    EXPECT_EQ(without_timing(to_json(one.cells[i].result)).dump(), without_timing(to_json(three.cells[i].result)).dump());
}

TEST(Harness, LineEpisodesAreDeterministic) {
  CnpTaskConfig task;
  const CnpEpisode a = make_line_episode(task, 7), b = make_line_episode(task, 7);
  EXPECT_EQ(a.ctx.context_x, b.ctx.context_x);
  EXPECT_EQ(a.target_y, b.target_y);
  EXPECT_GE(a.ctx.context_x.rows(), task.min_context);
  EXPECT_LE(a.ctx.context_x.rows(), task.max_context);
}

TEST(Harness, SmallCnpComparisonRuns) {
  const ExperimentConfig cfg =
      config_from({"--experiment.model=cnp", "--data.source=line_curves", "--experiment.objective=nll_vs_cov_ab",
                   "--cnp.train_steps=50", "--cnp.eval_episodes=10"});
  const CnpComparison c = run_cnp_comparison(cfg, 0);
  ASSERT_TRUE(c.nll_arm.nll && c.cov_arm.nll);
  EXPECT_TRUE(std::isfinite(c.gp_rmse));
  EXPECT_LT(c.gp_rmse, 1e-2);  // lines are in the span of the linear kernel
}

TEST(Cli, ExitCodes) {
  const fs::path dir = temp_dir("cli");
  const std::string out = " -o " + (dir / "run").string();
  const std::string small = " --data.n_nodes=8 --data.t_total=400 --optimizer.epochs=1";
  EXPECT_EQ(run_cli("train" + out + small), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "result.json"));
  EXPECT_TRUE(fs::exists(dir / "run" / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  EXPECT_EQ(read_text(dir / "run" / "trace.csv").substr(0, 26), "epoch,train_loss,val_rmse\n");

  EXPECT_EQ(run_cli("train" + out + " --covloss.lamda=1"), 2);
  EXPECT_EQ(run_cli("train" + out + " --covloss.lambda=-1"), 2);
  EXPECT_EQ(run_cli("train" + out + " -c " + (dir / "missing.cfg").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train" + out + small + " --optimizer.lr=1e300"), 3);

  const std::string ckpt = " --checkpoint " + (dir / "run" / "model.ckpt").string();
  EXPECT_EQ(run_cli("eval" + out + ckpt + small), 0);
  EXPECT_EQ(run_cli("diagnose" + out + ckpt + small + " --kind bogus"), 2);
  EXPECT_EQ(run_cli("diagnose -o " + (dir / "diag").string() + ckpt + small), 0);
  EXPECT_TRUE(fs::exists(dir / "diag" / "cross_term.csv"));
}

TEST(Cli, GpFitHandlesIndefiniteGridAndBadInput) {
  const fs::path dir = temp_dir("gp");
  std::ofstream(dir / "train.csv") << "-1,1,-1.5\n0,1,0.5\n2,1,4.5\n";
  std::ofstream(dir / "test.csv") << "1,1,2.5\n";
  EXPECT_EQ(run_cli("gp-fit -o " + dir.string() + " --kernel linear --data " + (dir / "train.csv").string() +
                    " --test " + (dir / "test.csv").string()),
            0);
  const Json j = Json::parse(read_text(dir / "gp.json"));
  EXPECT_LT(j["test_rmse"].get<double>(), 1e-2);
  std::ofstream(dir / "bad.csv") << "1,2\nx,3\n";
  EXPECT_EQ(run_cli("gp-fit -o " + dir.string() + " --data " + (dir / "bad.csv").string()), 2);
}

TEST(Golden, SmallTrafficRun) {
  const fs::path golden = fs::path(COVREG_GOLDEN_DIR) / "smoke_traffic_n8.json";
  const Json now = without_timing(to_json(train(small_stgcn(1.0), 0)));
  if (std::getenv("COVREG_UPDATE_GOLDEN")) {
    std::ofstream(golden) << now.dump(2) << "\n";
    GTEST_SKIP() << "golden file rewritten";
  }
  ASSERT_TRUE(fs::exists(golden)) << "run with COVREG_UPDATE_GOLDEN=1 to create " << golden;
  expect_json_near(now, Json::parse(read_text(golden)), 1e-9);
}
