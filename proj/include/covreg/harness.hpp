#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "covreg/config.hpp"
#include "covreg/covloss.hpp"
#include "covreg/data.hpp"
#include "covreg/diagnostics.hpp"
#include "covreg/metrics.hpp"
#include "covreg/models.hpp"
#include "covreg/params.hpp"

namespace covreg {

enum class ModelKind { Mlp, StgcnLite, Cnp };
enum class Objective { Mse, MsePlusCov, Nll, NllVsCovAb };
enum class DataSource { Traffic, Toy, Csv, Cache, LineCurves };
enum class SweepAxis { None, Lambda, NoiseNodes, BatchSize };

std::string to_string(ModelKind m);
std::string to_string(Objective o);
std::string to_string(DataSource d);
std::string to_string(SweepAxis a);

struct DataConfig {
  DataSource source = DataSource::Traffic;
  std::uint64_t seed = 0;  // added to the run seed
  TrafficConfig traffic;
  ToyConfig toy;
  std::string csv_path, adjacency_path, cache_path;
  SplitConfig split;  // batch_size and seed are taken from the optimizer and run
  std::size_t noisy_nodes = 0;
  NoiseConfig noise;
  // Nodes in the noisy set of this size are left out of test metrics, so a
  // noise sweep scores every arm on the same clean nodes.
  std::size_t metric_exclude_noisy = 0;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{32, 32};  // MLP hidden widths
  Activation hidden_activation = Activation::Relu;
  bool output_bias = true;
  StgcnConfig stgcn;  // n_nodes, t_in, f_in, s_out come from the data
  CnpConfig cnp;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t epochs = 20;
  std::size_t max_steps = 0;  // 0 = no cap
  std::size_t batch_size = 32;
  std::size_t patience = 10;
};

struct DiagnosticsConfig {
  std::size_t pair_samples = 200'000;
  std::size_t max_exhaustive = 1'000'000;
  std::optional<double> epsilon;
  std::size_t node = 0;
  std::size_t output = 0;
  std::vector<std::size_t> trace_pairs{0, 1};  // flattened (i, j) node pairs
};

struct CnpTaskConfig {
  std::size_t min_context = 3;
  std::size_t max_context = 10;
  std::size_t n_target = 20;
  std::size_t train_steps = 2000;
  std::size_t eval_episodes = 100;
  double x_lo = -2.0;
  double x_hi = 2.0;
  double y_noise = 0.0;
  double gp_noise_var = 1e-6;
};

struct SweepConfig {
  SweepAxis axis = SweepAxis::None;
  std::vector<double> values;
  double treatment_lambda = 1.0;
  std::size_t threads = 1;
};

struct ExperimentConfig {
  std::string name = "run";
  ModelKind model = ModelKind::StgcnLite;
  Objective objective = Objective::MsePlusCov;
  CovLossConfig covloss;
  DataConfig data;
  ModelConfig model_cfg;
  TrainConfig train;
  DiagnosticsConfig diagnostics;
  CnpTaskConfig cnp;
  SweepConfig sweep;
  std::vector<std::uint64_t> seeds{0};

  // Throws ConfigError for bad values and for keys the schema does not know.
  static ExperimentConfig from_tree(const ConfigTree& tree);
  ConfigTree to_tree() const;
  void validate() const;
  bool classification() const { return data.source == DataSource::Toy; }
};

struct HorizonMetrics {
  std::size_t horizon = 0;  // 1-based step ahead
  Metrics metrics;
};

struct CrossTermSummary {
  double zero_fraction = 0.0;
  double term_zero_fraction = 0.0;
  double epsilon = 0.0;
  std::size_t pair_count = 0;
  std::size_t value_count = 0;
  bool exhaustive = true;
  std::uint64_t seed = 0;
  CrossTermHistogram histogram;
};

struct AlignmentSummary {
  double initial_gap = 0.0;  // mean held-out ‖Σ̃ − K‖_F before training
  double final_gap = 0.0;
  std::size_t steps = 0;
};

struct RunResult {
  std::string name;
  std::string model;
  std::string objective;
  std::uint64_t seed = 0;
  double lambda = 0.0;

  Metrics test;  // original units, all horizons pooled
  std::vector<HorizonMetrics> horizons;
  std::optional<double> accuracy;
  std::optional<double> nll;
  std::optional<double> gp_rmse;

  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> val_rmse;    // per epoch, scaled units
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;

  std::optional<CrossTermSummary> cross_term;
  std::optional<AlignmentSummary> alignment;
  std::optional<double> median_correlation;
  std::optional<double> gram_same_class;
  std::optional<double> gram_cross_class;

  // Timing and memory; excluded from determinism comparisons.
  double wall_time_s = 0.0;
  double cov_time_s = 0.0;
  double cov_time_per_step_s = 0.0;
  std::size_t peak_mem_bytes = 0;
  std::size_t cov_peak_mem_bytes = 0;

  Params params;  // trained (best-validation) parameters; not serialized
};

// Per-step callback payload. `params` are the values the loss was computed
// with (before the update).
struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  const Params* params = nullptr;
  const WindowedBatch* batch = nullptr;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
};

// Initial parameters for (config, seed).
Params initial_params(const ExperimentConfig& cfg, std::uint64_t seed);

RunResult train(const ExperimentConfig& cfg, std::uint64_t seed, const TrainHooks* hooks = nullptr);

// Test metrics and diagnostics of fixed parameters, without training.
RunResult evaluate(const ExperimentConfig& cfg, std::uint64_t seed, const Params& params);

// Recomputes the training objective for a logged batch.
double batch_objective(const ExperimentConfig& cfg, std::uint64_t seed, const Params& params,
                       const WindowedBatch& batch);

struct DiagnosticsBundle {
  CrossTermReport cross_term;
  AlignmentTrace alignment;
  BasisDecompositionTrace basis;  // for diagnostics.node / diagnostics.output
};

DiagnosticsBundle diagnose(const ExperimentConfig& cfg, std::uint64_t seed, const Params& params);

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::string arm;
  double lambda = 0.0;
  std::size_t n_seeds = 0;
  std::string metric;
  double metric_mean = 0.0;
  double metric_std = 0.0;
  double wall_time_s = 0.0;
  double peak_mem_bytes = 0.0;
  double cov_time_per_step_s = 0.0;
  double cov_peak_mem_bytes = 0.0;
  double zero_fraction = 0.0;
  double frobenius_gap = 0.0;
};

struct SweepCell {
  double value = 0.0;
  std::string arm;
  RunResult result;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::None;
  std::vector<SweepCell> cells;  // ordered by (value, arm, seed)
  std::vector<SweepRow> rows;    // ordered by (value, arm)
};

// One run per (value, arm, seed). A lambda sweep has a single arm; noise and
// batch-size sweeps pair a baseline (λ = 0) with a treatment arm.
SweepResult sweep(const ExperimentConfig& cfg);

struct CnpComparison {
  RunResult nll_arm;
  RunResult cov_arm;
  double gp_rmse = 0.0;
};

struct CnpEpisode {
  CnpContext ctx;
  Tensor target_y;  // [T x 1]
};

// Line y = a·x + b with a, b ~ U(−1, 1), deterministic in (cfg, seed).
CnpEpisode make_line_episode(const CnpTaskConfig& cfg, std::uint64_t seed);

CnpComparison run_cnp_comparison(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace covreg
