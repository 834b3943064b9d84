#include "covreg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "covreg/errors.hpp"
#include "covreg/gp.hpp"
#include "covreg/memory.hpp"

namespace covreg {

// ---- enums -------------------------------------------------------------------

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::StgcnLite: return "stgcn_lite";
    case ModelKind::Cnp: return "cnp";
  }
  return "?";
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::Mse: return "mse";
    case Objective::MsePlusCov: return "mse_plus_cov";
    case Objective::Nll: return "nll";
    case Objective::NllVsCovAb: return "nll_vs_cov_ab";
  }
  return "?";
}

std::string to_string(DataSource d) {
  switch (d) {
    case DataSource::Traffic: return "traffic";
    case DataSource::Toy: return "toy";
    case DataSource::Csv: return "csv";
    case DataSource::Cache: return "cache";
    case DataSource::LineCurves: return "line_curves";
  }
  return "?";
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::None: return "none";
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::NoiseNodes: return "noise_nodes";
    case SweepAxis::BatchSize: return "batch_size";
  }
  return "?";
}

namespace {

ModelKind parse_model(const std::string& s) {
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "stgcn_lite") return ModelKind::StgcnLite;
  if (s == "cnp") return ModelKind::Cnp;
  throw ConfigError("unknown model '" + s + "'");
}

Objective parse_objective(const std::string& s) {
  if (s == "mse") return Objective::Mse;
  if (s == "mse_plus_cov") return Objective::MsePlusCov;
  if (s == "nll") return Objective::Nll;
  if (s == "nll_vs_cov_ab") return Objective::NllVsCovAb;
  throw ConfigError("unknown objective '" + s + "'");
}

DataSource parse_source(const std::string& s) {
  if (s == "traffic") return DataSource::Traffic;
  if (s == "toy") return DataSource::Toy;
  if (s == "csv") return DataSource::Csv;
  if (s == "cache") return DataSource::Cache;
  if (s == "line_curves") return DataSource::LineCurves;
  throw ConfigError("unknown data source '" + s + "'");
}

SweepAxis parse_axis(const std::string& s) {
  if (s == "none") return SweepAxis::None;
  if (s == "lambda") return SweepAxis::Lambda;
  if (s == "noise_nodes") return SweepAxis::NoiseNodes;
  if (s == "batch_size") return SweepAxis::BatchSize;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

OptimizerConfig::Kind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerConfig::Kind::Sgd;
  if (s == "adam") return OptimizerConfig::Kind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::vector<std::uint64_t>& v) { return {v.begin(), v.end()}; }

std::vector<std::uint64_t> to_u64(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

std::string bool_str(bool b) { return b ? "true" : "false"; }

}  // namespace

// ---- config schema -------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_tree(const ConfigTree& t) {
  ExperimentConfig c;
  t.get_uint("version", 1);
  c.name = t.get_string("experiment.name", c.name);
  c.model = parse_model(t.get_string("experiment.model", to_string(c.model)));
  c.objective = parse_objective(t.get_string("experiment.objective", to_string(c.objective)));
  c.seeds = t.get_uints("experiment.seeds", c.seeds);

  DataConfig& d = c.data;
  d.source = parse_source(t.get_string("data.source", to_string(d.source)));
  d.seed = t.get_uint("data.seed", d.seed);
  TrafficConfig& tr = d.traffic;
  tr.n_nodes = t.get_uint("data.n_nodes", tr.n_nodes);
  tr.t_total = t.get_uint("data.t_total", tr.t_total);
  tr.graph_kind = parse_graph_kind(t.get_string("data.graph_kind", to_string(tr.graph_kind)));
  tr.geometric_radius = t.get_double("data.geometric_radius", tr.geometric_radius);
  tr.period = t.get_uint("data.period", tr.period);
  tr.phase_groups = t.get_uint("data.phase_groups", tr.phase_groups);
  tr.level = t.get_double("data.level", tr.level);
  tr.amplitude = t.get_double("data.amplitude", tr.amplitude);
  tr.dip_depth = t.get_double("data.dip_depth", tr.dip_depth);
  tr.dip_width = t.get_double("data.dip_width", tr.dip_width);
  tr.diffusion = t.get_double("data.diffusion", tr.diffusion);
  tr.ar = t.get_double("data.ar", tr.ar);
  tr.shock_sigma = t.get_double("data.shock_sigma", tr.shock_sigma);
  tr.noise_sigma = t.get_double("data.noise_sigma", tr.noise_sigma);
  ToyConfig& toy = d.toy;
  toy.n_classes = t.get_uint("data.n_classes", toy.n_classes);
  toy.n_per_class = t.get_uint("data.n_per_class", toy.n_per_class);
  toy.dim = t.get_uint("data.dim", toy.dim);
  toy.separation = t.get_double("data.separation", toy.separation);
  toy.spread = t.get_double("data.spread", toy.spread);
  toy.ambiguous_fraction = t.get_double("data.ambiguous_fraction", toy.ambiguous_fraction);
  d.csv_path = t.get_string("data.csv_path", d.csv_path);
  d.adjacency_path = t.get_string("data.adjacency_path", d.adjacency_path);
  d.cache_path = t.get_string("data.cache_path", d.cache_path);
  d.split.t_in = t.get_uint("data.t_in", d.split.t_in);
  d.split.t_out = t.get_uint("data.t_out", d.split.t_out);
  d.split.ratios = t.get_doubles("data.ratios", d.split.ratios);
  d.noisy_nodes = t.get_uint("data.noisy_nodes", d.noisy_nodes);
  d.noise.mode = parse_noise_mode(t.get_string("data.noise_mode", to_string(d.noise.mode)));
  d.noise.sigma = t.get_optional_double("data.noise_level");
  d.metric_exclude_noisy = t.get_uint("data.metric_exclude_noisy", d.metric_exclude_noisy);

  ModelConfig& m = c.model_cfg;
  m.hidden = to_sizes(t.get_uints("model.hidden", to_u64(m.hidden)));
  m.hidden_activation = parse_activation(t.get_string("model.hidden_activation", to_string(m.hidden_activation)));
  m.output_bias = t.get_bool("model.output_bias", m.output_bias);
  m.stgcn.kernel = t.get_uint("model.kernel", m.stgcn.kernel);
  m.stgcn.temporal_channels = t.get_uint("model.temporal_channels", m.stgcn.temporal_channels);
  m.stgcn.spatial_channels = t.get_uint("model.spatial_channels", m.stgcn.spatial_channels);
  m.stgcn.basis_dim = t.get_uint("model.basis_dim", m.stgcn.basis_dim);
  m.stgcn.basis_activation = parse_activation(t.get_string("model.basis_activation", to_string(m.stgcn.basis_activation)));
  m.cnp.encoder_hidden = to_sizes(t.get_uints("model.encoder_hidden", to_u64(m.cnp.encoder_hidden)));
  m.cnp.r_dim = t.get_uint("model.r_dim", m.cnp.r_dim);
  m.cnp.decoder_hidden = to_sizes(t.get_uints("model.decoder_hidden", to_u64(m.cnp.decoder_hidden)));
  m.cnp.act = parse_activation(t.get_string("model.cnp_activation", to_string(m.cnp.act)));

  CovLossConfig& cl = c.covloss;
  cl.lambda = t.get_double("covloss.lambda", cl.lambda);
  cl.mean_mode = parse_mean_mode(t.get_string("covloss.mean_mode", to_string(cl.mean_mode)));
  cl.sigma_mode = parse_sigma_mode(t.get_string("covloss.sigma_mode", to_string(cl.sigma_mode)));
  cl.detach_target = t.get_bool("covloss.detach_target", cl.detach_target);
  cl.detach_sigma = t.get_bool("covloss.detach_sigma", cl.detach_sigma);
  cl.row_grouping = parse_row_grouping(t.get_string("covloss.row_grouping", to_string(cl.row_grouping)));

  TrainConfig& tc = c.train;
  tc.optimizer.kind = parse_optimizer(
      t.get_string("optimizer.kind", tc.optimizer.kind == OptimizerConfig::Kind::Sgd ? "sgd" : "adam"));
  tc.optimizer.lr = t.get_double("optimizer.lr", tc.optimizer.lr);
  tc.optimizer.beta1 = t.get_double("optimizer.beta1", tc.optimizer.beta1);
  tc.optimizer.beta2 = t.get_double("optimizer.beta2", tc.optimizer.beta2);
  tc.optimizer.eps = t.get_double("optimizer.eps", tc.optimizer.eps);
  tc.epochs = t.get_uint("optimizer.epochs", tc.epochs);
  tc.max_steps = t.get_uint("optimizer.max_steps", tc.max_steps);
  tc.batch_size = t.get_uint("optimizer.batch_size", tc.batch_size);
  tc.patience = t.get_uint("optimizer.patience", tc.patience);

  DiagnosticsConfig& dg = c.diagnostics;
  dg.pair_samples = t.get_uint("diagnostics.pair_samples", dg.pair_samples);
  dg.max_exhaustive = t.get_uint("diagnostics.max_exhaustive", dg.max_exhaustive);
  dg.epsilon = t.get_optional_double("diagnostics.epsilon");
  dg.node = t.get_uint("diagnostics.node", dg.node);
  dg.output = t.get_uint("diagnostics.output", dg.output);
  dg.trace_pairs = to_sizes(t.get_uints("diagnostics.trace_pairs", to_u64(dg.trace_pairs)));

  CnpTaskConfig& cn = c.cnp;
  cn.min_context = t.get_uint("cnp.min_context", cn.min_context);
  cn.max_context = t.get_uint("cnp.max_context", cn.max_context);
  cn.n_target = t.get_uint("cnp.n_target", cn.n_target);
  cn.train_steps = t.get_uint("cnp.train_steps", cn.train_steps);
  cn.eval_episodes = t.get_uint("cnp.eval_episodes", cn.eval_episodes);
  cn.x_lo = t.get_double("cnp.x_lo", cn.x_lo);
  cn.x_hi = t.get_double("cnp.x_hi", cn.x_hi);
  cn.y_noise = t.get_double("cnp.y_noise", cn.y_noise);
  cn.gp_noise_var = t.get_double("cnp.gp_noise_var", cn.gp_noise_var);

  SweepConfig& sw = c.sweep;
  sw.axis = parse_axis(t.get_string("sweep.axis", to_string(sw.axis)));
  sw.values = t.get_doubles("sweep.values", sw.values);
  sw.treatment_lambda = t.get_double("sweep.treatment_lambda", sw.treatment_lambda);
  sw.threads = t.get_uint("sweep.threads", sw.threads);

  const auto unknown = t.unused_keys();
  if (!unknown.empty()) {
    std::string msg = "unknown config key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  c.validate();
  return c;
}

ConfigTree ExperimentConfig::to_tree() const {
  ConfigTree t;
  t.set("version", "1");
  t.set("experiment.name", name);
  t.set("experiment.model", to_string(model));
  t.set("experiment.objective", to_string(objective));
  t.set("experiment.seeds", join(seeds));

  const DataConfig& d = data;
  t.set("data.source", to_string(d.source));
  t.set("data.seed", std::to_string(d.seed));
  t.set("data.n_nodes", std::to_string(d.traffic.n_nodes));
  t.set("data.t_total", std::to_string(d.traffic.t_total));
  t.set("data.graph_kind", to_string(d.traffic.graph_kind));
  t.set("data.geometric_radius", fmt(d.traffic.geometric_radius));
  t.set("data.period", std::to_string(d.traffic.period));
  t.set("data.phase_groups", std::to_string(d.traffic.phase_groups));
  t.set("data.level", fmt(d.traffic.level));
  t.set("data.amplitude", fmt(d.traffic.amplitude));
  t.set("data.dip_depth", fmt(d.traffic.dip_depth));
  t.set("data.dip_width", fmt(d.traffic.dip_width));
  t.set("data.diffusion", fmt(d.traffic.diffusion));
  t.set("data.ar", fmt(d.traffic.ar));
  t.set("data.shock_sigma", fmt(d.traffic.shock_sigma));
  t.set("data.noise_sigma", fmt(d.traffic.noise_sigma));
  t.set("data.n_classes", std::to_string(d.toy.n_classes));
  t.set("data.n_per_class", std::to_string(d.toy.n_per_class));
  t.set("data.dim", std::to_string(d.toy.dim));
  t.set("data.separation", fmt(d.toy.separation));
  t.set("data.spread", fmt(d.toy.spread));
  t.set("data.ambiguous_fraction", fmt(d.toy.ambiguous_fraction));
  if (!d.csv_path.empty()) t.set("data.csv_path", d.csv_path);
  if (!d.adjacency_path.empty()) t.set("data.adjacency_path", d.adjacency_path);
  if (!d.cache_path.empty()) t.set("data.cache_path", d.cache_path);
  t.set("data.t_in", std::to_string(d.split.t_in));
  t.set("data.t_out", std::to_string(d.split.t_out));
  t.set("data.ratios", join(d.split.ratios));
  t.set("data.noisy_nodes", std::to_string(d.noisy_nodes));
  t.set("data.noise_mode", to_string(d.noise.mode));
  t.set("data.noise_level", d.noise.sigma ? fmt(*d.noise.sigma) : "auto");
  t.set("data.metric_exclude_noisy", std::to_string(d.metric_exclude_noisy));

  const ModelConfig& m = model_cfg;
  t.set("model.hidden", join(m.hidden));
  t.set("model.hidden_activation", to_string(m.hidden_activation));
  t.set("model.output_bias", bool_str(m.output_bias));
  t.set("model.kernel", std::to_string(m.stgcn.kernel));
  t.set("model.temporal_channels", std::to_string(m.stgcn.temporal_channels));
  t.set("model.spatial_channels", std::to_string(m.stgcn.spatial_channels));
  t.set("model.basis_dim", std::to_string(m.stgcn.basis_dim));
  t.set("model.basis_activation", to_string(m.stgcn.basis_activation));
  t.set("model.encoder_hidden", join(m.cnp.encoder_hidden));
  t.set("model.r_dim", std::to_string(m.cnp.r_dim));
  t.set("model.decoder_hidden", join(m.cnp.decoder_hidden));
  t.set("model.cnp_activation", to_string(m.cnp.act));

  t.set("covloss.lambda", fmt(covloss.lambda));
  t.set("covloss.mean_mode", to_string(covloss.mean_mode));
  t.set("covloss.sigma_mode", to_string(covloss.sigma_mode));
  t.set("covloss.detach_target", bool_str(covloss.detach_target));
  t.set("covloss.detach_sigma", bool_str(covloss.detach_sigma));
  t.set("covloss.row_grouping", to_string(covloss.row_grouping));

  t.set("optimizer.kind", train.optimizer.kind == OptimizerConfig::Kind::Sgd ? "sgd" : "adam");
  t.set("optimizer.lr", fmt(train.optimizer.lr));
  t.set("optimizer.beta1", fmt(train.optimizer.beta1));
  t.set("optimizer.beta2", fmt(train.optimizer.beta2));
  t.set("optimizer.eps", fmt(train.optimizer.eps));
  t.set("optimizer.epochs", std::to_string(train.epochs));
  t.set("optimizer.max_steps", std::to_string(train.max_steps));
  t.set("optimizer.batch_size", std::to_string(train.batch_size));
  t.set("optimizer.patience", std::to_string(train.patience));

  t.set("diagnostics.pair_samples", std::to_string(diagnostics.pair_samples));
  t.set("diagnostics.max_exhaustive", std::to_string(diagnostics.max_exhaustive));
  t.set("diagnostics.epsilon", diagnostics.epsilon ? fmt(*diagnostics.epsilon) : "auto");
  t.set("diagnostics.node", std::to_string(diagnostics.node));
  t.set("diagnostics.output", std::to_string(diagnostics.output));
  t.set("diagnostics.trace_pairs", join(diagnostics.trace_pairs));

  t.set("cnp.min_context", std::to_string(cnp.min_context));
  t.set("cnp.max_context", std::to_string(cnp.max_context));
  t.set("cnp.n_target", std::to_string(cnp.n_target));
  t.set("cnp.train_steps", std::to_string(cnp.train_steps));
  t.set("cnp.eval_episodes", std::to_string(cnp.eval_episodes));
  t.set("cnp.x_lo", fmt(cnp.x_lo));
  t.set("cnp.x_hi", fmt(cnp.x_hi));
  t.set("cnp.y_noise", fmt(cnp.y_noise));
  t.set("cnp.gp_noise_var", fmt(cnp.gp_noise_var));

  t.set("sweep.axis", to_string(sweep.axis));
  t.set("sweep.values", join(sweep.values));
  t.set("sweep.treatment_lambda", fmt(sweep.treatment_lambda));
  t.set("sweep.threads", std::to_string(sweep.threads));
  return t;
}

void ExperimentConfig::validate() const {
  covloss.validate();
  if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
  if (train.batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
  if (!(train.optimizer.lr >= 0.0)) throw ConfigError("optimizer.lr must be non-negative");
  if (diagnostics.trace_pairs.size() % 2) throw ConfigError("diagnostics.trace_pairs needs an even number of entries");
  if (sweep.axis != SweepAxis::None && sweep.values.empty()) throw ConfigError("sweep.values must not be empty");
  if (sweep.threads == 0) throw ConfigError("sweep.threads must be positive");
  const bool cnp_model = model == ModelKind::Cnp;
  if (cnp_model != (data.source == DataSource::LineCurves)) {
    throw ConfigError("the cnp model runs on line_curves data and only there");
  }
  if (!cnp_model && (objective == Objective::Nll || objective == Objective::NllVsCovAb)) {
    throw ConfigError("objective " + to_string(objective) + " needs the cnp model");
  }
  if (model == ModelKind::StgcnLite && data.source == DataSource::Toy) {
    throw ConfigError("stgcn_lite needs series data");
  }
  if (cnp_model) {
    if (cnp.min_context == 0 || cnp.min_context > cnp.max_context) throw ConfigError("bad cnp context range");
    if (cnp.n_target < 2) throw ConfigError("cnp.n_target must be at least 2");
    if (!(cnp.x_hi > cnp.x_lo)) throw ConfigError("cnp.x_hi must exceed cnp.x_lo");
  }
  if (data.noisy_nodes > 0 && data.source == DataSource::Toy) throw ConfigError("noise injection needs series data");
}

// ---- task wiring -----------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct CovAccounting {
  double seconds = 0.0;
  std::size_t peak_bytes = 0;
  std::size_t calls = 0;
};

// combined_objective, with the covariance term timed and its tensor memory
// measured. Values and tape layout are identical to combined_objective.
Var training_objective(const ExperimentConfig& cfg, const ModelOutput& out, const Var& targets, CovAccounting* acc) {
  if (cfg.objective == Objective::Mse) return mse(out.prediction, targets);
  cfg.covloss.validate();
  Var fit = mse(out.prediction, targets);
  if (cfg.covloss.lambda == 0.0) return fit;
  const auto t0 = Clock::now();
  Var cov;
  {
    PeakMemoryScope scope;
    cov = covariance_term(out, targets, cfg.covloss);
    if (acc) acc->peak_bytes = std::max(acc->peak_bytes, scope.peak_above_baseline());
  }
  if (acc) {
    acc->seconds += seconds_since(t0);
    ++acc->calls;
  }
  return add(fit, scale(cov, cfg.covloss.lambda));
}

struct EvalData {
  std::vector<double> pred, y, mask;  // scaled units, [sample, node, S] order
  std::vector<std::size_t> node_of;   // node of each entry (series data)
  std::vector<EvalStep> steps;
  Tensor basis;  // [R x F']
  Tensor weights;
  std::optional<Tensor> bias;
  Tensor scores;  // classification outputs [n x C]
};

Tensor target_rows_for(const Tensor& y, const Tensor& pred, MeanMode mode) {
  Tensor m = y;
  if (mode == MeanMode::ResidualZeroMean) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = y[i] - pred[i];
  } else if (mode == MeanMode::BatchMean) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < m.rows(); ++r) mean += m.at(r, c);
      mean /= static_cast<double>(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r) m.at(r, c) -= mean;
    }
  }
  return m;
}

Tensor rows_of(const Tensor& src, std::size_t first, std::size_t count) {
  const std::size_t w = src.size() / std::max<std::size_t>(1, src.dim(0));
  Tensor out(Shape{count, w});
  std::copy_n(src.data() + first * w, count * w, out.data());
  return out;
}

class Task {
 public:
  Task(const ExperimentConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    const std::uint64_t data_seed = cfg.data.seed + seed;
    if (cfg.data.source == DataSource::Toy) {
      ToyConfig tc = cfg.data.toy;
      tc.seed = data_seed;
      toy_ = split_labeled(generate_toy_classification(tc), cfg.data.split.ratios, data_seed + 1);
      if (toy_.train.size() == 0 || toy_.test.size() < 2) throw ConfigError("toy split leaves no train/test samples");
      const std::size_t dim = tc.dim, classes = tc.n_classes;
      mlp_.widths = {dim};
      for (std::size_t h : cfg.model_cfg.hidden) mlp_.widths.push_back(h);
      mlp_.widths.push_back(classes);
      mlp_.hidden = cfg.model_cfg.hidden_activation;
      mlp_.output_bias = cfg.model_cfg.output_bias;
      return;
    }

    SeriesDataset d;
    switch (cfg.data.source) {
      case DataSource::Traffic: {
        TrafficConfig tc = cfg.data.traffic;
        tc.seed = data_seed;
        d = generate_traffic_like(tc);
        break;
      }
      case DataSource::Csv:
        d = load_csv_series(cfg.data.csv_path, cfg.data.adjacency_path);
        break;
      case DataSource::Cache:
        d = load_dataset(cfg.data.cache_path);
        break;
      default:
        throw ConfigError("data source " + to_string(cfg.data.source) + " is not a series source");
    }
    n_nodes_ = d.n_nodes();
    double rsum = 0.0;
    for (double r : cfg.data.split.ratios) rsum += r;
    if (cfg.data.noisy_nodes > 0) {
      NoiseConfig nc = cfg.data.noise;
      nc.seed = data_seed + 2;
      nc.train_fraction = rsum > 0 ? cfg.data.split.ratios.at(0) / rsum : 0.7;
      d = inject_node_noise(d, noisy_node_set(n_nodes_, cfg.data.noisy_nodes, data_seed + 3), nc);
    }
    metric_node_.assign(n_nodes_, 1.0);
    for (std::size_t node : noisy_node_set(n_nodes_, cfg.data.metric_exclude_noisy, data_seed + 3))
      metric_node_[node] = 0.0;
    graph_ = d.graph;
    SplitConfig sc = cfg.data.split;
    sc.batch_size = cfg.train.batch_size;
    sc.seed = seed;
    windows_.emplace(d, sc);

    if (cfg.model == ModelKind::StgcnLite) {
      stgcn_ = cfg.model_cfg.stgcn;
      stgcn_.n_nodes = n_nodes_;
      stgcn_.t_in = sc.t_in;
      stgcn_.f_in = d.n_features();
      stgcn_.s_out = sc.t_out;
      stgcn_.output_bias = cfg.model_cfg.output_bias;
    } else {
      mlp_.widths = {sc.t_in * d.n_features()};
      for (std::size_t h : cfg.model_cfg.hidden) mlp_.widths.push_back(h);
      mlp_.widths.push_back(sc.t_out);
      mlp_.hidden = cfg.model_cfg.hidden_activation;
      mlp_.output_bias = cfg.model_cfg.output_bias;
    }
  }

  bool classification() const { return !windows_.has_value(); }

  Params init(std::uint64_t seed) const {
    Rng rng(seed);
    if (cfg_.model == ModelKind::StgcnLite) return init_stgcn(stgcn_, rng);
    return init_mlp(mlp_, rng);
  }

  std::vector<WindowedBatch> batches(Part part, std::size_t epoch) const {
    if (windows_) return windows_->batches(part, epoch);
    const LabeledSet& set = part == Part::Train ? toy_.train : part == Part::Val ? toy_.val : toy_.test;
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    if (part == Part::Train) {
      Rng rng(seed_ * 1000003u + epoch);
      std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<WindowedBatch> out;
    const std::size_t bs = cfg_.train.batch_size;
    for (std::size_t i = 0; i < order.size(); i += bs) {
      const std::size_t count = std::min(bs, order.size() - i);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                   order.begin() + static_cast<std::ptrdiff_t>(i + count));
      LabeledSet sub = set.subset(idx);
      WindowedBatch b;
      b.x = std::move(sub.x);
      b.y = std::move(sub.y);
      b.y_mask = Tensor(b.y.shape(), 1.0);
      b.offsets = std::move(idx);
      out.push_back(std::move(b));
    }
    return out;
  }

  ModelOutput forward(const Binding& p, const WindowedBatch& b) const {
    Tape& tape = p.tape();
    if (cfg_.model == ModelKind::StgcnLite) return stgcn_lite_forward(p, tape.constant(b.x), graph_, stgcn_);
    if (classification()) return mlp_forward(p, tape.constant(b.x), mlp_);
    // One MLP row per (sample, node) holding that node's input window.
    const Shape& s = b.x.shape();
    const std::size_t bs = s[0], t_in = s[1], n = s[2], f = s[3];
    Tensor rows(Shape{bs * n, t_in * f});
    for (std::size_t k = 0; k < bs; ++k)
      for (std::size_t t = 0; t < t_in; ++t)
        for (std::size_t node = 0; node < n; ++node)
          for (std::size_t c = 0; c < f; ++c)
            rows.at(k * n + node, t * f + c) = b.x[((k * t_in + t) * n + node) * f + c];
    ModelOutput out = mlp_forward(p, tape.constant(std::move(rows)), mlp_);
    out.prediction = reshape(out.prediction, Shape{bs, n, b.y.dim(2)});
    for (std::size_t i = 0; i < out.row_index.size(); ++i) out.row_index[i] = {i / n, i % n};
    return out;
  }

  // Targets with invalid entries replaced by the prediction, so they add
  // nothing to the residual.
  Var targets(Tape& tape, const WindowedBatch& b, const ModelOutput& out) const {
    bool all_valid = true;
    for (double m : b.y_mask.values()) all_valid = all_valid && m != 0.0;
    if (all_valid) return tape.constant(b.y);
    Tensor y = b.y;
    const Tensor& pred = out.prediction.value();
    for (std::size_t i = 0; i < y.size(); ++i)
      if (b.y_mask[i] == 0.0) y[i] = pred[i];
    return tape.constant(std::move(y));
  }

  EvalData eval(const Params& params, Part part) const {
    EvalData e;
    std::vector<double> basis_values;
    std::size_t f_prime = 0, rows = 0;
    std::vector<double> scores;
    std::size_t batch_no = 0;
    for (const WindowedBatch& b : batches(part, 0)) {
      Tape tape;
      Binding bind(tape, params, false);
      ModelOutput out = forward(bind, b);
      if (!e.weights.size()) {
        e.weights = out.last_weights.value();
        if (out.bias) e.bias = out.bias->value();
      }
      const Tensor& pred = out.prediction.value();
      const Tensor& phi = out.basis.value();
      f_prime = phi.cols();
      rows += phi.rows();
      basis_values.insert(basis_values.end(), phi.values().begin(), phi.values().end());
      e.pred.insert(e.pred.end(), pred.values().begin(), pred.values().end());
      e.y.insert(e.y.end(), b.y.values().begin(), b.y.values().end());
      e.mask.insert(e.mask.end(), b.y_mask.values().begin(), b.y_mask.values().end());
      if (classification()) {
        scores.insert(scores.end(), pred.values().begin(), pred.values().end());
        EvalStep st;
        st.time = batch_no++;
        st.basis = phi;
        st.prediction = pred;
        st.labels = b.y;
        st.target_rows = target_rows_for(b.y, pred, cfg_.covloss.mean_mode);
        e.steps.push_back(std::move(st));
        continue;
      }
      const std::size_t n = b.y.dim(1), s = b.y.dim(2);
      const Tensor y2 = b.y.reshaped(Shape{b.y.dim(0) * n, s});
      const Tensor p2 = pred.reshaped(Shape{b.y.dim(0) * n, s});
      for (std::size_t k = 0; k < b.offsets.size(); ++k) {
        EvalStep st;
        st.time = b.offsets[k];
        st.basis = rows_of(phi, k * n, n);
        st.prediction = rows_of(p2, k * n, n);
        st.labels = rows_of(y2, k * n, n);
        st.target_rows = target_rows_for(st.labels, st.prediction, cfg_.covloss.mean_mode);
        for (std::size_t node = 0; node < n; ++node)
          for (std::size_t h = 0; h < s; ++h) e.node_of.push_back(node);
        e.steps.push_back(std::move(st));
      }
    }
    e.basis = Tensor(Shape{rows, f_prime}, basis_values);
    if (classification()) e.scores = Tensor(Shape{rows, e.weights.cols()}, scores);
    return e;
  }

  double val_rmse(const Params& params) const {
    const EvalData e = eval(params, Part::Val);
    return evaluate_metrics(e.pred, e.y, e.mask).rmse;
  }

  bool has_val() const {
    return windows_ ? !windows_->offsets(Part::Val).empty() : toy_.val.size() > 0;
  }

  const LabeledSplit& toy() const { return toy_; }
  const std::optional<WindowedData>& windows() const { return windows_; }
  const std::vector<double>& metric_node_mask() const { return metric_node_; }
  std::size_t n_nodes() const { return n_nodes_; }

 private:
  const ExperimentConfig& cfg_;
  std::uint64_t seed_;
  LabeledSplit toy_;
  std::optional<WindowedData> windows_;
  GraphSpec graph_;
  std::size_t n_nodes_ = 0;
  std::vector<double> metric_node_;
  StgcnConfig stgcn_;
  MlpConfig mlp_;
};

std::vector<std::pair<std::size_t, std::size_t>> trace_pairs(const DiagnosticsConfig& dg) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i + 1 < dg.trace_pairs.size(); i += 2) out.emplace_back(dg.trace_pairs[i], dg.trace_pairs[i + 1]);
  return out;
}

double measured_sigma2(const Tensor& w, const CovLossConfig& cfg) {
  if (cfg.sigma_mode == SigmaMode::FixedOne) return 1.0;
  double mean = 0.0;
  for (double v : w.values()) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w.values()) var += (v - mean) * (v - mean);
  return var / static_cast<double>(w.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

AlignmentTrace alignment_of(const ExperimentConfig& cfg, const Task& task, const EvalData& e) {
  return alignment_trace(e.steps, e.weights, task.classification() ? decltype(trace_pairs(cfg.diagnostics)){}
                                                                    : trace_pairs(cfg.diagnostics),
                         cfg.covloss);
}

// Test metrics and diagnostics of `params` written into `r`.
void fill_evaluation(const ExperimentConfig& cfg, const Task& task, const Params& params, std::uint64_t seed,
                     RunResult& r) {
  const EvalData e = task.eval(params, Part::Test);
  if (task.classification()) {
    r.accuracy = accuracy(e.scores, task.toy().test.labels);
    r.test = evaluate_metrics(e.pred, e.y, e.mask);
  } else {
    const Scaler& sc = task.windows()->scaler();
    std::vector<double> pred(e.pred.size()), y(e.y.size()), mask(e.mask.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = sc.inverse(e.pred[i], 0);
      y[i] = sc.inverse(e.y[i], 0);
      mask[i] = e.mask[i] * task.metric_node_mask()[e.node_of[i]];
    }
    r.test = evaluate_metrics(pred, y, mask);
    const std::size_t s = cfg.data.split.t_out;
    r.horizons.clear();
    for (std::size_t h = 0; h < s; ++h) {
      std::vector<double> ph, yh, mh;
      for (std::size_t i = h; i < pred.size(); i += s) {
        ph.push_back(pred[i]);
        yh.push_back(y[i]);
        mh.push_back(mask[i]);
      }
      r.horizons.push_back({h + 1, evaluate_metrics(ph, yh, mh)});
    }
  }

  const PairSampling sampling{cfg.diagnostics.max_exhaustive, cfg.diagnostics.pair_samples, seed};
  const CrossTermReport ct = cross_term_report(e.basis, e.weights, sampling, cfg.diagnostics.epsilon);
  CrossTermSummary cs;
  cs.zero_fraction = ct.zero_fraction;
  cs.term_zero_fraction = ct.term_zero_fraction;
  cs.epsilon = ct.epsilon;
  cs.pair_count = ct.pair_count;
  cs.value_count = ct.values.size();
  cs.exhaustive = ct.exhaustive;
  cs.seed = ct.seed;
  cs.histogram = ct.histogram;
  r.cross_term = cs;

  const AlignmentTrace at = alignment_of(cfg, task, e);
  if (!r.alignment) r.alignment = AlignmentSummary{};
  r.alignment->final_gap = at.mean_frobenius_gap();
  r.alignment->steps = at.frobenius_gap.size();

  if (task.classification()) {
    const auto& labels = task.toy().test.labels;
    const double s2 = measured_sigma2(e.weights, cfg.covloss);
    const Tensor gram = matmul(e.basis, transpose(e.basis));
    double same = 0.0, cross = 0.0;
    std::size_t n_same = 0, n_cross = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      for (std::size_t j = 0; j < labels.size(); ++j) {
        if (i == j) continue;
        if (labels[i] == labels[j]) {
          same += s2 * gram.at(i, j);
          ++n_same;
        } else {
          cross += s2 * gram.at(i, j);
          ++n_cross;
        }
      }
    r.gram_same_class = n_same ? same / static_cast<double>(n_same) : 0.0;
    r.gram_cross_class = n_cross ? cross / static_cast<double>(n_cross) : 0.0;
  } else {
    std::vector<double> pooled;
    const Tensor* bias = e.bias ? &*e.bias : nullptr;
    for (std::size_t node = 0; node < task.n_nodes(); ++node) {
      const auto bt = basis_decomposition_trace(e.steps, e.weights, bias, node, cfg.diagnostics.output);
      for (const auto& c : bt.correlation)
        if (c) pooled.push_back(*c);
    }
    if (!pooled.empty()) r.median_correlation = median_of(std::move(pooled));
  }
}

RunResult new_result(const ExperimentConfig& cfg, std::uint64_t seed) {
  RunResult r;
  r.name = cfg.name;
  r.model = to_string(cfg.model);
  r.objective = to_string(cfg.objective);
  r.seed = seed;
  r.lambda = cfg.objective == Objective::MsePlusCov ? cfg.covloss.lambda : 0.0;
  return r;
}

RunResult train_cnp_arm(const ExperimentConfig& cfg, std::uint64_t seed, Objective objective,
                        const TrainHooks* hooks);

}  // namespace

Params initial_params(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.model == ModelKind::Cnp) {
    Rng rng(seed);
    return init_cnp(cfg.model_cfg.cnp, rng);
  }
  return Task(cfg, seed).init(seed);
}

RunResult train(const ExperimentConfig& cfg, std::uint64_t seed, const TrainHooks* hooks) {
  cfg.validate();
  if (cfg.model == ModelKind::Cnp) {
    if (cfg.objective == Objective::NllVsCovAb) {
      throw ConfigError("objective nll_vs_cov_ab trains two arms; use the cnp comparison");
    }
    return train_cnp_arm(cfg, seed, cfg.objective, hooks);
  }
  const auto t0 = Clock::now();
  PeakMemoryScope run_scope;
  RunResult r = new_result(cfg, seed);
  Task task(cfg, seed);
  Params params = task.init(seed);

  {
    const EvalData init_eval = task.eval(params, Part::Test);
    AlignmentSummary a;
    a.initial_gap = alignment_of(cfg, task, init_eval).mean_frobenius_gap();
    r.alignment = a;
  }

  Optimizer opt(cfg.train.optimizer);
  CovAccounting acc;
  Params best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, step = 0, last_good_epoch = 0;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs && !stop; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (const WindowedBatch& b : task.batches(Part::Train, epoch)) {
      Tape tape;
      Binding bind(tape, params);
      ModelOutput out = task.forward(bind, b);
      Var y = task.targets(tape, b, out);
      Var loss = training_objective(cfg, out, y, &acc);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           "; last good checkpoint is the best-validation state of epoch " +
                           std::to_string(last_good_epoch));
      }
      if (hooks && hooks->on_step) hooks->on_step(StepRecord{epoch, step, lv, &params, &b});
      const Gradients g = tape.backward(loss);
      opt.step(params, bind, g);
      loss_sum += lv;
      ++loss_n;
      ++step;
      if (cfg.train.max_steps && step >= cfg.train.max_steps) {
        stop = true;
        break;
      }
    }
    r.train_loss.push_back(loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0);
    r.epochs_run = epoch;
    if (!task.has_val()) {
      best = params;
      r.best_epoch = epoch;
      last_good_epoch = epoch;
      continue;
    }
    const double v = task.val_rmse(params);
    r.val_rmse.push_back(v);
    if (!std::isfinite(v)) {
      throw NumericError("validation RMSE is not finite at epoch " + std::to_string(epoch) +
                         "; last good checkpoint is epoch " + std::to_string(last_good_epoch));
    }
    if (v < best_val) {
      best_val = v;
      best = params;
      r.best_epoch = epoch;
      last_good_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.train.patience) {
      stop = true;
    }
  }
  if (r.epochs_run == 0) best = params;
  r.steps = step;

  fill_evaluation(cfg, task, best, seed, r);
  r.params = std::move(best);
  r.cov_time_s = acc.seconds;
  r.cov_time_per_step_s = acc.calls ? acc.seconds / static_cast<double>(acc.calls) : 0.0;
  r.cov_peak_mem_bytes = acc.peak_bytes;
  r.peak_mem_bytes = run_scope.peak_above_baseline();
  r.wall_time_s = seconds_since(t0);
  return r;
}

RunResult evaluate(const ExperimentConfig& cfg, std::uint64_t seed, const Params& params) {
  cfg.validate();
  if (cfg.model == ModelKind::Cnp) throw ConfigError("evaluate: use the cnp comparison for the cnp model");
  const auto t0 = Clock::now();
  PeakMemoryScope scope;
  RunResult r = new_result(cfg, seed);
  Task task(cfg, seed);
  fill_evaluation(cfg, task, params, seed, r);
  r.alignment->initial_gap = r.alignment->final_gap;
  r.params = params;
  r.peak_mem_bytes = scope.peak_above_baseline();
  r.wall_time_s = seconds_since(t0);
  return r;
}

double batch_objective(const ExperimentConfig& cfg, std::uint64_t seed, const Params& params,
                       const WindowedBatch& batch) {
  Task task(cfg, seed);
  Tape tape;
  Binding bind(tape, params);
  ModelOutput out = task.forward(bind, batch);
  Var y = task.targets(tape, batch, out);
  if (cfg.objective == Objective::Mse) return mse(out.prediction, y).value().item();
  return combined_objective(out, y, cfg.covloss).value().item();
}

DiagnosticsBundle diagnose(const ExperimentConfig& cfg, std::uint64_t seed, const Params& params) {
  cfg.validate();
  if (cfg.model == ModelKind::Cnp) throw ConfigError("diagnose supports the mlp and stgcn_lite models");
  Task task(cfg, seed);
  const EvalData e = task.eval(params, Part::Test);
  DiagnosticsBundle b;
  const PairSampling sampling{cfg.diagnostics.max_exhaustive, cfg.diagnostics.pair_samples, seed};
  b.cross_term = cross_term_report(e.basis, e.weights, sampling, cfg.diagnostics.epsilon);
  b.alignment = alignment_of(cfg, task, e);
  if (!task.classification()) {
    b.basis = basis_decomposition_trace(e.steps, e.weights, e.bias ? &*e.bias : nullptr, cfg.diagnostics.node,
                                        cfg.diagnostics.output);
  }
  return b;
}

// ---- sweeps ------------------------------------------------------------------------

SweepResult sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep.axis == SweepAxis::None) throw ConfigError("sweep.axis is not set");
  if (cfg.model == ModelKind::Cnp) throw ConfigError("sweeps support the mlp and stgcn_lite models");

  struct Job {
    double value;
    std::string arm;
    ExperimentConfig cfg;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  const double max_value = *std::max_element(cfg.sweep.values.begin(), cfg.sweep.values.end());
  for (double value : cfg.sweep.values) {
    std::vector<std::pair<std::string, double>> arms;
    if (cfg.sweep.axis == SweepAxis::Lambda) {
      arms.emplace_back("lambda", value);
    } else {
      arms.emplace_back("baseline", 0.0);
      arms.emplace_back("treatment", cfg.sweep.treatment_lambda);
    }
    for (const auto& [arm, lambda] : arms) {
      ExperimentConfig c = cfg;
      c.sweep.axis = SweepAxis::None;
      c.objective = Objective::MsePlusCov;
      c.covloss.lambda = lambda;
      if (value < 0 || (cfg.sweep.axis != SweepAxis::Lambda && value != std::floor(value))) {
        throw ConfigError("sweep value " + fmt(value) + " is not valid for axis " + to_string(cfg.sweep.axis));
      }
      if (cfg.sweep.axis == SweepAxis::NoiseNodes) {
        c.data.noisy_nodes = static_cast<std::size_t>(value);
        c.data.metric_exclude_noisy = static_cast<std::size_t>(max_value);
      } else if (cfg.sweep.axis == SweepAxis::BatchSize) {
        c.train.batch_size = static_cast<std::size_t>(value);
      }
      c.validate();
      for (std::uint64_t seed : cfg.seeds) jobs.push_back({value, arm, c, seed});
    }
  }

  std::vector<RunResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = train(jobs[i].cfg, jobs[i].seed);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(cfg.sweep.threads, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  SweepResult out;
  out.axis = cfg.sweep.axis;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    results[i].params = Params{};
    out.cells.push_back({jobs[i].value, jobs[i].arm, std::move(results[i])});
  }
  const bool cls = cfg.classification();
  for (std::size_t i = 0; i < out.cells.size();) {
    std::size_t j = i;
    while (j < out.cells.size() && out.cells[j].value == out.cells[i].value && out.cells[j].arm == out.cells[i].arm) ++j;
    SweepRow row;
    row.axis = to_string(cfg.sweep.axis);
    row.value = out.cells[i].value;
    row.arm = out.cells[i].arm;
    row.lambda = out.cells[i].result.lambda;
    row.n_seeds = j - i;
    row.metric = cls ? "accuracy" : "rmse";
    std::vector<double> m;
    for (std::size_t k = i; k < j; ++k) {
      const RunResult& r = out.cells[k].result;
      m.push_back(cls ? r.accuracy.value_or(0.0) : r.test.rmse);
      const double n = static_cast<double>(row.n_seeds);
      row.wall_time_s += r.wall_time_s / n;
      row.peak_mem_bytes += static_cast<double>(r.peak_mem_bytes) / n;
      row.cov_time_per_step_s += r.cov_time_per_step_s / n;
      row.cov_peak_mem_bytes += static_cast<double>(r.cov_peak_mem_bytes) / n;
      row.zero_fraction += (r.cross_term ? r.cross_term->zero_fraction : 0.0) / n;
      row.frobenius_gap += (r.alignment ? r.alignment->final_gap : 0.0) / n;
    }
    row.metric_mean = std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
    if (m.size() > 1) {
      double ss = 0.0;
      for (double v : m) ss += (v - row.metric_mean) * (v - row.metric_mean);
      row.metric_std = std::sqrt(ss / static_cast<double>(m.size() - 1));
    }
    out.rows.push_back(row);
    i = j;
  }
  return out;
}

// ---- CNP comparison ------------------------------------------------------------------

CnpEpisode make_line_episode(const CnpTaskConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  std::uniform_real_distribution<double> xs(cfg.x_lo, cfg.x_hi);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double a = coef(rng), b = coef(rng);
  const std::size_t n_ctx =
      cfg.min_context + static_cast<std::size_t>(rng() % (cfg.max_context - cfg.min_context + 1));
  CnpEpisode ep;
  ep.ctx.context_x = Tensor(Shape{n_ctx, 1});
  ep.ctx.context_y = Tensor(Shape{n_ctx, 1});
  for (std::size_t i = 0; i < n_ctx; ++i) {
    const double x = xs(rng);
    ep.ctx.context_x[i] = x;
    ep.ctx.context_y[i] = a * x + b + cfg.y_noise * noise(rng);
  }
  ep.ctx.target_x = Tensor(Shape{cfg.n_target, 1});
  ep.target_y = Tensor(Shape{cfg.n_target, 1});
  for (std::size_t i = 0; i < cfg.n_target; ++i) {
    const double x = xs(rng);
    ep.ctx.target_x[i] = x;
    ep.target_y[i] = a * x + b + cfg.y_noise * noise(rng);
  }
  return ep;
}

namespace {

std::uint64_t train_episode_seed(std::uint64_t seed, std::size_t i) { return seed * 1000003u + i; }
std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t i) { return seed * 1000003u + 500000u + i; }

Var cnp_objective(const ExperimentConfig& cfg, Objective objective, const CnpOutput& out, const Var& y,
                  CovAccounting* acc) {
  if (objective == Objective::Nll) return cnp_nll(out.mu, out.log_sigma, y);
  ExperimentConfig c = cfg;
  c.objective = objective;
  return training_objective(c, out.basis, y, acc);
}

RunResult train_cnp_arm(const ExperimentConfig& cfg, std::uint64_t seed, Objective objective,
                        const TrainHooks* hooks) {
  const auto t0 = Clock::now();
  PeakMemoryScope run_scope;
  ExperimentConfig arm_cfg = cfg;
  arm_cfg.objective = objective;
  RunResult r = new_result(arm_cfg, seed);
  const std::uint64_t data_seed = cfg.data.seed + seed;
  Rng rng(seed);
  Params params = init_cnp(cfg.model_cfg.cnp, rng);
  Optimizer opt(cfg.train.optimizer);
  CovAccounting acc;
  const std::size_t chunk = 100;
  double loss_sum = 0.0;
  std::size_t loss_n = 0;
  for (std::size_t step = 0; step < cfg.cnp.train_steps; ++step) {
    const CnpEpisode ep = make_line_episode(cfg.cnp, train_episode_seed(data_seed, step));
    Tape tape;
    Binding bind(tape, params);
    const CnpOutput out = cnp_forward(bind, ep.ctx, cfg.model_cfg.cnp);
    Var y = tape.constant(ep.target_y);
    Var loss = cnp_objective(cfg, objective, out, y, &acc);
    const double lv = loss.value().item();
    if (!std::isfinite(lv)) {
      throw NumericError("cnp training diverged at step " + std::to_string(step));
    }
    if (hooks && hooks->on_step) hooks->on_step(StepRecord{0, step, lv, &params, nullptr});
    opt.step(params, bind, tape.backward(loss));
    loss_sum += lv;
    if (++loss_n == chunk || step + 1 == cfg.cnp.train_steps) {
      r.train_loss.push_back(loss_sum / static_cast<double>(loss_n));
      loss_sum = 0.0;
      loss_n = 0;
    }
  }
  r.steps = cfg.cnp.train_steps;
  r.epochs_run = r.train_loss.size();
  r.best_epoch = r.epochs_run;

  double nll_sum = 0.0;
  std::vector<double> pred, truth;
  for (std::size_t i = 0; i < cfg.cnp.eval_episodes; ++i) {
    const CnpEpisode ep = make_line_episode(cfg.cnp, eval_episode_seed(data_seed, i));
    Tape tape;
    Binding bind(tape, params, false);
    const CnpOutput out = cnp_forward(bind, ep.ctx, cfg.model_cfg.cnp);
    nll_sum += cnp_nll(out.mu, out.log_sigma, tape.constant(ep.target_y)).value().item();
    const Tensor& mu = out.mu.value();
    pred.insert(pred.end(), mu.values().begin(), mu.values().end());
    truth.insert(truth.end(), ep.target_y.values().begin(), ep.target_y.values().end());
  }
  if (cfg.cnp.eval_episodes == 0) throw ConfigError("cnp.eval_episodes must be positive");
  r.nll = nll_sum / static_cast<double>(cfg.cnp.eval_episodes);
  r.test = evaluate_metrics(pred, truth);
  r.params = std::move(params);
  r.cov_time_s = acc.seconds;
  r.cov_time_per_step_s = acc.calls ? acc.seconds / static_cast<double>(acc.calls) : 0.0;
  r.cov_peak_mem_bytes = acc.peak_bytes;
  r.peak_mem_bytes = run_scope.peak_above_baseline();
  r.wall_time_s = seconds_since(t0);
  return r;
}

}  // namespace

CnpComparison run_cnp_comparison(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.model != ModelKind::Cnp) throw ConfigError("the cnp comparison needs model = cnp");
  CnpComparison c;
  c.nll_arm = train_cnp_arm(cfg, seed, Objective::Nll, nullptr);
  c.cov_arm = train_cnp_arm(cfg, seed, Objective::MsePlusCov, nullptr);

  // Bayesian linear regression (linear kernel on [x, 1]) as the reference.
  const std::uint64_t data_seed = cfg.data.seed + seed;
  GpModel gp;
  gp.kernel.kind = Kernel::Kind::Linear;
  gp.kernel.signal_var = 1.0;
  gp.noise_var = std::max(cfg.cnp.gp_noise_var, cfg.cnp.y_noise * cfg.cnp.y_noise);
  std::vector<double> pred, truth;
  for (std::size_t i = 0; i < cfg.cnp.eval_episodes; ++i) {
    const CnpEpisode ep = make_line_episode(cfg.cnp, eval_episode_seed(data_seed, i));
    const std::size_t nc = ep.ctx.context_x.rows(), nt = ep.ctx.target_x.rows();
    Tensor xc(Shape{nc, 2}), xt(Shape{nt, 2});
    for (std::size_t k = 0; k < nc; ++k) {
      xc.at(k, 0) = ep.ctx.context_x[k];
      xc.at(k, 1) = 1.0;
    }
    for (std::size_t k = 0; k < nt; ++k) {
      xt.at(k, 0) = ep.ctx.target_x[k];
      xt.at(k, 1) = 1.0;
    }
    const GpPosterior post = gp_posterior(gp, xc, ep.ctx.context_y.values(), xt);
    pred.insert(pred.end(), post.mean.begin(), post.mean.end());
    truth.insert(truth.end(), ep.target_y.values().begin(), ep.target_y.values().end());
  }
  c.gp_rmse = evaluate_metrics(pred, truth).rmse;
  c.nll_arm.gp_rmse = c.gp_rmse;
  c.cov_arm.gp_rmse = c.gp_rmse;
  return c;
}

}  // namespace covreg
