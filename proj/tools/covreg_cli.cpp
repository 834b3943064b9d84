// covreg-cli: data generation, training, evaluation, diagnostics, GP
// fitting, sweeps and the CNP comparison.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "covreg/config.hpp"
#include "covreg/data.hpp"
#include "covreg/errors.hpp"
#include "covreg/gp.hpp"
#include "covreg/harness.hpp"
#include "covreg/report.hpp"

namespace fs = std::filesystem;
using namespace covreg;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_config(const Common& c, const std::vector<std::string>& overrides) {
  ConfigTree tree = c.config.empty() ? ConfigTree::parse("version = 1\n") : ConfigTree::load(c.config);
  for (const auto& o : overrides) {
    if (o.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + o + "'");
    tree.apply_override(o);
  }
  return ExperimentConfig::from_tree(tree);
}

std::uint64_t pick_seed(const Common& c, const ExperimentConfig& cfg) { return c.seed ? *c.seed : cfg.seeds.front(); }

void write_series_csv(const fs::path& path, const SeriesDataset& d) {
  std::ofstream out(path);
  out.precision(17);
  for (std::size_t t = 0; t < d.t_total(); ++t) {
    for (std::size_t n = 0; n < d.n_nodes(); ++n) {
      if (n) out << ",";
      if (d.valid(t, n)) out << d.value(t, n);
    }
    out << "\n";
  }
}

void write_matrix_csv(const fs::path& path, const Tensor& m) {
  std::ofstream out(path);
  out.precision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m.at(i, j);
    out << "\n";
  }
}

int cmd_gen_data(const Common& c, const std::vector<std::string>& extra) {
  const ExperimentConfig cfg = load_config(c, extra);
  const std::uint64_t seed = cfg.data.seed + pick_seed(c, cfg);
  fs::create_directories(c.out);
  if (cfg.data.source == DataSource::Toy) {
    ToyConfig tc = cfg.data.toy;
    tc.seed = seed;
    const LabeledSet s = generate_toy_classification(tc);
    std::ofstream out(fs::path(c.out) / "toy.csv");
    out.precision(17);
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t j = 0; j < s.x.cols(); ++j) out << s.x.at(i, j) << ",";
      out << s.labels[i] << "\n";
    }
    std::cout << "wrote " << s.size() << " samples to " << (fs::path(c.out) / "toy.csv").string() << "\n";
    return 0;
  }
  SeriesDataset d;
  if (cfg.data.source == DataSource::Traffic) {
    TrafficConfig tc = cfg.data.traffic;
    tc.seed = seed;
    d = generate_traffic_like(tc);
  } else if (cfg.data.source == DataSource::Csv) {
    d = load_csv_series(cfg.data.csv_path, cfg.data.adjacency_path);
  } else {
    throw ConfigError("gen-data supports the traffic, toy and csv sources");
  }
  save_dataset(fs::path(c.out) / "dataset.ckpt", d);
  write_series_csv(fs::path(c.out) / "series.csv", d);
  write_matrix_csv(fs::path(c.out) / "adjacency.csv", d.graph.adjacency);
  std::cout << "wrote " << d.t_total() << " x " << d.n_nodes() << " series to " << c.out << "\n";
  return 0;
}

int cmd_cnp_compare(const Common& c, const ExperimentConfig& cfg) {
  std::vector<std::uint64_t> seeds = c.seed ? std::vector<std::uint64_t>{*c.seed} : cfg.seeds;
  Json runs = Json::array();
  std::size_t nll_wins = 0, rmse_wins = 0;
  for (std::uint64_t s : seeds) {
    const CnpComparison cmp = run_cnp_comparison(cfg, s);
    nll_wins += *cmp.nll_arm.nll < *cmp.cov_arm.nll;
    rmse_wins += cmp.cov_arm.test.rmse <= cmp.nll_arm.test.rmse;
    runs.push_back(to_json(cmp));
    std::cout << "seed " << s << ": nll arm nll=" << *cmp.nll_arm.nll << " rmse=" << cmp.nll_arm.test.rmse
              << " | cov arm nll=" << *cmp.cov_arm.nll << " rmse=" << cmp.cov_arm.test.rmse
              << " | gp rmse=" << cmp.gp_rmse << "\n";
  }
  Json j{{"runs", runs},
         {"summary", {{"seeds", seeds.size()}, {"nll_arm_better_nll", nll_wins}, {"cov_arm_rmse_not_worse", rmse_wins}}}};
  write_json(fs::path(c.out) / "result.json", j);
  return 0;
}

int cmd_train(const Common& c, const std::vector<std::string>& extra) {
  const ExperimentConfig cfg = load_config(c, extra);
  if (cfg.model == ModelKind::Cnp && cfg.objective == Objective::NllVsCovAb) return cmd_cnp_compare(c, cfg);
  const std::uint64_t seed = pick_seed(c, cfg);
  const RunResult r = train(cfg, seed);
  const fs::path out(c.out);
  write_json(out / "result.json", to_json(r));
  write_trace_csv(out / "trace.csv", r);
  save_params(out / "model.ckpt", r.params);
  std::ofstream(out / "config.cfg") << cfg.to_tree().to_text();
  std::cout << "seed " << seed << ": rmse=" << r.test.rmse << " mae=" << r.test.mae;
  if (r.accuracy) std::cout << " accuracy=" << *r.accuracy;
  if (r.nll) std::cout << " nll=" << *r.nll;
  std::cout << " epochs=" << r.epochs_run << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::vector<std::string>& extra) {
  const ExperimentConfig cfg = load_config(c, extra);
  const RunResult r = evaluate(cfg, pick_seed(c, cfg), load_params(checkpoint));
  write_json(fs::path(c.out) / "result.json", to_json(r));
  std::cout << "rmse=" << r.test.rmse << " mae=" << r.test.mae << " mape=" << r.test.mape << "\n";
  return 0;
}

int cmd_diagnose(const Common& c, const std::string& checkpoint, const std::string& kind,
                 const std::vector<std::string>& extra) {
  const ExperimentConfig cfg = load_config(c, extra);
  if (kind != "all" && kind != "cross_term" && kind != "alignment" && kind != "basis") {
    throw ConfigError("unknown diagnostic kind '" + kind + "'");
  }
  const DiagnosticsBundle b = diagnose(cfg, pick_seed(c, cfg), load_params(checkpoint));
  const fs::path out(c.out);
  Json j;
  if (kind == "all" || kind == "cross_term") {
    j["cross_term"] = to_json(b.cross_term);
    write_cross_term_csv(out / "cross_term.csv", b.cross_term);
  }
  if (kind == "all" || kind == "alignment") {
    j["alignment"] = {{"mean_frobenius_gap", b.alignment.mean_frobenius_gap()}, {"steps", b.alignment.frobenius_gap.size()}};
    write_alignment_csv(out / "trace.csv", b.alignment);
  }
  if ((kind == "all" || kind == "basis") && !b.basis.time_index.empty()) {
    j["basis"] = {{"node", b.basis.node},
                  {"output", b.basis.output},
                  {"median_correlation", b.basis.median_correlation ? Json(*b.basis.median_correlation) : Json()}};
    write_basis_csv(out / "basis.csv", b.basis);
  }
  write_json(out / "diagnostics.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct XY {
  Tensor x;
  std::vector<double> y;
};

// Last column is the target, the others are inputs.
XY read_xy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0, cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0) throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
      row.push_back(v);
    }
    if (cols == 0) cols = row.size();
    if (row.size() != cols || cols < 2) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(std::max<std::size_t>(cols, 2)) +
                       " columns");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": no data rows");
  XY xy;
  xy.x = Tensor(Shape{rows.size(), cols - 1});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j + 1 < cols; ++j) xy.x.at(i, j) = rows[i][j];
    xy.y.push_back(rows[i].back());
  }
  return xy;
}

int cmd_gp_fit(const Common& c, const std::string& data_path, const std::string& test_path,
               const std::string& kernel) {
  const XY train = read_xy(data_path);
  GpModel best;
  double best_ll = -std::numeric_limits<double>::infinity();
  const std::vector<double> noise_grid{1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  const std::vector<double> var_grid{0.1, 1.0, 10.0};
  const std::vector<double> ls_grid =
      kernel == "rbf" ? std::vector<double>{0.1, 0.3, 1.0, 3.0, 10.0} : std::vector<double>{1.0};
  if (kernel != "rbf" && kernel != "linear") throw ConfigError("unknown kernel '" + kernel + "'");
  for (double ls : ls_grid)
    for (double sv : var_grid)
      for (double nv : noise_grid) {
        GpModel m;
        m.kernel.kind = kernel == "rbf" ? Kernel::Kind::Rbf : Kernel::Kind::Linear;
        m.kernel.lengthscale = ls;
        m.kernel.signal_var = sv;
        m.noise_var = nv;
        double ll = 0.0;
        try {
          ll = gp_log_likelihood(m, train.x, train.y);
        } catch (const NumericError&) {
          continue;
        }
        if (ll > best_ll) {
          best_ll = ll;
          best = m;
        }
      }
  if (!std::isfinite(best_ll)) throw NumericError("no grid point gave a finite log-likelihood");
  Json j{{"kernel", kernel},
         {"lengthscale", best.kernel.lengthscale},
         {"signal_var", best.kernel.signal_var},
         {"noise_var", best.noise_var},
         {"log_likelihood", best_ll},
         {"n", train.y.size()}};
  if (!test_path.empty()) {
    const XY test = read_xy(test_path);
    const GpPosterior post = gp_posterior(best, train.x, train.y, test.x);
    j["test_rmse"] = evaluate_metrics(post.mean, test.y).rmse;
    j["test_mean"] = post.mean;
    j["test_variance"] = post.variance;
  }
  write_json(fs::path(c.out) / "gp.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<std::string>& extra) {
  const ExperimentConfig cfg = load_config(c, extra);
  const SweepResult s = sweep(cfg);
  const fs::path out(c.out);
  write_sweep_csv(out / "sweep.csv", s);
  Json cells = Json::array();
  for (const auto& cell : s.cells) {
    Json j = to_json(cell.result);
    j["sweep_value"] = cell.value;
    j["arm"] = cell.arm;
    cells.push_back(j);
  }
  write_json(out / "result.json", Json{{"axis", to_string(s.axis)}, {"runs", cells}});
  std::cout << sweep_csv(s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance-loss training and diagnostics"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, kind = "all", data_path, test_path, kernel = "rbf";
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("-c,--config", common.config, "config file");
    sub->add_option("-o,--out", common.out, "output directory");
    sub->add_option("--seed", seed_value, "run seed (default: first configured seed)");
    sub->allow_extras();
  };
  auto* gen = app.add_subcommand("gen-data", "generate or convert a dataset");
  auto* tr = app.add_subcommand("train", "train one seed and write result.json, trace.csv, model.ckpt");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* dg = app.add_subcommand("diagnose", "cross-term, alignment and basis-decomposition diagnostics");
  auto* gp = app.add_subcommand("gp-fit", "exact GP fit over a fixed hyperparameter grid");
  auto* sw = app.add_subcommand("sweep", "lambda / noise / batch-size sweep");
  auto* cn = app.add_subcommand("cnp-compare", "NLL-trained vs covariance-trained CNP");
  for (auto* s : {gen, tr, ev, dg, sw, cn}) add_common(s);
  add_common(gp, false);
  ev->add_option("--checkpoint", checkpoint, "parameter checkpoint")->required();
  dg->add_option("--checkpoint", checkpoint, "parameter checkpoint")->required();
  dg->add_option("--kind", kind, "all | cross_term | alignment | basis");
  gp->add_option("--data", data_path, "training CSV, last column is the target")->required();
  gp->add_option("--test", test_path, "optional test CSV");
  gp->add_option("--kernel", kernel, "rbf | linear");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigExit;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) common.seed = seed_value;
    const std::vector<std::string> extra = sub->remaining();
    fs::create_directories(common.out);
    if (sub == gen) return cmd_gen_data(common, extra);
    if (sub == tr) return cmd_train(common, extra);
    if (sub == ev) return cmd_eval(common, checkpoint, extra);
    if (sub == dg) return cmd_diagnose(common, checkpoint, kind, extra);
    if (sub == gp) {
      if (!extra.empty()) throw ConfigError("unexpected argument '" + extra.front() + "'");
      return cmd_gp_fit(common, data_path, test_path, kernel);
    }
    if (sub == sw) return cmd_sweep(common, extra);
    if (sub == cn) return cmd_cnp_compare(common, load_config(common, extra));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
