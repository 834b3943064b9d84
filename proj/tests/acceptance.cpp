// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned here.
//
//   acceptance [--only 1,3,12] [--out DIR]
//
// Experiments read their settings from configs/*.cfg and write sweep.csv and
// result.json under DIR (default acceptance_out) for inspection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "covreg/covloss.hpp"
#include "covreg/diagnostics.hpp"
#include "covreg/gp.hpp"
#include "covreg/graph.hpp"
#include "covreg/harness.hpp"
#include "covreg/models.hpp"
#include "covreg/report.hpp"
#include "testutil.hpp"

using namespace covreg;
using testutil::grad_check;
using testutil::params_grad_error;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances and budgets ----------------------------------------

constexpr double kGradTol = 1e-4;
constexpr std::size_t kMinGradFixtures = 50;
constexpr double kGradBudgetS = 60.0;
constexpr std::size_t kReductionFixtures = 100;
constexpr double kHandTol = 1e-12;
constexpr double kGpHandTol = 1e-5;
constexpr std::size_t kIdentityFixtures = 1000;
constexpr double kIdentityTol = 1e-12;
constexpr double kAlignmentBudgetS = 600.0;
constexpr double kZeroFractionMargin = 0.10;
constexpr double kAccuracyMargin = 0.005;
constexpr double kGramRatio = 2.0;
constexpr double kSpreadRatio = 2.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_out = "acceptance_out";

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

ExperimentConfig load(const std::string& name) {
  return ExperimentConfig::from_tree(ConfigTree::load(fs::path(COVREG_CONFIG_DIR) / name));
}

void save_sweep(const std::string& tag, const SweepResult& s) {
  const fs::path dir = g_out / tag;
  fs::create_directories(dir);
  write_sweep_csv(dir / "sweep.csv", s);
  Json runs = Json::array();
  for (const auto& c : s.cells) {
    Json j = to_json(c.result);
    j["sweep_value"] = c.value;
    j["arm"] = c.arm;
    runs.push_back(j);
  }
  write_json(dir / "result.json", Json{{"axis", to_string(s.axis)}, {"runs", runs}});
}

// cell lookup: (value, arm, seed) -> result
const RunResult& cell(const SweepResult& s, double value, const std::string& arm, std::uint64_t seed) {
  for (const auto& c : s.cells)
    if (c.value == value && c.arm == arm && c.result.seed == seed) return c.result;
  throw std::runtime_error("missing sweep cell");
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double range_of(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

// Least-squares slope of y against x.
double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

ModelOutput linear_output(const Var& phi, const Var& w, const Var* bias, std::size_t nodes = 1) {
  ModelOutput out;
  out.basis = phi;
  out.last_weights = w;
  Var pred = matmul(phi, w);
  if (bias) {
    pred = add_bias(pred, *bias);
    out.bias = *bias;
  }
  out.prediction = pred;
  for (std::size_t i = 0; i < phi.shape()[0]; ++i) out.row_index.push_back({i / nodes, i % nodes});
  return out;
}

GraphSpec path_graph(std::size_t n) {
  Tensor a(Shape{n, n});
  for (std::size_t i = 0; i + 1 < n; ++i) a.at(i, i + 1) = a.at(i + 1, i) = 1.0;
  return GraphSpec::from_adjacency(a);
}

// ---- 1: gradient suite -------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  std::size_t fixtures = 0;
  auto record = [&](const std::string& group, double err) {
    worst[group] = std::max(worst[group], err);
    ++fixtures;
  };

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);

    // Dense layer with smooth activations.
    for (Activation act : {Activation::Tanh, Activation::Sigmoid}) {
      Tensor x = random_tensor(rng, {4, 3});
      auto f = [&](const std::vector<Var>& v) { return sum(square(activate(add_bias(matmul(v[0], v[1]), v[2]), act))); };
      record("dense", grad_check(f, {x, random_tensor(rng, {3, 5}), random_tensor(rng, {5})}).rel_error);
    }
    {
      // relu with pre-activations pushed away from the kink
      Tensor w = testutil::random_away_from_zero(rng, {3, 3}, 0.1);
      Tensor x = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}});
      auto f = [&](const std::vector<Var>& v) { return sum(square(relu(matmul(v[0], v[1])))); };
      record("relu", grad_check(f, {x, w}).rel_error);
    }

    // Graph convolution and gated temporal convolution.
    {
      const GraphSpec g = path_graph(4);
      auto f = [&](const std::vector<Var>& v) {
        return sum(square(gcn_layer(v[0], g, v[1], &v[2], Activation::Tanh)));
      };
      record("gcn", grad_check(f, {random_tensor(rng, {2, 4, 3}), random_tensor(rng, {3, 2}), random_tensor(rng, {2})})
                        .rel_error);
    }
    {
      auto f = [&](const std::vector<Var>& v) {
        return sum(square(temporal_conv(v[0], 3, v[1], &v[2], Activation::Glu)));
      };
      record("temporal_conv",
             grad_check(f, {random_tensor(rng, {2, 5, 3, 2}), random_tensor(rng, {6, 4}), random_tensor(rng, {4})})
                 .rel_error);
    }

    // Whole models.
    {
      MlpConfig cfg{{4, 5, 3, 2}, Activation::Tanh, true, "mlp"};
      Params p = init_mlp(cfg, rng);
      Tensor x = random_tensor(rng, {3, 4}), y = random_tensor(rng, {3, 2});
      record("mlp", params_grad_error(p, [&](const Binding& b) {
               return mean(square(sub(mlp_forward(b, b.tape().constant(x), cfg).prediction, b.tape().constant(y))));
             }));
    }
    {
      StgcnConfig cfg;
      cfg.n_nodes = 3;
      cfg.t_in = 9;
      cfg.s_out = 2;
      cfg.temporal_channels = 2;
      cfg.spatial_channels = 2;
      cfg.basis_dim = 3;
      cfg.basis_activation = Activation::Tanh;
      Params p = init_stgcn(cfg, rng);
      for (auto& [name, t] : p.entries())
        for (auto& v : t.values()) v += 0.05;
      const GraphSpec g = path_graph(3);
      Tensor x = random_tensor(rng, {2, 9, 3, 1}), y = random_tensor(rng, {2, 3, 2});
      record("stgcn_lite", params_grad_error(p, [&](const Binding& b) {
               return mean(square(sub(stgcn_lite_forward(b, b.tape().constant(x), g, cfg).prediction,
                                      b.tape().constant(y))));
             }));
    }
    {
      CnpConfig cfg;
      cfg.encoder_hidden = {4};
      cfg.r_dim = 3;
      cfg.decoder_hidden = {4};
      cfg.act = Activation::Tanh;
      Params p = init_cnp(cfg, rng);
      CnpContext ctx{random_tensor(rng, {3, 1}), random_tensor(rng, {3, 1}), random_tensor(rng, {4, 1})};
      Tensor y = random_tensor(rng, {4, 1});
      record("cnp_nll", params_grad_error(p, [&](const Binding& b) {
               CnpOutput o = cnp_forward(b, ctx, cfg);
               return cnp_nll(o.mu, o.log_sigma, b.tape().constant(y));
             }));
    }

    // Covariance estimators: centered and residual (plus raw), as a
    // projected scalar so every entry of Σ̃ contributes.
    for (MeanMode mm : {MeanMode::BatchMean, MeanMode::ResidualZeroMean, MeanMode::ZeroMean}) {
      CovLossConfig cfg;
      cfg.mean_mode = mm;
      cfg.detach_target = false;
      Tensor proj = random_tensor(rng, {4, 4});
      auto f = [&](const std::vector<Var>& v) {
        ModelOutput out = linear_output(v[0], v[1], nullptr);
        BatchViews views = make_batch_views(out, v[2], cfg);
        return sum(mul(empirical_covariance(views, cfg), v[0].tape().constant(proj)));
      };
      record("empirical_covariance",
             grad_check(f, {random_tensor(rng, {4, 3}), random_tensor(rng, {3, 2}), random_tensor(rng, {4, 2})})
                 .rel_error);
    }

    // basis_gram for both sigma modes, σ² differentiable.
    for (SigmaMode sm : {SigmaMode::MeasuredLastLayer, SigmaMode::FixedOne}) {
      CovLossConfig cfg;
      cfg.sigma_mode = sm;
      cfg.detach_sigma = false;
      Tensor proj = random_tensor(rng, {4, 4});
      auto f = [&](const std::vector<Var>& v) {
        ModelOutput out = linear_output(v[0], v[1], nullptr);
        BatchViews views = make_batch_views(out, v[0].tape().constant(Tensor(Shape{4, 2})), cfg);
        return sum(mul(basis_gram(views, v[1], cfg), v[0].tape().constant(proj)));
      };
      record("basis_gram", grad_check(f, {random_tensor(rng, {4, 3}), random_tensor(rng, {3, 2})}).rel_error);
    }

    // covariance_loss in both arguments.
    {
      auto f = [](const std::vector<Var>& v) { return covariance_loss(v[0], v[1]); };
      record("covariance_loss", grad_check(f, {random_tensor(rng, {5, 5}), random_tensor(rng, {5, 5})}).rel_error);
    }

    // combined_objective, fully differentiable path and both groupings.
    for (RowGrouping rg : {RowGrouping::FlattenSampleNode, RowGrouping::PerNodeAcrossBatch}) {
      CovLossConfig cfg;
      cfg.lambda = 0.7;
      cfg.detach_target = false;
      cfg.detach_sigma = false;
      cfg.row_grouping = rg;
      Tensor y = random_tensor(rng, {6, 2});
      auto f = [&](const std::vector<Var>& v) {
        return combined_objective(linear_output(v[0], v[1], &v[2], 2), v[0].tape().constant(y), cfg);
      };
      record("combined_objective",
             grad_check(f, {random_tensor(rng, {6, 3}), random_tensor(rng, {3, 2}), random_tensor(rng, {2})})
                 .rel_error);
    }
  }

  const double elapsed = seconds_since(t0);
  double overall = 0;
  std::string groups;
  for (const auto& [g, e] : worst) {
    overall = std::max(overall, e);
    groups += " " + g + "=" + num(e, 2);
  }
  Outcome o;
  o.pass = fixtures >= kMinGradFixtures && overall <= kGradTol && elapsed <= kGradBudgetS;
  o.detail = std::to_string(fixtures) + " fixtures, worst rel err " + num(overall, 3) + " (tol " + num(kGradTol) +
             "), " + num(elapsed, 3) + " s (budget " + num(kGradBudgetS) + " s);" + groups;
  return o;
}

// ---- 2: reduction identity ------------------------------------------------------

Outcome reduction_identity() {
  Rng rng(7);
  std::size_t equal = 0;
  for (std::size_t i = 0; i < kReductionFixtures; ++i) {
    const std::size_t r = 2 + rng() % 6, f = 1 + rng() % 5, s = 1 + rng() % 3;
    Tape tape;
    Var phi = tape.leaf(random_tensor(rng, {r, f})), w = tape.leaf(random_tensor(rng, {f, s}));
    Var b = tape.leaf(random_tensor(rng, {s}));
    Var y = tape.constant(random_tensor(rng, {r, s}));
    ModelOutput out = linear_output(phi, w, &b);
    CovLossConfig cfg;
    cfg.lambda = 0.0;
    cfg.mean_mode = static_cast<MeanMode>(i % 3);
    const double a = combined_objective(out, y, cfg).value().item();
    const double m = mse(out.prediction, y).value().item();
    equal += std::memcmp(&a, &m, sizeof(double)) == 0;
  }

  ExperimentConfig cov = load("smoke.cfg");
  cov.covloss.lambda = 0.0;
  ExperimentConfig plain = cov;
  plain.objective = Objective::Mse;
  std::vector<Params> ta, tb;
  std::vector<double> la, lb;
  TrainHooks ha, hb;
  ha.on_step = [&](const StepRecord& s) {
    ta.push_back(*s.params);
    la.push_back(s.loss);
  };
  hb.on_step = [&](const StepRecord& s) {
    tb.push_back(*s.params);
    lb.push_back(s.loss);
  };
  const RunResult ra = train(cov, 0, &ha), rb = train(plain, 0, &hb);
  bool same = ta.size() == tb.size() && !ta.empty() && ra.params == rb.params;
  for (std::size_t i = 0; same && i < ta.size(); ++i)
    same = ta[i] == tb[i] && std::memcmp(&la[i], &lb[i], sizeof(double)) == 0;

  Outcome o;
  o.pass = equal == kReductionFixtures && same;
  o.detail = std::to_string(equal) + "/" + std::to_string(kReductionFixtures) + " fixtures bitwise equal; " +
             std::to_string(ta.size()) + "-step trajectory " + (same ? "identical" : "DIFFERS");
  return o;
}

// ---- 3: hand fixtures ------------------------------------------------------------

Outcome hand_fixtures() {
  Tape tape;
  const double cov = covariance_loss(tape.constant(Tensor::matrix({{1, -1}, {-1, 1}})),
                                     tape.constant(Tensor::matrix({{1, 0}, {0, 1}})))
                         .value()
                         .item();
  const double w[] = {1, 1}, a[] = {1, 0}, b[] = {0, 1};
  const double ct = cross_term_contribution(a, b, w);
  const double y[] = {0.0};
  const double ll = gaussian_log_likelihood(Tensor::matrix({{1}}), y);
  Outcome o;
  o.pass = std::abs(cov - 0.5) <= kHandTol && std::abs(ct - 1.0) <= kHandTol && std::abs(ll + 0.91894) <= kGpHandTol;
  o.detail = "covariance_loss=" + num(cov, 17) + " (0.5), cross_term=" + num(ct, 17) + " (1), gp loglik=" +
             num(ll, 10) + " (-0.91894 within " + num(kGpHandTol) + ")";
  return o;
}

// ---- 4: constraint identity ---------------------------------------------------------

Outcome constraint_identity() {
  Rng rng(11);
  double worst = 0;
  for (std::size_t i = 0; i < kIdentityFixtures; ++i) {
    const std::size_t f = 1 + rng() % 12;
    Tensor x = random_tensor(rng, {f}, -2, 2), xp = random_tensor(rng, {f}, -2, 2), w = random_tensor(rng, {f}, -2, 2);
    const double ct = cross_term_contribution(x.values(), xp.values(), w.values());
    const double cr = constraint_residual(x.values(), xp.values(), w.values());
    worst = std::max(worst, std::abs(ct - cr));
  }
  return {worst <= kIdentityTol, std::to_string(kIdentityFixtures) + " fixtures, max |residual - cross_term| = " +
                                     num(worst, 3) + " (tol " + num(kIdentityTol) + ")"};
}

// ---- 5-7: traffic lambda sweep ------------------------------------------------------

struct LambdaSweep {
  SweepResult result;
  double seconds = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambdas;
};

const LambdaSweep& lambda_sweep() {
  static std::optional<LambdaSweep> cache;
  if (!cache) {
    LambdaSweep s;
    const ExperimentConfig cfg = load("traffic_lambda.cfg");
    s.seeds = cfg.seeds;
    s.lambdas = cfg.sweep.values;
    const auto t0 = Clock::now();
    s.result = sweep(cfg);
    s.seconds = seconds_since(t0);
    save_sweep("traffic_lambda", s.result);
    cache = std::move(s);
  }
  return *cache;
}

Outcome alignment_effect() {
  const LambdaSweep& s = lambda_sweep();
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t seed : s.seeds) {
    const AlignmentSummary& a1 = *cell(s.result, 1.0, "lambda", seed).alignment;
    const AlignmentSummary& a0 = *cell(s.result, 0.0, "lambda", seed).alignment;
    const bool win = a1.final_gap < a1.initial_gap && a1.final_gap < a0.final_gap;
    wins += win;
    per_seed += " seed " + std::to_string(seed) + ": init " + num(a1.initial_gap) + " -> λ1 " + num(a1.final_gap) +
                " vs λ0 " + num(a0.final_gap) + ";";
  }
  const std::size_t need = (2 * s.seeds.size() + 2) / 3;
  return {wins >= need && s.seconds <= kAlignmentBudgetS,
          std::to_string(wins) + "/" + std::to_string(s.seeds.size()) + " seeds (need " + std::to_string(need) +
              "), sweep " + num(s.seconds, 4) + " s (budget " + num(kAlignmentBudgetS) + " s);" + per_seed};
}

Outcome cross_term_effect() {
  const LambdaSweep& s = lambda_sweep();
  std::vector<double> z0, z1;
  std::size_t monotone = 0;
  std::string per_seed, terms;
  for (std::uint64_t seed : s.seeds) {
    std::vector<double> z, t;
    for (double l : s.lambdas) {
      const CrossTermSummary& c = *cell(s.result, l, "lambda", seed).cross_term;
      z.push_back(c.zero_fraction);
      t.push_back(c.term_zero_fraction);
    }
    z0.push_back(cell(s.result, 0.0, "lambda", seed).cross_term->zero_fraction);
    z1.push_back(cell(s.result, 1.0, "lambda", seed).cross_term->zero_fraction);
    monotone += std::is_sorted(z.begin(), z.end());
    per_seed += " seed " + std::to_string(seed) + ":";
    terms += " seed " + std::to_string(seed) + ":";
    for (std::size_t i = 0; i < z.size(); ++i) {
      per_seed += " " + num(z[i], 3);
      terms += " " + num(t[i], 3);
    }
    per_seed += ";";
    terms += ";";
  }
  const std::size_t need = (2 * s.seeds.size() + 2) / 3;
  const double gain = mean_of(z1) - mean_of(z0);
  return {gain >= kZeroFractionMargin && monotone >= need,
          "zero_fraction λ1 - λ0 = " + num(gain * 100, 3) + " pp (need " + num(kZeroFractionMargin * 100) +
              "), non-decreasing over λ grid in " + std::to_string(monotone) + "/" + std::to_string(s.seeds.size()) +
              ";" + per_seed + " [info] per-term zero fraction:" + terms};
}

Outcome basis_effect() {
  const LambdaSweep& s = lambda_sweep();
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t seed : s.seeds) {
    const double c1 = cell(s.result, 1.0, "lambda", seed).median_correlation.value_or(NAN);
    const double c0 = cell(s.result, 0.0, "lambda", seed).median_correlation.value_or(NAN);
    wins += c1 > c0;
    per_seed += " seed " + std::to_string(seed) + ": λ1 " + num(c1) + " vs λ0 " + num(c0) + ";";
  }
  const std::size_t need = (2 * s.seeds.size() + 2) / 3;
  return {wins >= need, std::to_string(wins) + "/" + std::to_string(s.seeds.size()) + " seeds (need " +
                            std::to_string(need) + ");" + per_seed};
}

// ---- 8: toy classification ------------------------------------------------------------

Outcome classification_direction() {
  const ExperimentConfig cfg = load("toy_blobs.cfg");
  const SweepResult s = sweep(cfg);
  save_sweep("toy_blobs", s);
  std::vector<double> acc0, acc1, same, cross;
  for (std::uint64_t seed : cfg.seeds) {
    const RunResult& r0 = cell(s, 0.0, "lambda", seed);
    const RunResult& r1 = cell(s, 1.0, "lambda", seed);
    acc0.push_back(*r0.accuracy);
    acc1.push_back(*r1.accuracy);
    same.push_back(*r1.gram_same_class);
    cross.push_back(*r1.gram_cross_class);
  }
  const double ratio = mean_of(same) / mean_of(cross);
  const bool acc_ok = mean_of(acc1) >= mean_of(acc0) - kAccuracyMargin;
  return {acc_ok && ratio >= kGramRatio,
          "accuracy Cov " + num(mean_of(acc1) * 100, 4) + "% vs plain " + num(mean_of(acc0) * 100, 4) +
              "% (margin " + num(kAccuracyMargin * 100) + " pp); Gram same/cross = " + num(mean_of(same)) + "/" +
              num(mean_of(cross)) + " = " + num(ratio) + " (need " + num(kGramRatio) + ")"};
}

// ---- 9: noise robustness -----------------------------------------------------------------

Outcome noise_robustness() {
  const ExperimentConfig cfg = load("traffic_noise.cfg");
  const SweepResult s = sweep(cfg);
  save_sweep("traffic_noise", s);
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t seed : cfg.seeds) {
    std::vector<double> y0, y1;
    for (double k : cfg.sweep.values) {
      y0.push_back(cell(s, k, "baseline", seed).test.rmse);
      y1.push_back(cell(s, k, "treatment", seed).test.rmse);
    }
    const double s0 = slope(cfg.sweep.values, y0), s1 = slope(cfg.sweep.values, y1);
    wins += s1 < s0;
    per_seed += " seed " + std::to_string(seed) + ": slope λ1 " + num(s1, 3) + " vs λ0 " + num(s0, 3) + ";";
  }
  const std::size_t need = (2 * cfg.seeds.size() + 2) / 3;
  return {wins >= need, std::to_string(wins) + "/" + std::to_string(cfg.seeds.size()) + " seeds (need " +
                            std::to_string(need) + ");" + per_seed};
}

// ---- 10: CNP comparison ---------------------------------------------------------------------

Outcome cnp_comparison() {
  const ExperimentConfig cfg = load("cnp_lines.cfg");
  std::size_t nll_wins = 0, rmse_wins = 0;
  std::string per_seed;
  Json runs = Json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const CnpComparison c = run_cnp_comparison(cfg, seed);
    runs.push_back(to_json(c));
    nll_wins += *c.nll_arm.nll < *c.cov_arm.nll;
    rmse_wins += c.cov_arm.test.rmse <= c.nll_arm.test.rmse;
    per_seed += " seed " + std::to_string(seed) + ": nll " + num(*c.nll_arm.nll) + "/" + num(*c.cov_arm.nll) +
                ", rmse " + num(c.nll_arm.test.rmse) + "/" + num(c.cov_arm.test.rmse) + ", gp rmse " +
                num(c.gp_rmse, 3) + ";";
  }
  fs::create_directories(g_out / "cnp_lines");
  write_json(g_out / "cnp_lines" / "result.json", Json{{"runs", runs}});
  const std::size_t n = cfg.seeds.size(), need = n / 2 + 1;
  return {nll_wins >= need && rmse_wins >= need,
          "NLL arm better NLL " + std::to_string(nll_wins) + "/" + std::to_string(n) + ", Cov arm RMSE <= NLL arm " +
              std::to_string(rmse_wins) + "/" + std::to_string(n) + " (need " + std::to_string(need) +
              "); (nll arm/cov arm)" + per_seed};
}

// ---- 11: batch-size scalability ------------------------------------------------------------

Outcome scalability() {
  const ExperimentConfig cfg = load("toy_batch.cfg");
  const SweepResult s = sweep(cfg);
  save_sweep("toy_batch", s);
  const bool cls = cfg.classification();
  std::vector<double> size_means, seed_ranges, cov_time, cov_mem;
  for (double b : cfg.sweep.values) {
    std::vector<double> m;
    double t = 0, mem = 0;
    for (std::uint64_t seed : cfg.seeds) {
      const RunResult& r = cell(s, b, "treatment", seed);
      m.push_back(cls ? r.accuracy.value_or(0.0) : r.test.rmse);
      t += r.cov_time_per_step_s;
      mem += static_cast<double>(r.cov_peak_mem_bytes);
    }
    size_means.push_back(mean_of(m));
    seed_ranges.push_back(range_of(m));
    cov_time.push_back(t / static_cast<double>(cfg.seeds.size()));
    cov_mem.push_back(mem / static_cast<double>(cfg.seeds.size()));
  }
  const double size_spread = range_of(size_means), seed_spread = mean_of(seed_ranges);
  const auto increasing = [](const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
  };
  std::string trend;
  for (std::size_t i = 0; i < cov_time.size(); ++i)
    trend += " b=" + num(cfg.sweep.values[i]) + ": " + num(cov_time[i] * 1e6, 3) + " us/step, " +
             num(cov_mem[i] / 1e3, 4) + " kB;";
  return {size_spread <= kSpreadRatio * seed_spread && increasing(cov_time) && increasing(cov_mem),
          std::string(cls ? "accuracy" : "RMSE") + " spread across sizes " + num(size_spread, 3) + " vs seed spread " + num(seed_spread, 3) + " (ratio <= " +
              num(kSpreadRatio) + "); cov time " + (increasing(cov_time) ? "increasing" : "NOT increasing") +
              ", cov memory " + (increasing(cov_mem) ? "increasing" : "NOT increasing") + ";" + trend};
}

// ---- 12: determinism ---------------------------------------------------------------------------

Outcome determinism() {
  auto run = [](const std::string& tag) {
    const fs::path dir = g_out / "determinism" / tag;
    fs::create_directories(dir);
    const std::string cmd = std::string(COVREG_CLI) + " train -c " +
                            (fs::path(COVREG_CONFIG_DIR) / "smoke.cfg").string() + " -o " + dir.string() +
                            " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("cli run failed");
    std::ifstream in(dir / "result.json");
    return without_timing(Json::parse(in)).dump();
  };
  const std::string a = run("first"), b = run("second");
  return {a == b, "two CLI runs of smoke.cfg: result.json without timing " +
                      std::string(a == b ? "identical" : "DIFFERS") + " (" + std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string out = g_out.string();
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--out", out, "directory for experiment outputs");
  CLI11_PARSE(app, argc, argv);
  g_out = out;
  fs::create_directories(g_out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"reduction identity", reduction_identity},
      {"hand fixtures", hand_fixtures},
      {"constraint identity", constraint_identity},
      {"alignment effect", alignment_effect},
      {"cross-term effect", cross_term_effect},
      {"basis-decomposition effect", basis_effect},
      {"classification direction", classification_direction},
      {"noise robustness", noise_robustness},
      {"cnp comparison", cnp_comparison},
      {"batch-size scalability", scalability},
      {"determinism", determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
