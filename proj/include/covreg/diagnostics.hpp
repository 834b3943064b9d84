#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "covreg/covloss.hpp"
#include "covreg/tensor.hpp"

namespace covreg {

// Off-diagonal bilinear mass between two basis rows:
//   Σ_ij w_i w_j Φⁱ(X) Φʲ(X') − Σ_i w_i² Φⁱ(X) Φⁱ(X').
double cross_term_contribution(std::span<const double> phi_x, std::span<const double> phi_xp,
                               std::span<const double> w);

// Same quantity as an explicit quadratic form Φ(X)ᵀ M Φ(X') with
// M_ij = w_i w_j off the diagonal and 0 on it.
double constraint_residual(std::span<const double> phi_x, std::span<const double> phi_xp,
                           std::span<const double> w);

// Full bilinear form (w·Φ(X)) (w·Φ(X')).
double full_bilinear(std::span<const double> phi_x, std::span<const double> phi_xp, std::span<const double> w);

struct CrossTermHistogram {
  // Bin k counts values with |v| in [10^(lo+k), 10^(lo+k+1)); values outside
  // the range are clamped to the first/last bin. Values under epsilon go to
  // zero_count instead.
  int log10_lo = -12;
  int log10_hi = 4;
  std::size_t zero_count = 0;
  std::vector<std::size_t> counts;
};

struct CrossTermReport {
  std::vector<double> values;
  double zero_fraction = 0.0;
  double epsilon = 0.0;
  CrossTermHistogram histogram;
  // Share of the individual terms w_i w_j Φⁱ(X) Φʲ(X'), i != j, under the
  // same epsilon. Supplementary; zero_fraction is the headline number.
  double term_zero_fraction = 0.0;
  std::uint64_t seed = 0;
  bool exhaustive = true;
  std::size_t pair_count = 0;
};

struct PairSampling {
  std::size_t max_exhaustive = 1'000'000;
  std::size_t samples = 1'000'000;
  std::uint64_t seed = 0;
};

// Evaluates cross-term contributions over row pairs (i <= j, self pairs
// included) of `basis` [R x F'] with head weights [F' x S]; multi-output
// heads contribute one value per column. Without an explicit epsilon the
// zero threshold is 1e-6 x median |full bilinear form| over the same pairs.
CrossTermReport cross_term_report(const Tensor& basis, const Tensor& weights, const PairSampling& sampling,
                                  std::optional<double> epsilon = std::nullopt);

// One evaluation step: a single window with one basis row per node.
struct EvalStep {
  std::size_t time = 0;
  Tensor basis;        // [N x F']
  Tensor target_rows;  // [N x S], centered per the covariance mean mode
  Tensor prediction;   // [N x S]
  Tensor labels;       // [N x S]
};

struct AlignmentTrace {
  std::vector<std::size_t> time_index;
  std::vector<std::size_t> nodes;  // nodes whose diagonals are traced
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::vector<double>> gram_diag;    // [node][step]
  std::vector<std::vector<double>> target_var;   // [node][step]
  std::vector<std::vector<double>> gram_offdiag;  // [pair][step]
  std::vector<std::vector<double>> target_cov;    // [pair][step]
  std::vector<double> frobenius_gap;              // ‖Σ̃ − K‖_F per step

  double mean_frobenius_gap() const;
};

AlignmentTrace alignment_trace(std::span<const EvalStep> steps, const Tensor& weights,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                               const CovLossConfig& cfg);

struct BasisDecompositionTrace {
  std::size_t node = 0;
  std::size_t output = 0;
  std::vector<std::size_t> time_index;
  std::vector<std::vector<double>> components;  // [component][step] = w_i Φⁱ(X)
  std::vector<double> prediction;
  std::vector<double> label;
  // Pearson correlation of each component with the prediction; nullopt for
  // components (or predictions) with zero variance over the stream.
  std::vector<std::optional<double>> correlation;
  std::optional<double> median_correlation;
};

BasisDecompositionTrace basis_decomposition_trace(std::span<const EvalStep> steps, const Tensor& weights,
                                                  const Tensor* bias, std::size_t node, std::size_t output = 0);

// Pearson correlation; nullopt when either series is constant.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

}  // namespace covreg
