#pragma once

#include <string>
#include <vector>

#include "covreg/autodiff.hpp"
#include "covreg/models.hpp"

namespace covreg {

// How target rows are centered before the outer product.
enum class MeanMode {
  ZeroMean,          // raw Y, mean assumed zero (classification)
  ResidualZeroMean,  // Y - Ŷ, mean assumed zero (regression)
  BatchMean,         // Y minus its per-column batch mean
};

// Scale applied to the basis Gram matrix.
enum class SigmaMode {
  MeasuredLastLayer,  // population variance of all last-layer weights
  FixedOne,
};

enum class RowGrouping {
  FlattenSampleNode,   // one Gram over every (sample, node) row
  PerNodeAcrossBatch,  // one Gram per node over the batch, losses averaged
};

struct CovLossConfig {
  double lambda = 0.0;
  MeanMode mean_mode = MeanMode::ResidualZeroMean;
  SigmaMode sigma_mode = SigmaMode::MeasuredLastLayer;
  bool detach_target = true;
  bool detach_sigma = true;
  RowGrouping row_grouping = RowGrouping::FlattenSampleNode;

  void validate() const;
};

MeanMode parse_mean_mode(const std::string& s);
SigmaMode parse_sigma_mode(const std::string& s);
RowGrouping parse_row_grouping(const std::string& s);
std::string to_string(MeanMode m);
std::string to_string(SigmaMode m);
std::string to_string(RowGrouping g);

// Basis rows and the matching target rows (already centered per mean_mode),
// sharing one row index.
struct BatchViews {
  Var basis;        // [R x F']
  Var target_rows;  // [R x S]
  std::vector<RowIndex> row_index;
};

// Builds views from a model output and targets shaped like its prediction.
BatchViews make_batch_views(const ModelOutput& out, const Var& targets, const CovLossConfig& cfg);

// Σ̃ = M Mᵀ / S. Constant on the tape when cfg.detach_target.
Var empirical_covariance(const BatchViews& v, const CovLossConfig& cfg);

// σ² of the last-layer weights per cfg.sigma_mode (rank-0).
Var basis_scale(const Var& last_weights, const CovLossConfig& cfg);

// K = σ² Φ Φᵀ.
Var basis_gram(const BatchViews& v, const Var& last_weights, const CovLossConfig& cfg);

// (1/R²) Σ_ij (Σ̃_ij − K_ij)².
Var covariance_loss(const Var& target_cov, const Var& gram);

Var mse(const Var& prediction, const Var& targets);

// Covariance term alone, honouring cfg.row_grouping.
Var covariance_term(const ModelOutput& out, const Var& targets, const CovLossConfig& cfg);

// MSE + λ · covariance term. With λ == 0 the result is the MSE node itself.
Var combined_objective(const ModelOutput& out, const Var& targets, const CovLossConfig& cfg);

}  // namespace covreg
