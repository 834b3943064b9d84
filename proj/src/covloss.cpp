#include "covreg/covloss.hpp"

#include <array>
#include <cmath>

#include "covreg/errors.hpp"

namespace covreg {

void CovLossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("covloss.lambda must be finite and non-negative");
  }
}

MeanMode parse_mean_mode(const std::string& s) {
  if (s == "zero_mean") return MeanMode::ZeroMean;
  if (s == "residual_zero_mean") return MeanMode::ResidualZeroMean;
  if (s == "batch_mean") return MeanMode::BatchMean;
  throw ConfigError("unknown mean mode '" + s + "'");
}

SigmaMode parse_sigma_mode(const std::string& s) {
  if (s == "measured_last_layer") return SigmaMode::MeasuredLastLayer;
  if (s == "fixed_one") return SigmaMode::FixedOne;
  throw ConfigError("unknown sigma mode '" + s + "'");
}

RowGrouping parse_row_grouping(const std::string& s) {
  if (s == "flatten_sample_node") return RowGrouping::FlattenSampleNode;
  if (s == "per_node_across_batch") return RowGrouping::PerNodeAcrossBatch;
  throw ConfigError("unknown row grouping '" + s + "'");
}

std::string to_string(MeanMode m) {
  switch (m) {
    case MeanMode::ZeroMean: return "zero_mean";
    case MeanMode::ResidualZeroMean: return "residual_zero_mean";
    case MeanMode::BatchMean: return "batch_mean";
  }
  return "?";
}

std::string to_string(SigmaMode m) {
  return m == SigmaMode::MeasuredLastLayer ? "measured_last_layer" : "fixed_one";
}

std::string to_string(RowGrouping g) {
  return g == RowGrouping::FlattenSampleNode ? "flatten_sample_node" : "per_node_across_batch";
}

BatchViews make_batch_views(const ModelOutput& out, const Var& targets, const CovLossConfig& cfg) {
  if (targets.shape() != out.prediction.shape()) {
    throw DimensionError("targets " + shape_string(targets.shape()) + " do not match prediction " +
                         shape_string(out.prediction.shape()));
  }
  const std::size_t r = out.rows();
  if (r == 0) throw ContractError("empty batch");
  const std::size_t s = targets.value().size() / r;
  if (s * r != targets.value().size()) throw DimensionError("targets cannot be split into basis rows");
  Var m;
  switch (cfg.mean_mode) {
    case MeanMode::ZeroMean:
      m = reshape(targets, Shape{r, s});
      break;
    case MeanMode::ResidualZeroMean:
      m = reshape(sub(targets, out.prediction), Shape{r, s});
      break;
    case MeanMode::BatchMean: {
      Var y = reshape(targets, Shape{r, s});
      const std::array<std::size_t, 1> rows_axis{0};
      Var col_mean = mean(y, rows_axis);
      m = add_bias(y, scale(col_mean, -1.0));
      break;
    }
  }
  return BatchViews{out.basis, m, out.row_index};
}

Var empirical_covariance(const BatchViews& v, const CovLossConfig& cfg) {
  const Shape& s = v.target_rows.shape();
  if (s.size() != 2 || s[0] != v.row_index.size() || v.basis.shape()[0] != s[0]) {
    throw DimensionError("batch views are misaligned");
  }
  if (s[0] < 2) throw ContractError("empirical covariance needs at least 2 rows, got " + std::to_string(s[0]));
  if (s[1] < 1) throw ContractError("empirical covariance needs at least one target column");
  Var m = cfg.detach_target ? detach(v.target_rows) : v.target_rows;
  return scale(matmul(m, transpose(m)), 1.0 / static_cast<double>(s[1]));
}

Var basis_scale(const Var& last_weights, const CovLossConfig& cfg) {
  Tape& tape = last_weights.tape();
  if (cfg.sigma_mode == SigmaMode::FixedOne) return tape.constant(Tensor::scalar(1.0));
  Var w = cfg.detach_sigma ? detach(last_weights) : last_weights;
  Var centered = sub(w, mean(w));
  return mean(square(centered));
}

Var basis_gram(const BatchViews& v, const Var& last_weights, const CovLossConfig& cfg) {
  if (v.basis.shape().size() != 2 || v.basis.shape()[0] == 0) throw ContractError("basis must be a non-empty matrix");
  Var phi = v.basis;
  return mul(basis_scale(last_weights, cfg), matmul(phi, transpose(phi)));
}

Var covariance_loss(const Var& target_cov, const Var& gram) {
  if (target_cov.shape() != gram.shape() || target_cov.shape().size() != 2) {
    throw DimensionError("covariance_loss shape mismatch: " + shape_string(target_cov.shape()) + " and " +
                         shape_string(gram.shape()));
  }
  return mean(square(sub(target_cov, gram)));
}

Var mse(const Var& prediction, const Var& targets) {
  if (prediction.shape() != targets.shape()) {
    throw DimensionError("mse shape mismatch: " + shape_string(prediction.shape()) + " and " +
                         shape_string(targets.shape()));
  }
  return mean(square(sub(targets, prediction)));
}

namespace {

Var grouped_term(const BatchViews& v, const Var& w, const CovLossConfig& cfg) {
  return covariance_loss(empirical_covariance(v, cfg), basis_gram(v, w, cfg));
}

}  // namespace

Var covariance_term(const ModelOutput& out, const Var& targets, const CovLossConfig& cfg) {
  BatchViews all = make_batch_views(out, targets, cfg);
  if (cfg.row_grouping == RowGrouping::FlattenSampleNode) return grouped_term(all, out.last_weights, cfg);

  // One Gram per node over the samples of the batch.
  std::size_t n_nodes = 0;
  for (const auto& ri : all.row_index) n_nodes = std::max(n_nodes, ri.node + 1);
  const std::size_t f = all.basis.shape()[1], s = all.target_rows.shape()[1];
  Var total;
  for (std::size_t node = 0; node < n_nodes; ++node) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < all.row_index.size(); ++i)
      if (all.row_index[i].node == node) rows.push_back(i);
    std::vector<std::size_t> bidx, tidx;
    std::vector<RowIndex> ri;
    for (std::size_t i : rows) {
      for (std::size_t j = 0; j < f; ++j) bidx.push_back(i * f + j);
      for (std::size_t j = 0; j < s; ++j) tidx.push_back(i * s + j);
      ri.push_back(all.row_index[i]);
    }
    BatchViews v{gather(all.basis, std::move(bidx), Shape{rows.size(), f}),
                 gather(all.target_rows, std::move(tidx), Shape{rows.size(), s}), std::move(ri)};
    Var term = grouped_term(v, out.last_weights, cfg);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(n_nodes));
}

Var combined_objective(const ModelOutput& out, const Var& targets, const CovLossConfig& cfg) {
  cfg.validate();
  Var fit = mse(out.prediction, targets);
  if (cfg.lambda == 0.0) return fit;
  return add(fit, scale(covariance_term(out, targets, cfg), cfg.lambda));
}

}  // namespace covreg
