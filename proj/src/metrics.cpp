#include "covreg/metrics.hpp"

#include <cmath>

#include "covreg/errors.hpp"

namespace covreg {

Metrics evaluate_metrics(std::span<const double> pred, std::span<const double> y, std::span<const double> mask,
                         double mape_floor) {
  if (pred.size() != y.size() || (!mask.empty() && mask.size() != y.size())) {
    throw DimensionError("evaluate_metrics: prediction, label and mask lengths differ");
  }
  Metrics m;
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!mask.empty() && mask[i] == 0.0) continue;
    const double e = pred[i] - y[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++m.count;
    if (std::abs(y[i]) >= mape_floor) {
      pct_sum += std::abs(e / y[i]);
      ++m.mape_count;
    }
  }
  if (m.count == 0) throw ContractError("evaluate_metrics: no valid points to evaluate");
  const double n = static_cast<double>(m.count);
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mape = m.mape_count ? 100.0 * pct_sum / static_cast<double>(m.mape_count) : 0.0;
  return m;
}

double accuracy(const Tensor& scores, const std::vector<std::size_t>& labels) {
  if (scores.rank() != 2 || scores.rows() != labels.size()) throw DimensionError("accuracy: scores/labels mismatch");
  if (labels.empty()) throw ContractError("accuracy: empty evaluation set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.cols(); ++j)
      if (scores.at(i, j) > scores.at(i, best)) best = j;
    hit += best == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace covreg
