#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "covreg/tensor.hpp"

namespace covreg {

struct Metrics {
  double mae = 0.0;
  double mape = 0.0;  // percent
  double rmse = 0.0;
  std::size_t count = 0;       // valid points
  std::size_t mape_count = 0;  // valid points with |y| >= floor
};

// MAE, RMSE over points with mask != 0 (an empty mask means all valid);
// MAPE additionally skips labels with |y| < mape_floor. Throws ContractError
// when no point is valid.
Metrics evaluate_metrics(std::span<const double> pred, std::span<const double> y, std::span<const double> mask = {},
                         double mape_floor = 1e-3);

// Share of rows whose argmax matches the label.
double accuracy(const Tensor& scores, const std::vector<std::size_t>& labels);

}  // namespace covreg
