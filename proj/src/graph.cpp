#include "covreg/graph.hpp"

#include <cmath>

#include "covreg/errors.hpp"

namespace covreg {

Tensor normalized_propagation(const Tensor& adjacency) {
  const std::size_t n = adjacency.rows();
  if (adjacency.cols() != n) throw DimensionError("adjacency must be square, got " + shape_string(adjacency.shape()));
  Tensor a_tilde = adjacency;
  for (std::size_t i = 0; i < n; ++i) a_tilde.at(i, i) += 1.0;
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a_tilde.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = inv_sqrt_deg[i] * a_tilde.at(i, j) * inv_sqrt_deg[j];
  return out;
}

GraphSpec GraphSpec::from_adjacency(Tensor adjacency) {
  const std::size_t n = adjacency.rows();
  if (adjacency.cols() != n) throw DimensionError("adjacency must be square, got " + shape_string(adjacency.shape()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = adjacency.at(i, j);
      if (!std::isfinite(v) || v < 0.0) throw ContractError("adjacency entries must be finite and non-negative");
      if (v != adjacency.at(j, i)) throw ContractError("adjacency must be symmetric");
    }
  }
  GraphSpec g;
  g.n_nodes = n;
  g.propagation = normalized_propagation(adjacency);
  g.adjacency = std::move(adjacency);
  return g;
}

}  // namespace covreg
