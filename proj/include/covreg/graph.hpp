#pragma once

#include <cstddef>

#include "covreg/tensor.hpp"

namespace covreg {

// Sensor graph with its renormalized propagation matrix
// D̃^{-1/2} (A + I) D̃^{-1/2}, where D̃ is the degree matrix of A + I.
struct GraphSpec {
  std::size_t n_nodes = 0;
  Tensor adjacency;
  Tensor propagation;

  // Validates symmetry and non-negativity of `adjacency`.
  static GraphSpec from_adjacency(Tensor adjacency);
};

Tensor normalized_propagation(const Tensor& adjacency);

}  // namespace covreg
