#pragma once

#include <functional>
#include <span>
#include <vector>

#include "covreg/tensor.hpp"

namespace covreg {

struct Kernel {
  enum class Kind { Rbf, Linear };
  Kind kind = Kind::Rbf;
  double lengthscale = 1.0;
  double signal_var = 1.0;  // RBF amplitude, or the Linear kernel variance

  double operator()(std::span<const double> a, std::span<const double> b) const;
};

struct GpModel {
  Kernel kernel;
  double noise_var = 1e-2;
  double jitter = 0.0;  // extra diagonal beyond noise_var; escalated on failure
};

// Gram matrix over rows of x1 [n x d] and x2 [m x d].
Tensor kernel_matrix(const Kernel& k, const Tensor& x1, const Tensor& x2);

// log p(y | X) = −½ yᵀK⁻¹y − ½ log|K| − (n/2) log 2π for K = k(X, X) + noise·I,
// via Cholesky. If the factorization fails, jitter starting at
// 1e-10·trace(K)/n is added and multiplied by 10 per retry (3 retries);
// beyond that an indefinite-kernel NumericError is thrown.
double gp_log_likelihood(const GpModel& m, const Tensor& x, std::span<const double> y);

// Same, for an explicit covariance matrix (no kernel, no noise).
double gaussian_log_likelihood(const Tensor& cov, std::span<const double> y);

struct GpPosterior {
  std::vector<double> mean;
  std::vector<double> variance;  // latent f variance (noise excluded)
};

GpPosterior gp_posterior(const GpModel& m, const Tensor& x_train, std::span<const double> y_train,
                         const Tensor& x_test);

// Central differences (f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h per coordinate.
std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                               std::span<const double> theta, double h = 1e-5);

}  // namespace covreg
