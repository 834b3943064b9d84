#include "covreg/gp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "covreg/errors.hpp"

namespace covreg {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

// Cholesky with the jitter escalation schedule.
Eigen::LLT<Eigen::MatrixXd> factorize(Eigen::MatrixXd k, double base_jitter) {
  const auto n = k.rows();
  if (base_jitter > 0.0) k.diagonal().array() += base_jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() == Eigen::Success) return llt;
  double jitter = 1e-10 * k.trace() / static_cast<double>(n);
  if (!(jitter > 0.0)) jitter = 1e-10;
  for (int attempt = 0; attempt < 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericError("kernel matrix is not positive definite after jitter escalation");
}

double log_likelihood_from(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& y) {
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd l = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
  const double n = static_cast<double>(y.size());
  return -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace

double Kernel::operator()(std::span<const double> a, std::span<const double> b) const {
  if (a.size() != b.size()) throw DimensionError("kernel inputs have different widths");
  if (kind == Kind::Linear) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return signal_var * s;
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return signal_var * std::exp(-0.5 * d2 / (lengthscale * lengthscale));
}

Tensor kernel_matrix(const Kernel& k, const Tensor& x1, const Tensor& x2) {
  if (x1.rank() != 2 || x2.rank() != 2 || x1.cols() != x2.cols()) {
    throw DimensionError("kernel_matrix: inputs " + shape_string(x1.shape()) + " and " + shape_string(x2.shape()));
  }
  const std::size_t d = x1.cols();
  Tensor out(Shape{x1.rows(), x2.rows()});
  for (std::size_t i = 0; i < x1.rows(); ++i)
    for (std::size_t j = 0; j < x2.rows(); ++j)
      out.at(i, j) = k(std::span<const double>(x1.data() + i * d, d), std::span<const double>(x2.data() + j * d, d));
  return out;
}

double gp_log_likelihood(const GpModel& m, const Tensor& x, std::span<const double> y) {
  if (x.rank() != 2 || x.rows() == 0) throw ContractError("gp_log_likelihood needs at least one point");
  if (x.rows() != y.size()) throw DimensionError("gp_log_likelihood: X and y lengths differ");
  Eigen::MatrixXd k = to_eigen(kernel_matrix(m.kernel, x, x));
  k.diagonal().array() += m.noise_var;
  const auto llt = factorize(std::move(k), m.jitter);
  return log_likelihood_from(llt, Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())));
}

double gaussian_log_likelihood(const Tensor& cov, std::span<const double> y) {
  if (cov.rank() != 2 || cov.rows() != cov.cols() || cov.rows() != y.size() || y.empty()) {
    throw DimensionError("gaussian_log_likelihood: covariance " + shape_string(cov.shape()) +
                         " does not match y of length " + std::to_string(y.size()));
  }
  const auto llt = factorize(to_eigen(cov), 0.0);
  return log_likelihood_from(llt, Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())));
}

GpPosterior gp_posterior(const GpModel& m, const Tensor& x_train, std::span<const double> y_train,
                         const Tensor& x_test) {
  GpPosterior post;
  const std::size_t n_test = x_test.rows();
  if (x_train.rank() != 2 || x_train.rows() == 0) {
    post.mean.assign(n_test, 0.0);
    post.variance.resize(n_test);
    const std::size_t d = x_test.cols();
    for (std::size_t i = 0; i < n_test; ++i) {
      std::span<const double> xi(x_test.data() + i * d, d);
      post.variance[i] = m.kernel(xi, xi);
    }
    return post;
  }
  if (x_train.rows() != y_train.size()) throw DimensionError("gp_posterior: X and y lengths differ");
  Eigen::MatrixXd k = to_eigen(kernel_matrix(m.kernel, x_train, x_train));
  k.diagonal().array() += m.noise_var;
  const auto llt = factorize(std::move(k), m.jitter);
  const Eigen::MatrixXd ks = to_eigen(kernel_matrix(m.kernel, x_train, x_test));
  const Eigen::VectorXd alpha =
      llt.solve(Eigen::Map<const Eigen::VectorXd>(y_train.data(), static_cast<Eigen::Index>(y_train.size())));
  const Eigen::MatrixXd v = llt.matrixL().solve(ks);
  post.mean.resize(n_test);
  post.variance.resize(n_test);
  const std::size_t d = x_test.cols();
  for (std::size_t i = 0; i < n_test; ++i) {
    post.mean[i] = ks.col(static_cast<Eigen::Index>(i)).dot(alpha);
    std::span<const double> xi(x_test.data() + i * d, d);
    const double var = m.kernel(xi, xi) - v.col(static_cast<Eigen::Index>(i)).squaredNorm();
    post.variance[i] = std::max(var, 0.0);
  }
  return post;
}

std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                               std::span<const double> theta, double h) {
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_difference_gradient: non-finite evaluation at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace covreg
