#include "covreg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "covreg/errors.hpp"

namespace covreg {

namespace {

void require_same_dims(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) {
    throw DimensionError("cross-term inputs disagree: " + std::to_string(a) + ", " + std::to_string(b) + ", " +
                         std::to_string(c));
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double sigma_squared(const Tensor& w, const CovLossConfig& cfg) {
  if (cfg.sigma_mode == SigmaMode::FixedOne) return 1.0;
  double mean = 0.0;
  for (double v : w.values()) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w.values()) var += (v - mean) * (v - mean);
  return var / static_cast<double>(w.size());
}

}  // namespace

double full_bilinear(std::span<const double> phi_x, std::span<const double> phi_xp, std::span<const double> w) {
  require_same_dims(phi_x.size(), phi_xp.size(), w.size());
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    a += w[i] * phi_x[i];
    b += w[i] * phi_xp[i];
  }
  return a * b;
}

double cross_term_contribution(std::span<const double> phi_x, std::span<const double> phi_xp,
                               std::span<const double> w) {
  require_same_dims(phi_x.size(), phi_xp.size(), w.size());
  double full = 0.0, diag = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) full += w[i] * w[j] * phi_x[i] * phi_xp[j];
    diag += w[i] * w[i] * phi_x[i] * phi_xp[i];
  }
  return full - diag;
}

double constraint_residual(std::span<const double> phi_x, std::span<const double> phi_xp,
                           std::span<const double> w) {
  require_same_dims(phi_x.size(), phi_xp.size(), w.size());
  const std::size_t f = w.size();
  std::vector<double> m(f * f, 0.0);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < f; ++j)
      if (i != j) m[i * f + j] = w[i] * w[j];
  double out = 0.0;
  for (std::size_t i = 0; i < f; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < f; ++j) row += m[i * f + j] * phi_xp[j];
    out += phi_x[i] * row;
  }
  return out;
}

CrossTermReport cross_term_report(const Tensor& basis, const Tensor& weights, const PairSampling& sampling,
                                  std::optional<double> epsilon) {
  if (basis.rank() != 2 || basis.rows() == 0) throw ContractError("cross_term_report: empty evaluation set");
  if (basis.rows() < 2) throw ContractError("cross_term_report needs at least 2 rows");
  if (weights.rank() != 2 || weights.rows() != basis.cols()) {
    throw DimensionError("cross_term_report: weights " + shape_string(weights.shape()) + " do not match basis " +
                         shape_string(basis.shape()));
  }
  const std::size_t r = basis.rows(), f = basis.cols(), s = weights.cols();

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t total = r * (r + 1) / 2;
  CrossTermReport rep;
  rep.seed = sampling.seed;
  if (total <= sampling.max_exhaustive) {
    pairs.reserve(total);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = i; j < r; ++j) pairs.emplace_back(i, j);
  } else {
    rep.exhaustive = false;
    std::mt19937_64 rng(sampling.seed);
    std::uniform_int_distribution<std::size_t> pick(0, r - 1);
    pairs.reserve(sampling.samples);
    for (std::size_t k = 0; k < sampling.samples; ++k) {
      std::size_t i = pick(rng), j = pick(rng);
      if (i > j) std::swap(i, j);
      pairs.emplace_back(i, j);
    }
  }
  rep.pair_count = pairs.size();

  std::vector<double> w_col(f);
  std::vector<double> full_abs;
  rep.values.reserve(pairs.size() * s);
  full_abs.reserve(pairs.size() * s);
  for (std::size_t c = 0; c < s; ++c) {
    for (std::size_t i = 0; i < f; ++i) w_col[i] = weights.at(i, c);
    for (const auto& [i, j] : pairs) {
      std::span<const double> a(basis.data() + i * f, f);
      std::span<const double> b(basis.data() + j * f, f);
      rep.values.push_back(cross_term_contribution(a, b, w_col));
      full_abs.push_back(std::abs(full_bilinear(a, b, w_col)));
    }
  }
  rep.epsilon = epsilon ? *epsilon : 1e-6 * median(std::move(full_abs));

  auto& h = rep.histogram;
  h.counts.assign(static_cast<std::size_t>(h.log10_hi - h.log10_lo), 0);
  for (double v : rep.values) {
    const double a = std::abs(v);
    if (a < rep.epsilon || a == 0.0) {
      ++h.zero_count;
      continue;
    }
    int bin = static_cast<int>(std::floor(std::log10(a))) - h.log10_lo;
    bin = std::clamp(bin, 0, static_cast<int>(h.counts.size()) - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  rep.zero_fraction = rep.values.empty() ? 0.0
                                         : static_cast<double>(h.zero_count) / static_cast<double>(rep.values.size());

  // Same pairs and threshold, counted per individual i != j term.
  std::size_t zero_terms = 0, terms = 0;
  for (std::size_t c = 0; c < s; ++c) {
    for (std::size_t i = 0; i < f; ++i) w_col[i] = weights.at(i, c);
    for (const auto& [i, j] : pairs) {
      const double* a = basis.data() + i * f;
      const double* b = basis.data() + j * f;
      for (std::size_t k = 0; k < f; ++k)
        for (std::size_t l = 0; l < f; ++l) {
          if (k == l) continue;
          const double t = std::abs(w_col[k] * w_col[l] * a[k] * b[l]);
          if (t < rep.epsilon || t == 0.0) ++zero_terms;
          ++terms;
        }
    }
  }
  rep.term_zero_fraction = terms ? static_cast<double>(zero_terms) / static_cast<double>(terms) : 0.0;
  return rep;
}

double AlignmentTrace::mean_frobenius_gap() const {
  if (frobenius_gap.empty()) return 0.0;
  double s = 0.0;
  for (double v : frobenius_gap) s += v;
  return s / static_cast<double>(frobenius_gap.size());
}

AlignmentTrace alignment_trace(std::span<const EvalStep> steps, const Tensor& weights,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                               const CovLossConfig& cfg) {
  AlignmentTrace tr;
  tr.pairs = pairs;
  for (const auto& [i, j] : pairs) {
    for (std::size_t n : {i, j})
      if (std::find(tr.nodes.begin(), tr.nodes.end(), n) == tr.nodes.end()) tr.nodes.push_back(n);
  }
  tr.gram_diag.assign(tr.nodes.size(), {});
  tr.target_var.assign(tr.nodes.size(), {});
  tr.gram_offdiag.assign(pairs.size(), {});
  tr.target_cov.assign(pairs.size(), {});
  const double s2 = sigma_squared(weights, cfg);

  for (const EvalStep& st : steps) {
    const std::size_t n = st.basis.rows();
    if (st.target_rows.rows() != n) throw DimensionError("alignment_trace: basis/target row mismatch");
    for (std::size_t node : tr.nodes) {
      if (node >= n) {
        throw DimensionError("alignment_trace: node " + std::to_string(node) + " out of range for " +
                             std::to_string(n) + " nodes");
      }
    }
    const double inv_s = 1.0 / static_cast<double>(st.target_rows.cols());
    Tensor sigma = matmul(st.target_rows, transpose(st.target_rows));
    for (double& v : sigma.values()) v *= inv_s;
    Tensor gram = matmul(st.basis, transpose(st.basis));
    for (double& v : gram.values()) v *= s2;

    tr.time_index.push_back(st.time);
    for (std::size_t k = 0; k < tr.nodes.size(); ++k) {
      const std::size_t node = tr.nodes[k];
      tr.gram_diag[k].push_back(gram.at(node, node));
      tr.target_var[k].push_back(sigma.at(node, node));
    }
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      tr.gram_offdiag[p].push_back(gram.at(pairs[p].first, pairs[p].second));
      tr.target_cov[p].push_back(sigma.at(pairs[p].first, pairs[p].second));
    }
    double gap = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) gap += (sigma[i] - gram[i]) * (sigma[i] - gram[i]);
    tr.frobenius_gap.push_back(std::sqrt(gap));
  }
  return tr;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pearson: series lengths differ");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

BasisDecompositionTrace basis_decomposition_trace(std::span<const EvalStep> steps, const Tensor& weights,
                                                  const Tensor* bias, std::size_t node, std::size_t output) {
  if (weights.rank() != 2 || output >= weights.cols()) throw DimensionError("basis_decomposition_trace: bad output");
  const std::size_t f = weights.rows();
  BasisDecompositionTrace tr;
  tr.node = node;
  tr.output = output;
  tr.components.assign(f, {});
  for (const EvalStep& st : steps) {
    if (node >= st.basis.rows() || st.basis.cols() != f) {
      throw DimensionError("basis_decomposition_trace: node or basis width out of range");
    }
    double pred = bias ? (*bias)[output] : 0.0;
    for (std::size_t i = 0; i < f; ++i) {
      const double c = weights.at(i, output) * st.basis.at(node, i);
      tr.components[i].push_back(c);
      pred += c;
    }
    tr.time_index.push_back(st.time);
    tr.prediction.push_back(pred);
    tr.label.push_back(st.labels.empty() ? 0.0 : st.labels.at(node, output));
  }
  std::vector<double> defined;
  for (const auto& comp : tr.components) {
    auto r = pearson(comp, tr.prediction);
    tr.correlation.push_back(r);
    if (r) defined.push_back(*r);
  }
  if (!defined.empty()) tr.median_correlation = median(std::move(defined));
  return tr;
}

}  // namespace covreg
