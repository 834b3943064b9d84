#include "covreg/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "covreg/errors.hpp"

namespace covreg {

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::Linear;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "glu") return Activation::Glu;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Glu: return "glu";
  }
  return "?";
}

Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::Linear: return x;
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Glu: {
      const Shape& s = x.shape();
      if (s.empty() || s.back() % 2 != 0) throw DimensionError("glu needs an even last axis, got " + shape_string(s));
      const std::size_t c = s.back();
      const std::size_t rows = x.value().size() / c;
      Var m = reshape(x, Shape{rows, c});
      Var out = mul(slice_cols(m, 0, c / 2), sigmoid(slice_cols(m, c / 2, c / 2)));
      Shape os = s;
      os.back() = c / 2;
      return reshape(out, os);
    }
  }
  throw ContractError("unhandled activation");
}

void check_output_consistency(const ModelOutput& out) {
  const Tensor& phi = out.basis.value();
  const Tensor& w = out.last_weights.value();
  if (phi.rank() != 2 || phi.rows() != out.row_index.size()) {
    throw ContractError("row_index length " + std::to_string(out.row_index.size()) + " does not match basis " +
                        shape_string(phi.shape()));
  }
  Tensor expected = matmul(phi, w);
  if (out.bias) {
    const Tensor& b = out.bias->value();
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += b[i % b.size()];
  }
  const Tensor& pred = out.prediction.value();
  if (pred.size() != expected.size() ||
      !std::equal(pred.values().begin(), pred.values().end(), expected.values().begin())) {
    throw ContractError("prediction differs from basis * last_weights");
  }
}

namespace {

void debug_check(const ModelOutput& out) {
#ifndef NDEBUG
  check_output_consistency(out);
#else
  (void)out;
#endif
}

void require_shape(const Var& v, const Shape& expected, const std::string& what) {
  if (v.shape() != expected) {
    throw ConfigError(what + " has shape " + shape_string(v.shape()) + ", expected " + shape_string(expected));
  }
}

Var dense(const Var& x, const Var& w, const Var* b, Activation act) {
  Var y = matmul(x, w);
  if (b) y = add_bias(y, *b);
  return activate(y, act);
}

// Linear readout producing ModelOutput from a [R x F'] basis.
ModelOutput readout(const Binding& p, const Var& basis, const std::string& prefix, bool with_bias,
                    std::vector<RowIndex> rows, Shape prediction_shape) {
  ModelOutput out;
  out.basis = basis;
  out.last_weights = p[prefix + ".weight"];
  if (out.last_weights.shape().size() != 2 || out.last_weights.shape()[0] != basis.shape()[1]) {
    throw ConfigError(prefix + ".weight has shape " + shape_string(out.last_weights.shape()) +
                      " which does not match basis width " + std::to_string(basis.shape()[1]));
  }
  Var y = matmul(basis, out.last_weights);
  if (with_bias) {
    out.bias = p[prefix + ".bias"];
    y = add_bias(y, *out.bias);
  }
  out.prediction = reshape(y, std::move(prediction_shape));
  out.row_index = std::move(rows);
  debug_check(out);
  return out;
}

}  // namespace

// ---- MLP -------------------------------------------------------------------

Params init_mlp(const MlpConfig& cfg, Rng& rng) {
  if (cfg.widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
  Params p;
  const std::size_t layers = cfg.widths.size() - 1;
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    const std::size_t in = cfg.widths[l], out = cfg.widths[l + 1];
    p.add(cfg.prefix + ".l" + std::to_string(l) + ".weight", glorot_uniform(rng, in, out, Shape{in, out}));
    p.add(cfg.prefix + ".l" + std::to_string(l) + ".bias", Tensor(Shape{out}));
  }
  const std::size_t in = cfg.widths[layers - 1], out = cfg.widths[layers];
  p.add(cfg.prefix + ".head.weight", glorot_uniform(rng, in, out, Shape{in, out}));
  if (cfg.output_bias) p.add(cfg.prefix + ".head.bias", Tensor(Shape{out}));
  return p;
}

ModelOutput mlp_forward(const Binding& p, const Var& x, const MlpConfig& cfg) {
  if (cfg.widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
  if (x.shape().size() != 2 || x.shape()[1] != cfg.widths.front()) {
    throw ConfigError("mlp input " + shape_string(x.shape()) + " does not match width " +
                      std::to_string(cfg.widths.front()));
  }
  const std::size_t layers = cfg.widths.size() - 1;
  Var h = x;
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    const std::string name = cfg.prefix + ".l" + std::to_string(l);
    const Var& w = p[name + ".weight"];
    const Var& b = p[name + ".bias"];
    require_shape(w, Shape{cfg.widths[l], cfg.widths[l + 1]}, name + ".weight");
    h = dense(h, w, &b, cfg.hidden);
  }
  const std::size_t batch = x.shape()[0];
  std::vector<RowIndex> rows(batch);
  for (std::size_t i = 0; i < batch; ++i) rows[i] = {i, 0};
  return readout(p, h, cfg.prefix + ".head", cfg.output_bias, std::move(rows), Shape{batch, cfg.widths.back()});
}

// ---- layers ----------------------------------------------------------------

Var gcn_layer(const Var& h, const GraphSpec& g, const Var& weight, const Var* bias, Activation act) {
  const Shape s = h.shape();
  if (s.size() < 2) throw DimensionError("gcn_layer expects [..., N, F], got " + shape_string(s));
  const std::size_t n = s[s.size() - 2], f = s.back();
  if (n != g.n_nodes) {
    throw DimensionError("gcn_layer: input has " + std::to_string(n) + " nodes, graph has " +
                         std::to_string(g.n_nodes));
  }
  if (weight.shape().size() != 2 || weight.shape()[0] != f) {
    throw DimensionError("gcn_layer weight " + shape_string(weight.shape()) + " does not match features " +
                         std::to_string(f));
  }
  const std::size_t f_out = weight.shape()[1];
  const std::size_t m = h.value().size() / (n * f);
  Tape& tape = h.tape();
  Var prop = tape.constant(g.propagation);
  Var hw = matmul(reshape(h, Shape{m * n, f}), weight);
  Var mixed;
  if (m == 1) {
    mixed = matmul(prop, hw);
  } else {
    const std::array<std::size_t, 3> to_nodes{1, 0, 2};
    Var by_node = reshape(permute(reshape(hw, Shape{m, n, f_out}), to_nodes), Shape{n, m * f_out});
    Var z = matmul(prop, by_node);
    mixed = reshape(permute(reshape(z, Shape{n, m, f_out}), to_nodes), Shape{m * n, f_out});
  }
  if (bias) mixed = add_bias(mixed, *bias);
  Var y = activate(mixed, act);
  Shape os = s;
  os.back() = y.shape().back();
  return reshape(y, os);
}

Var temporal_conv(const Var& h, std::size_t kernel, const Var& weight, const Var* bias, Activation act) {
  const Shape& s = h.shape();
  if (s.size() != 4) throw DimensionError("temporal_conv expects [B, T, N, C], got " + shape_string(s));
  const std::size_t b = s[0], t = s[1], n = s[2], c = s[3];
  if (kernel == 0 || t < kernel) {
    throw DimensionError("temporal_conv: window " + std::to_string(t) + " shorter than kernel " +
                         std::to_string(kernel));
  }
  if (weight.shape().size() != 2 || weight.shape()[0] != kernel * c) {
    throw DimensionError("temporal_conv weight " + shape_string(weight.shape()) + " does not match kernel*channels " +
                         std::to_string(kernel * c));
  }
  const std::size_t t_out = t - kernel + 1;
  std::vector<std::size_t> index;
  index.reserve(b * t_out * n * kernel * c);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < t_out; ++ti)
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t j = 0; j < kernel; ++j)
          for (std::size_t ci = 0; ci < c; ++ci) index.push_back(((bi * t + ti + j) * n + ni) * c + ci);
  Var cols = gather(h, std::move(index), Shape{b * t_out * n, kernel * c});
  Var y = matmul(cols, weight);
  if (bias) y = add_bias(y, *bias);
  y = activate(y, act);
  return reshape(y, Shape{b, t_out, n, y.shape()[1]});
}

// ---- STGCN-lite ------------------------------------------------------------

std::size_t StgcnConfig::remaining_time() const {
  const std::size_t shrink = 4 * (kernel - 1);
  if (kernel == 0 || t_in <= shrink) {
    throw ConfigError("window length " + std::to_string(t_in) + " too short for two ST blocks with kernel " +
                      std::to_string(kernel));
  }
  return t_in - shrink;
}

Params init_stgcn(const StgcnConfig& cfg, Rng& rng) {
  const std::size_t k = cfg.kernel, ct = cfg.temporal_channels, cs = cfg.spatial_channels;
  const std::size_t t_rem = cfg.remaining_time();
  Params p;
  auto add_layer = [&](const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", glorot_uniform(rng, in, out, Shape{in, out}));
    p.add(name + ".bias", Tensor(Shape{out}));
  };
  std::size_t c_in = cfg.f_in;
  for (const char* block : {"st1", "st2"}) {
    const std::string b = block;
    add_layer(b + ".tconv1", k * c_in, 2 * ct);
    add_layer(b + ".gconv", ct, cs);
    add_layer(b + ".tconv2", k * cs, 2 * ct);
    c_in = ct;
  }
  add_layer("out.tconv", t_rem * ct, cfg.basis_dim);
  p.add("head.weight", glorot_uniform(rng, cfg.basis_dim, cfg.s_out, Shape{cfg.basis_dim, cfg.s_out}));
  if (cfg.output_bias) p.add("head.bias", Tensor(Shape{cfg.s_out}));
  return p;
}

ModelOutput stgcn_lite_forward(const Binding& p, const Var& x, const GraphSpec& g, const StgcnConfig& cfg) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("stgcn input must be [b, T, N, F], got " + shape_string(s));
  if (s[1] != cfg.t_in) {
    throw DimensionError("stgcn window " + std::to_string(s[1]) + " differs from configured " +
                         std::to_string(cfg.t_in));
  }
  if (s[2] != g.n_nodes || s[2] != cfg.n_nodes) {
    throw DimensionError("stgcn input has " + std::to_string(s[2]) + " nodes; graph has " +
                         std::to_string(g.n_nodes));
  }
  if (s[3] != cfg.f_in) throw DimensionError("stgcn input features do not match f_in");
  const std::size_t t_rem = cfg.remaining_time();

  Var h = x;
  for (const char* block : {"st1", "st2"}) {
    const std::string b = block;
    h = temporal_conv(h, cfg.kernel, p[b + ".tconv1.weight"], &p[b + ".tconv1.bias"], Activation::Glu);
    h = gcn_layer(h, g, p[b + ".gconv.weight"], &p[b + ".gconv.bias"], Activation::Relu);
    h = temporal_conv(h, cfg.kernel, p[b + ".tconv2.weight"], &p[b + ".tconv2.bias"], Activation::Glu);
  }
  h = temporal_conv(h, t_rem, p["out.tconv.weight"], &p["out.tconv.bias"], cfg.basis_activation);
  const std::size_t batch = s[0], n = s[2];
  Var basis = reshape(h, Shape{batch * n, cfg.basis_dim});
  std::vector<RowIndex> rows;
  rows.reserve(batch * n);
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t ni = 0; ni < n; ++ni) rows.push_back({bi, ni});
  return readout(p, basis, "head", cfg.output_bias, std::move(rows), Shape{batch, n, cfg.s_out});
}

// ---- CNP-lite --------------------------------------------------------------

Params init_cnp(const CnpConfig& cfg, Rng& rng) {
  if (cfg.decoder_hidden.empty()) throw ConfigError("cnp decoder needs at least one hidden layer");
  Params p;
  auto add_layer = [&](const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", glorot_uniform(rng, in, out, Shape{in, out}));
    p.add(name + ".bias", Tensor(Shape{out}));
  };
  std::size_t in = cfg.x_dim + cfg.y_dim;
  for (std::size_t l = 0; l < cfg.encoder_hidden.size(); ++l) {
    add_layer("enc.l" + std::to_string(l), in, cfg.encoder_hidden[l]);
    in = cfg.encoder_hidden[l];
  }
  add_layer("enc.out", in, cfg.r_dim);
  in = cfg.r_dim + cfg.x_dim;
  for (std::size_t l = 0; l < cfg.decoder_hidden.size(); ++l) {
    add_layer("dec.l" + std::to_string(l), in, cfg.decoder_hidden[l]);
    in = cfg.decoder_hidden[l];
  }
  add_layer("dec.mu", in, cfg.y_dim);
  add_layer("dec.logsigma", in, cfg.y_dim);
  return p;
}

CnpOutput cnp_forward(const Binding& p, const CnpContext& ctx, const CnpConfig& cfg) {
  const Tensor& cx = ctx.context_x;
  const Tensor& cy = ctx.context_y;
  if (cx.rank() != 2 || cx.rows() == 0) throw ContractError("cnp_forward needs at least one context point");
  if (cy.rank() != 2 || cy.rows() != cx.rows()) throw DimensionError("context_x and context_y row counts differ");
  if (cx.cols() != cfg.x_dim || cy.cols() != cfg.y_dim || ctx.target_x.rank() != 2 ||
      ctx.target_x.cols() != cfg.x_dim) {
    throw DimensionError("cnp input widths do not match configuration");
  }
  const std::size_t n_ctx = cx.rows(), dx = cx.cols(), dy = cy.cols();

  // Canonical (x, y) lexicographic order makes the mean bitwise
  // independent of the order contexts were supplied in.
  std::vector<std::size_t> order(n_ctx);
  std::iota(order.begin(), order.end(), 0);
  auto key_less = [&](std::size_t a, std::size_t b) {
    for (std::size_t j = 0; j < dx; ++j)
      if (cx.at(a, j) != cx.at(b, j)) return cx.at(a, j) < cx.at(b, j);
    for (std::size_t j = 0; j < dy; ++j)
      if (cy.at(a, j) != cy.at(b, j)) return cy.at(a, j) < cy.at(b, j);
    return false;
  };
  std::stable_sort(order.begin(), order.end(), key_less);
  Tensor pairs(Shape{n_ctx, dx + dy});
  for (std::size_t i = 0; i < n_ctx; ++i) {
    for (std::size_t j = 0; j < dx; ++j) pairs.at(i, j) = cx.at(order[i], j);
    for (std::size_t j = 0; j < dy; ++j) pairs.at(i, dx + j) = cy.at(order[i], j);
  }

  Tape& tape = p.tape();
  Var h = tape.constant(std::move(pairs));
  for (std::size_t l = 0; l < cfg.encoder_hidden.size(); ++l) {
    const std::string name = "enc.l" + std::to_string(l);
    h = dense(h, p[name + ".weight"], &p[name + ".bias"], cfg.act);
  }
  Var enc = dense(h, p["enc.out.weight"], &p["enc.out.bias"], Activation::Linear);
  const std::array<std::size_t, 1> over_contexts{0};
  Var r = mean(enc, over_contexts);

  const std::size_t n_tgt = ctx.target_x.rows();
  std::vector<std::size_t> repeat;
  repeat.reserve(n_tgt * cfg.r_dim);
  for (std::size_t t = 0; t < n_tgt; ++t)
    for (std::size_t j = 0; j < cfg.r_dim; ++j) repeat.push_back(j);
  Var r_rows = gather(r, std::move(repeat), Shape{n_tgt, cfg.r_dim});
  Var d = concat_cols(r_rows, tape.constant(ctx.target_x));
  for (std::size_t l = 0; l < cfg.decoder_hidden.size(); ++l) {
    const std::string name = "dec.l" + std::to_string(l);
    d = dense(d, p[name + ".weight"], &p[name + ".bias"], cfg.act);
  }

  std::vector<RowIndex> rows(n_tgt);
  for (std::size_t t = 0; t < n_tgt; ++t) rows[t] = {0, t};
  CnpOutput out;
  out.basis = readout(p, d, "dec.mu", true, std::move(rows), Shape{n_tgt, dy});
  out.mu = out.basis.prediction;
  out.log_sigma = dense(d, p["dec.logsigma.weight"], &p["dec.logsigma.bias"], Activation::Linear);
  out.representation = r;
  return out;
}

Var cnp_nll(const Var& mu, const Var& log_sigma, const Var& y) {
  if (mu.shape() != y.shape() || log_sigma.shape() != y.shape()) {
    throw DimensionError("cnp_nll shape mismatch: " + shape_string(mu.shape()) + ", " +
                         shape_string(log_sigma.shape()) + ", " + shape_string(y.shape()));
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Var inv_var = exp(scale(log_sigma, -2.0));
  Var quad = scale(mul(square(sub(y, mu)), inv_var), 0.5);
  return add_scalar(mean(add(log_sigma, quad)), half_log_2pi);
}

}  // namespace covreg
