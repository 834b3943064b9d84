#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "covreg/autodiff.hpp"
#include "covreg/graph.hpp"
#include "covreg/params.hpp"

namespace covreg {

enum class Activation { Linear, Relu, Tanh, Sigmoid, Glu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
// Glu halves the last axis: out = left * sigmoid(right).
Var activate(const Var& x, Activation a);

// Aligns a row of the basis matrix with the target it predicts.
struct RowIndex {
  std::size_t sample = 0;
  std::size_t node = 0;
  friend bool operator==(const RowIndex&, const RowIndex&) = default;
};

// What every model exposes to the covariance regularizer: the prediction,
// its basis functions (penultimate activation, one row per (sample, node))
// and the linear readout that maps one to the other.
struct ModelOutput {
  Var prediction;
  Var basis;         // [R x F']
  Var last_weights;  // [F' x S]
  std::optional<Var> bias;  // [S]; excluded from the Gram computation
  std::vector<RowIndex> row_index;

  std::size_t rows() const { return row_index.size(); }
};

// Checks prediction == basis * last_weights (+ bias) exactly and that
// row_index matches the basis rows. Runs on every forward in debug builds.
void check_output_consistency(const ModelOutput& out);

// ---- MLP -------------------------------------------------------------------

struct MlpConfig {
  // {input, hidden..., output}. With no hidden layers the basis is the input.
  std::vector<std::size_t> widths;
  Activation hidden = Activation::Relu;
  bool output_bias = true;
  std::string prefix = "mlp";
};

Params init_mlp(const MlpConfig& cfg, Rng& rng);
ModelOutput mlp_forward(const Binding& params, const Var& x, const MlpConfig& cfg);

// ---- graph / temporal layers ----------------------------------------------

// Â·h·W over the node axis (second to last) of h [..., N, F], then bias and
// activation. Returns [..., N, F'].
Var gcn_layer(const Var& h, const GraphSpec& g, const Var& weight, const Var* bias, Activation act);

// Valid 1-D convolution along time of h [B, T, N, C] with kernel width k.
// weight is [(k*C) x C_out], laid out tap-major; for Glu, C_out is twice the
// output channel count. Returns [B, T-k+1, N, C_out or C_out/2].
Var temporal_conv(const Var& h, std::size_t kernel, const Var& weight, const Var* bias, Activation act);

// ---- STGCN-lite ------------------------------------------------------------

// Two ST blocks (TConv-GLU -> GConv -> TConv-GLU), an output temporal conv
// collapsing the remaining window into the basis, and a linear head.
struct StgcnConfig {
  std::size_t n_nodes = 20;
  std::size_t t_in = 12;
  std::size_t f_in = 1;
  std::size_t s_out = 3;
  std::size_t kernel = 3;
  std::size_t temporal_channels = 16;
  std::size_t spatial_channels = 8;
  std::size_t basis_dim = 16;
  Activation basis_activation = Activation::Relu;
  bool output_bias = true;

  // Window length left after both ST blocks.
  std::size_t remaining_time() const;
};

Params init_stgcn(const StgcnConfig& cfg, Rng& rng);
// x is [b, T, N, F]; prediction is [b, N, S]; basis rows are (sample, node).
ModelOutput stgcn_lite_forward(const Binding& params, const Var& x, const GraphSpec& g, const StgcnConfig& cfg);

// ---- CNP-lite --------------------------------------------------------------

struct CnpConfig {
  std::size_t x_dim = 1;
  std::size_t y_dim = 1;
  std::vector<std::size_t> encoder_hidden{32, 32};
  std::size_t r_dim = 32;
  std::vector<std::size_t> decoder_hidden{32, 32};
  Activation act = Activation::Relu;
};

struct CnpContext {
  Tensor context_x;  // [C x dx]
  Tensor context_y;  // [C x dy]
  Tensor target_x;   // [T x dx]
};

struct CnpOutput {
  Var mu;              // [T x dy]
  Var log_sigma;       // [T x dy]
  Var representation;  // [r_dim], mean of context encodings
  ModelOutput basis;   // decoder penultimate activation; mu = basis * w + b
};

Params init_cnp(const CnpConfig& cfg, Rng& rng);
// Contexts are put in a canonical order before encoding, so the output does
// not depend on the order they were supplied in.
CnpOutput cnp_forward(const Binding& params, const CnpContext& ctx, const CnpConfig& cfg);

// Mean Gaussian negative log-likelihood with sigma = exp(log_sigma).
Var cnp_nll(const Var& mu, const Var& log_sigma, const Var& y);

}  // namespace covreg
