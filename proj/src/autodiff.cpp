#include "covreg/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "covreg/errors.hpp"

namespace covreg {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

const Tensor& value_of(const Tape& tape, std::size_t id) { return tape.value(id); }

Tensor ones_like(const Tensor& t) { return Tensor(t.shape(), 1.0); }

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw ContractError(std::string(op) + ": operands belong to different tapes");
  }
}

void require_valid(const Var& a, const char* op) {
  if (!a.valid()) throw ContractError(std::string(op) + ": uninitialised Var");
}

// out = op(a, b) where both have the same shape or one of them is rank-0.
enum class Bcast { Same, ScalarA, ScalarB };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (a.rank() == 0) return Bcast::ScalarA;
  if (b.rank() == 0) return Bcast::ScalarB;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

template <class F>
Tensor binary_map(const Tensor& a, const Tensor& b, Bcast kind, F f) {
  const Tensor& big = kind == Bcast::ScalarA ? b : a;
  Tensor out(big.shape());
  const std::size_t n = out.size();
  switch (kind) {
    case Bcast::Same:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
      break;
    case Bcast::ScalarA:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(a[0], b[i]);
      break;
    case Bcast::ScalarB:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[0]);
      break;
  }
  return out;
}

// Reduces an elementwise gradient back to the operand's shape.
Tensor reduce_to(const Tensor& g, const Tensor& operand) {
  if (g.shape() == operand.shape()) return g;
  double s = 0.0;
  for (double v : g.values()) s += v;
  return Tensor(operand.shape(), s);
}

// C = op(A) * op(B) for row-major matrices.
Tensor matmul_t(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t m = ta ? a.shape()[1] : a.shape()[0];
  const std::size_t k = ta ? a.shape()[0] : a.shape()[1];
  const std::size_t n = tb ? b.shape()[0] : b.shape()[1];
  const std::size_t lda = a.shape()[1], ldb = b.shape()[1];
  Tensor out(Shape{m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (!tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = po + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? pa[p * lda + i] : pa[i * lda + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * ldb;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = pb + j * ldb;
        double s = 0.0;
        if (ta) {
          for (std::size_t p = 0; p < k; ++p) s += pa[p * lda + i] * brow[p];
        } else {
          const double* arow = pa + i * lda;
          for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        }
        po[i * n + j] = s;
      }
    }
  }
  return out;
}

template <class F, class D>
Var unary(const Var& a, const char* name, F f, D dfdx) {
  require_valid(a, name);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const Tape* tape = &a.tape();
  const std::size_t ia = a.id(), iout = a.tape().size();
  BackwardFn bw;
  if (a.requires_grad()) {
    bw = [tape, ia, iout, dfdx](const Tensor& g, GradSlots& slots) {
      const Tensor& x = value_of(*tape, ia);
      const Tensor& y = value_of(*tape, iout);
      Tensor ga(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[i] * dfdx(x[i], y[i]);
      accumulate(slots, ia, ga);
    };
  }
  return a.tape().record(name, std::move(out), {ia}, std::move(bw));
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Maps each input flat index to the reduced output flat index.
std::vector<std::size_t> reduction_map(const Shape& in, std::span<const std::size_t> axes, Shape& out_shape) {
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in.size()) {
      throw DimensionError("reduction axis " + std::to_string(ax) + " invalid for " + shape_string(in));
    }
    if (reduced[ax]) throw DimensionError("reduction axis listed twice");
    reduced[ax] = true;
  }
  out_shape.clear();
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!reduced[i]) out_shape.push_back(in[i]);
  const auto out_strides = strides_of(out_shape);
  const std::size_t n = numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(in.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t o = 0, k = 0;
    for (std::size_t d = 0; d < in.size(); ++d) {
      if (!reduced[d]) o += idx[d] * out_strides[k++];
    }
    map[flat] = o;
    for (std::size_t d = in.size(); d-- > 0;) {
      if (++idx[d] < in[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void accumulate(GradSlots& slots, std::size_t id, const Tensor& g) {
  auto& slot = slots[id];
  if (!slot) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

// ---- Var / Tape ----------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on uninitialised Var");
  return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const { return tape_ && tape_->nodes_[id_].requires_grad; }

const Tensor& Gradients::operator[](const Var& v) const {
  if (!has(v)) throw ContractError("no gradient recorded for node " + std::to_string(v.id()));
  return *grads_[v.id()];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = requires_grad ? "leaf" : "constant";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (g_finite_checks && !value.all_finite()) {
    throw NumericError("non-finite output from op '" + op + "'");
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError("tape input refers to a later node");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (!loss.valid() || &loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  GradSlots slots(loss.id() + 1);
  slots[loss.id()] = ones_like(loss.value());
  // Reverse insertion order is a valid reverse topological order.
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!slots[id] || !n.requires_grad || !n.backward) continue;
    n.backward(*slots[id], slots);
  }
  for (std::size_t id = 0; id < slots.size(); ++id) {
    if (!nodes_[id].requires_grad) slots[id].reset();
  }
  return Gradients(std::move(slots));
}

// ---- ops -------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  Tensor out = matmul_t(av, false, bv, false);
  const Tape* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return a.tape().record("matmul", std::move(out), {ia, ib}, [=](const Tensor& g, GradSlots& slots) {
    if (ga) accumulate(slots, ia, matmul_t(g, false, value_of(*tape, ib), true));
    if (gb) accumulate(slots, ib, matmul_t(value_of(*tape, ia), true, g, false));
  });
}

Var transpose(const Var& a) {
  require_valid(a, "transpose");
  const std::size_t ia = a.id();
  return a.tape().record("transpose", covreg::transpose(a.value()), {ia},
                         [ia](const Tensor& g, GradSlots& slots) { accumulate(slots, ia, covreg::transpose(g)); });
}

namespace {

template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA dfa, DB dfb) {
  require_same_tape(a, b, name);
  const Bcast kind = broadcast_kind(a.value(), b.value(), name);
  Tensor out = binary_map(a.value(), b.value(), kind, f);
  const Tape* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return a.tape().record(name, std::move(out), {ia, ib}, [=](const Tensor& g, GradSlots& slots) {
    const Tensor& av = value_of(*tape, ia);
    const Tensor& bv = value_of(*tape, ib);
    if (ga) {
      Tensor d = binary_map(av, bv, kind, dfa);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g[i];
      accumulate(slots, ia, reduce_to(d, av));
    }
    if (gb) {
      Tensor d = binary_map(av, bv, kind, dfb);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g[i];
      accumulate(slots, ib, reduce_to(d, bv));
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  for (double v : b.value().values()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(const Var& a, double c) {
  return unary(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(const Var& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  for (double v : a.value().values()) {
    if (!std::isfinite(std::exp(v))) {
      throw DomainError("exp: overflow for input " + std::to_string(v));
    }
  }
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sum(const Var& a) {
  require_valid(a, "sum");
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  const std::size_t ia = a.id();
  const Shape in_shape = av.shape();
  return a.tape().record("sum", Tensor::scalar(s), {ia}, [ia, in_shape](const Tensor& g, GradSlots& slots) {
    accumulate(slots, ia, Tensor(in_shape, g[0]));
  });
}

Var mean(const Var& a) {
  require_valid(a, "mean");
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractError("mean over an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum(const Var& a, std::span<const std::size_t> axes) {
  require_valid(a, "sum");
  const Tensor& av = a.value();
  Shape out_shape;
  auto map = reduction_map(av.shape(), axes, out_shape);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < av.size(); ++i) out[map[i]] += av[i];
  const std::size_t ia = a.id();
  const Shape in_shape = av.shape();
  return a.tape().record("sum_axes", std::move(out), {ia},
                         [ia, in_shape, map = std::move(map)](const Tensor& g, GradSlots& slots) {
                           Tensor ga(in_shape);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[map[i]];
                           accumulate(slots, ia, ga);
                         });
}

Var mean(const Var& a, std::span<const std::size_t> axes) {
  require_valid(a, "mean");
  std::size_t count = 1;
  for (std::size_t ax : axes) count *= a.value().dim(ax);
  if (count == 0) throw ContractError("mean over a zero-extent axis");
  return scale(sum(a, axes), 1.0 / static_cast<double>(count));
}

Var reshape(const Var& a, Shape shape) {
  require_valid(a, "reshape");
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  const Shape in_shape = a.value().shape();
  return a.tape().record("reshape", std::move(out), {ia}, [ia, in_shape](const Tensor& g, GradSlots& slots) {
    accumulate(slots, ia, g.reshaped(in_shape));
  });
}

Var gather(const Var& a, std::vector<std::size_t> index, Shape shape) {
  require_valid(a, "gather");
  if (numel(shape) != index.size()) {
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for shape " + shape_string(shape));
  }
  const Tensor& av = a.value();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.size()) throw DimensionError("gather: index out of range");
    out[i] = av[index[i]];
  }
  const std::size_t ia = a.id();
  const Shape in_shape = av.shape();
  return a.tape().record("gather", std::move(out), {ia},
                         [ia, in_shape, index = std::move(index)](const Tensor& g, GradSlots& slots) {
                           Tensor ga(in_shape);
                           for (std::size_t i = 0; i < index.size(); ++i) ga[index[i]] += g[i];
                           accumulate(slots, ia, ga);
                         });
}

Var permute(const Var& a, std::span<const std::size_t> order) {
  require_valid(a, "permute");
  const Shape& in = a.value().shape();
  if (order.size() != in.size()) throw DimensionError("permute: order rank mismatch");
  std::vector<bool> seen(in.size(), false);
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= in.size() || seen[order[i]]) throw DimensionError("permute: invalid axis order");
    seen[order[i]] = true;
    out_shape[i] = in[order[i]];
  }
  const auto in_strides = strides_of(in);
  const std::size_t n = numel(in);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> idx(in.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < in.size(); ++d) src += idx[d] * in_strides[order[d]];
    index[flat] = src;
    for (std::size_t d = in.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return gather(a, std::move(index), std::move(out_shape));
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  require_valid(a, "slice_cols");
  const std::size_t r = a.value().rows(), c = a.value().cols();
  if (start + count > c) throw DimensionError("slice_cols: range exceeds " + shape_string(a.shape()));
  std::vector<std::size_t> index;
  index.reserve(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) index.push_back(i * c + start + j);
  return gather(a, std::move(index), Shape{r, count});
}

Var concat_cols(const Var& a, const Var& b) {
  require_same_tape(a, b, "concat_cols");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols row mismatch: " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out(Shape{r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = av.at(i, j);
    for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = bv.at(i, j);
  }
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return a.tape().record("concat_cols", std::move(out), {ia, ib}, [=](const Tensor& g, GradSlots& slots) {
    if (ga) {
      Tensor t(Shape{r, ca});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) t.at(i, j) = g.at(i, j);
      accumulate(slots, ia, t);
    }
    if (gb) {
      Tensor t(Shape{r, cb});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) t.at(i, j) = g.at(i, ca + j);
      accumulate(slots, ib, t);
    }
  });
}

Var add_bias(const Var& a, const Var& bias) {
  require_same_tape(a, bias, "add_bias");
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (av.rank() == 0 || bv.rank() != 1 || av.shape().back() != bv.size()) {
    throw DimensionError("add_bias shape mismatch: " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t c = bv.size();
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  const std::size_t ia = a.id(), ib = bias.id();
  const bool ga = a.requires_grad(), gb = bias.requires_grad();
  return a.tape().record("add_bias", std::move(out), {ia, ib}, [=](const Tensor& g, GradSlots& slots) {
    if (ga) accumulate(slots, ia, g);
    if (gb) {
      Tensor t(Shape{c});
      for (std::size_t i = 0; i < g.size(); ++i) t[i % c] += g[i];
      accumulate(slots, ib, t);
    }
  });
}

Var detach(const Var& a) {
  require_valid(a, "detach");
  return a.tape().constant(a.value());
}


}  // namespace covreg
