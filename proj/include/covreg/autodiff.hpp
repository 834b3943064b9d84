#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "covreg/tensor.hpp"

namespace covreg {

class Tape;

// Handle to a tensor recorded on a Tape. Cheap to copy; valid while the
// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients of a scalar loss with respect to tape nodes, indexed by node id.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

  bool has(const Var& v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }
  // Throws ContractError when no gradient reached `v`.
  const Tensor& operator[](const Var& v) const;

 private:
  std::vector<std::optional<Tensor>> grads_;
};

// Per-node gradient accumulators used during a backward sweep.
using GradSlots = std::vector<std::optional<Tensor>>;
using BackwardFn = std::function<void(const Tensor& upstream, GradSlots& slots)>;

// Append-only record of a define-by-run computation. One tape per training
// step; nodes only reference earlier nodes so the record is a DAG in
// insertion order. A tape is not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op. `backward` may be empty when no input requires grad.
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  Gradients backward(const Var& loss) const;

  std::size_t size() const { return nodes_.size(); }
  // References stay valid for the tape's lifetime.
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_.at(id).inputs; }

 private:
  friend class Var;
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// Post-op finite checks on every recorded value. Enabled by default in
// builds without NDEBUG; exp/log domain checks are always on.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// Adds `g` into slot `id`, allocating it on first use.
void accumulate(GradSlots& slots, std::size_t id, const Tensor& g);

// ---- differentiable ops -------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Elementwise binary ops broadcast only between equal shapes or a rank-0
// scalar and a tensor.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

Var square(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// Reduces over `axes` (each listed once); reduced axes are dropped.
Var sum(const Var& a, std::span<const std::size_t> axes);
Var mean(const Var& a, std::span<const std::size_t> axes);

Var reshape(const Var& a, Shape shape);
// out.flat[i] = a.flat[index[i]]; backward scatter-adds.
Var gather(const Var& a, std::vector<std::size_t> index, Shape shape);
Var permute(const Var& a, std::span<const std::size_t> order);
// Column block [start, start+count) of a matrix.
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var concat_cols(const Var& a, const Var& b);
// Adds a [C] bias along the last axis of `a`.
Var add_bias(const Var& a, const Var& bias);
// Stop-gradient: same values, recorded as a constant.
Var detach(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

}  // namespace covreg
