#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "covreg/autodiff.hpp"
#include "covreg/tensor.hpp"

namespace covreg {

using Rng = std::mt19937_64;

// Ordered, named parameter tensors. Order is insertion order and is the
// serialization order, so two containers built the same way compare equal.
class Params {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t scalar_count() const;

  friend bool operator==(const Params& a, const Params& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out, Shape shape);

// Maps parameter names to tape leaves for one forward/backward pass.
class Binding {
 public:
  Binding(Tape& tape, const Params& params, bool trainable = true);

  const Var& operator[](const std::string& name) const;
  Tape& tape() const { return *tape_; }
  const std::vector<std::pair<std::string, Var>>& vars() const { return vars_; }

 private:
  Tape* tape_;
  std::vector<std::pair<std::string, Var>> vars_;
};

// Checkpoint container: a versioned text file of (name, shape, values) with
// values written as hex floats so a save/load round trip is bit-exact.
//
//   COVREG-CHECKPOINT 1
//   entries <count>
//   <name> <rank> <d0> ... <dk> then one hex-float value per line
inline constexpr const char* kCheckpointMagic = "COVREG-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

void save_params(const std::filesystem::path& path, const Params& params);
Params load_params(const std::filesystem::path& path);

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Sgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Applies one update from gradients collected on `binding`'s tape.
// Parameters whose leaves received no gradient are left untouched.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}
  void step(Params& params, const Binding& binding, const Gradients& grads);
  std::uint64_t steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace covreg
