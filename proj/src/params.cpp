#include "covreg/params.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "covreg/errors.hpp"

namespace covreg {

void Params::add(std::string name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool Params::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& Params::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("unknown parameter '" + name + "'");
}

Tensor& Params::get(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("unknown parameter '" + name + "'");
}

std::size_t Params::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out, Shape shape) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Binding::Binding(Tape& tape, const Params& params, bool trainable) : tape_(&tape) {
  vars_.reserve(params.size());
  for (const auto& [name, value] : params.entries()) vars_.emplace_back(name, tape.leaf(value, trainable));
}

const Var& Binding::operator[](const std::string& name) const {
  for (const auto& [n, v] : vars_)
    if (n == name) return v;
  throw ContractError("parameter '" + name + "' not bound");
}

void save_params(const std::filesystem::path& path, const Params& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "entries " << params.size() << '\n';
  char buf[64];
  for (const auto& [name, t] : params.entries()) {
    out << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    for (double v : t.values()) {
      std::snprintf(buf, sizeof buf, "%a", v);
      out << buf << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Params load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::size_t line_no = 0;
  std::string line;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no + 1) + ": unexpected end of file");
    }
    ++line_no;
    return line;
  };
  auto fail = [&](const std::string& what) {
    return ParseError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };

  {
    std::istringstream hs(next_line());
    std::string magic;
    int version = 0;
    if (!(hs >> magic >> version) || magic != kCheckpointMagic) throw fail("not a covreg checkpoint");
    if (version != kCheckpointVersion) throw fail("unsupported checkpoint version " + std::to_string(version));
  }
  std::size_t count = 0;
  {
    std::istringstream cs(next_line());
    std::string key;
    if (!(cs >> key >> count) || key != "entries") throw fail("expected 'entries <count>'");
  }
  Params params;
  for (std::size_t e = 0; e < count; ++e) {
    std::istringstream es(next_line());
    std::string name;
    std::size_t rank = 0;
    if (!(es >> name >> rank)) throw fail("expected '<name> <rank> <dims...>'");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(es >> d)) throw fail("missing dimension");
    Tensor t(shape);
    for (double& v : t.values()) {
      const std::string& s = next_line();
      char* end = nullptr;
      v = std::strtod(s.c_str(), &end);
      if (end == s.c_str()) throw fail("bad value '" + s + "'");
    }
    params.add(name, std::move(t));
  }
  return params;
}

void Optimizer::step(Params& params, const Binding& binding, const Gradients& grads) {
  auto& entries = params.entries();
  if (entries.size() != binding.vars().size()) throw ContractError("optimizer: binding/params mismatch");
  if (cfg_.kind == OptimizerConfig::Kind::Adam && m_.empty()) {
    for (const auto& [name, t] : entries) {
      m_.emplace_back(t.shape());
      v_.emplace_back(t.shape());
    }
  }
  ++t_;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Var& var = binding.vars()[k].second;
    if (!grads.has(var)) continue;
    const Tensor& g = grads[var];
    Tensor& p = entries[k].second;
    if (cfg_.kind == OptimizerConfig::Kind::Sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg_.lr * g[i];
      continue;
    }
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace covreg
