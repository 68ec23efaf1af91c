#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mifn/autodiff.hpp"
#include "mifn/random.hpp"

namespace mifn {
inline namespace MIFN_PRECISION {

/// Named registry of every learned tensor. Iteration order is by name, which
/// fixes the order of checkpoint records and optimizer updates.
class ModelParams {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    require(!name.empty(), "parameter name must not be empty");
    auto [it, inserted] = tensors_.emplace(name, std::move(t));
    require(inserted, "duplicate parameter name: " + name);
    it->second.requires_grad = true;
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), "unknown parameter: " + name);
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), "unknown parameter: " + name);
    return it->second;
  }

  const std::map<std::string, Tensor>& all() const { return tensors_; }
  std::map<std::string, Tensor>& all() { return tensors_; }
  std::size_t count() const { return tensors_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [_, t] : tensors_)
      if (!t.all_finite()) return false;
    return true;
  }

  bool operator==(const ModelParams& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    for (auto a = tensors_.begin(), b = o.tensors_.begin(); a != tensors_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.shape != b->second.shape || a->second.values != b->second.values)
        return false;
    }
    return true;
  }

 private:
  std::map<std::string, Tensor> tensors_;
};

using GradMap = std::map<std::string, std::vector<Real>>;

/// Binds parameters onto one tape on first use, so a tensor used many times in
/// a forward pass is a single leaf.
class Binding {
 public:
  Binding(Tape& tape, const ModelParams& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_.bind(params_.at(name), trainable_);
    bound_.emplace(name, v);
    return v;
  }

  Tape& tape() { return tape_; }
  const ModelParams& params() const { return params_; }

  /// Gradient of every parameter after Tape::backward. Unbound ones are zero.
  GradMap gradients() const {
    GradMap out;
    for (const auto& [name, t] : params_.all()) {
      auto it = bound_.find(name);
      if (it == bound_.end() || !tape_.needs_grad(it->second.id()) || tape_.grad(it->second.id()).empty()) {
        out.emplace(name, std::vector<Real>(t.size(), 0.0));
      } else {
        out.emplace(name, tape_.grad(it->second.id()));
      }
    }
    return out;
  }

 private:
  Tape& tape_;
  const ModelParams& params_;
  bool trainable_;
  std::unordered_map<std::string, Var> bound_;
};

/// Runs the reverse sweep from `loss` and returns d loss / d p for every parameter.
inline GradMap grad(Var loss, const Binding& binding) {
  loss.tape().backward(loss);
  return binding.gradients();
}

/// Uniform Xavier: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
/// Rank-2 shapes are (fan_out, fan_in); rank-1 shapes use n for both fans.
inline Tensor xavier_init(const Shape& shape, std::uint64_t seed) {
  require(!shape.empty(), "xavier_init: shape needs at least one dimension");
  const std::size_t n = shape_size(shape);
  Tensor t(shape, std::vector<Real>(n, 0.0));
  if (n == 0) return t;
  Real fan_in, fan_out;
  if (shape.size() == 1) {
    fan_in = fan_out = static_cast<Real>(shape[0]);
  } else {
    fan_out = static_cast<Real>(shape[0]);
    fan_in = static_cast<Real>(n / shape[0]);
  }
  const Real a = std::sqrt(6.0 / (fan_in + fan_out));
  Rng rng(seed);
  for (Real& v : t.values) v = rng.uniform(-a, a);
  return t;
}

inline Real global_norm(const GradMap& grads) {
  Real acc = 0.0;
  for (const auto& [_, g] : grads)
    for (Real x : g) acc += x * x;
  return std::sqrt(acc);
}

/// Rescales grads in place so their global norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
inline Real clip_by_global_norm(GradMap& grads, Real max_norm) {
  const Real norm = global_norm(grads);
  if (max_norm > 0 && norm > max_norm) {
    const Real s = max_norm / norm;
    for (auto& [_, g] : grads)
      for (Real& x : g) x *= s;
  }
  return norm;
}

}  // namespace MIFN_PRECISION
}  // namespace mifn
