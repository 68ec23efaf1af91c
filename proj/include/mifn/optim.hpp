#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mifn/params.hpp"

namespace mifn {
inline namespace MIFN_PRECISION {

struct AdamConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

struct AdamState {
  std::map<std::string, std::vector<Real>> m;
  std::map<std::string, std::vector<Real>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update over every parameter that has a gradient.
/// lr = 0 is accepted and leaves the parameters untouched.
inline void adam_step(ModelParams& params, const GradMap& grads, AdamState& state, const AdamConfig& cfg) {
  require(cfg.lr >= 0, "adam_step: learning rate must be non-negative");
  for (const auto& [name, g] : grads) {
    require(params.contains(name), "adam_step: gradient for unknown parameter " + name);
    require(params.at(name).size() == g.size(), "adam_step: shape mismatch for " + name);
  }
  ++state.step;
  const Real t = static_cast<Real>(state.step);
  const Real c1 = 1.0 - std::pow(cfg.beta1, t);
  const Real c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name).values;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    require(m.size() == g.size() && v.size() == g.size(), "adam_step: state shape mismatch for " + name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const Real mhat = m[i] / c1;
      const Real vhat = v[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace MIFN_PRECISION
}  // namespace mifn
