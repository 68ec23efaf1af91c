#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mifn/params.hpp"

namespace mifn {
inline namespace MIFN_PRECISION {

/// Builds a scalar loss on the given tape, reading parameters through the binding.
using LossBuilder = std::function<Var(Binding&)>;

/// Plain per-parameter values, independent of the tensor scalar type.
using ValueMap = std::map<std::string, std::vector<double>>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries_checked = 0;
};

inline Real evaluate_loss(const LossBuilder& fn, const ModelParams& params) {
  Tape tape;
  Binding b(tape, params, false);
  return fn(b).value()[0];
}

inline GradMap analytic_gradients(const LossBuilder& fn, const ModelParams& params) {
  Tape tape;
  Binding b(tape, params, true);
  Var loss = fn(b);
  return grad(loss, b);
}

/// (f(p + eps) - f(p - eps)) / (2 eps) for every parameter entry.
inline ValueMap central_differences(const LossBuilder& fn, ModelParams& params, double eps) {
  require(eps > 0, "finite_diff_check: eps must be positive");
  const Real base = evaluate_loss(fn, params);
  if (evaluate_loss(fn, params) != base)
    throw ContractViolation("finite_diff_check: loss function is not deterministic");
  const Real step = static_cast<Real>(eps);
  ValueMap out;
  for (auto& [name, tensor] : params.all()) {
    auto& col = out[name];
    col.resize(tensor.size());
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const Real saved = tensor.values[i];
      tensor.values[i] = saved + step;
      const Real up = evaluate_loss(fn, params);
      tensor.values[i] = saved - step;
      const Real down = evaluate_loss(fn, params);
      tensor.values[i] = saved;
      col[i] = static_cast<double>((up - down) / (2 * step));
    }
  }
  return out;
}

/// Entry-wise |a - n| / max(|a|, |n|, floor), maximised over every entry.
inline GradCheckResult compare_gradients(const GradMap& analytic, const ValueMap& numeric, double floor = 1e-8) {
  GradCheckResult res;
  for (const auto& [name, n] : numeric) {
    const auto& a = analytic.at(name);
    require(a.size() == n.size(), "compare_gradients: size mismatch for " + name);
    for (std::size_t i = 0; i < n.size(); ++i) {
      const double ai = static_cast<double>(a[i]);
      const double abs_err = std::abs(ai - n[i]);
      const double err = abs_err / std::max({std::abs(ai), std::abs(n[i]), floor});
      ++res.entries_checked;
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = name;
        res.worst_index = i;
        res.worst_analytic = ai;
        res.worst_numeric = n[i];
      }
    }
  }
  return res;
}

inline GradCheckResult finite_diff_error(const LossBuilder& fn, ModelParams& params, const GradMap& analytic,
                                         double eps) {
  return compare_gradients(analytic, central_differences(fn, params, eps));
}

inline GradCheckResult finite_diff_check(const LossBuilder& fn, ModelParams& params, double eps) {
  return finite_diff_error(fn, params, analytic_gradients(fn, params), eps);
}

/// Copies parameter values out as doubles.
inline ValueMap export_values(const ModelParams& params) {
  ValueMap out;
  for (const auto& [name, t] : params.all()) out[name] = std::vector<double>(t.values.begin(), t.values.end());
  return out;
}

/// Overwrites parameter values from doubles; names and sizes must match.
inline void import_values(ModelParams& params, const ValueMap& values) {
  for (auto& [name, t] : params.all()) {
    const auto it = values.find(name);
    require(it != values.end() && it->second.size() == t.size(), "import_values: mismatch for " + name);
    std::copy(it->second.begin(), it->second.end(), t.values.begin());
  }
  require(values.size() == params.all().size(), "import_values: unexpected extra parameters");
}

}  // namespace MIFN_PRECISION
}  // namespace mifn
