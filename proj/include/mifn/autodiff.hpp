#pragma once

// Dense floating-point tensors and a tape-based reverse-mode differentiator.
//
// A Tape owns every node created during one forward pass. Parameters enter
// the tape as borrowed leaves (no copy); intermediate results are owned.
// Vectors are rank-1, matrices rank-2 row-major, scalars rank-0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mifn/error.hpp"

// Scalar type of every tensor. Builds that want a wider type (the
// extended-precision gradient reference) define both macros before the first
// include; the inline namespace keeps the two instantiations apart at link time.
#ifndef MIFN_REAL
#define MIFN_REAL double
#define MIFN_PRECISION f64
#endif

namespace mifn {
inline namespace MIFN_PRECISION {

using Real = MIFN_REAL;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

struct Tensor {
  Shape shape;
  std::vector<Real> values;
  bool requires_grad = false;

  Tensor() : shape{}, values(1, 0.0) {}
  Tensor(Shape s, std::vector<Real> v, bool grad = false)
      : shape(std::move(s)), values(std::move(v)), requires_grad(grad) {
    require(shape_size(shape) == values.size(),
            "tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                " values");
  }

  static Tensor zeros(Shape s) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<Real>(n, 0.0));
  }
  static Tensor filled(Shape s, Real x) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<Real>(n, x));
  }
  static Tensor scalar(Real x) { return Tensor({}, {x}); }
  static Tensor vector(std::vector<Real> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Real> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  Real& operator[](std::size_t i) { return values[i]; }
  Real operator[](std::size_t i) const { return values[i]; }
  Real& at(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }
  Real at(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](Real x) { return std::isfinite(x); });
  }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its Tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  Real item() const;
  const std::vector<Real>& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push(std::move(t), nullptr, false, {}); }

  /// Owned leaf that receives a gradient.
  Var variable(Tensor t) { return push(std::move(t), nullptr, true, {}); }

  /// Leaf that refers to a tensor owned elsewhere. The tensor must outlive the tape.
  Var bind(const Tensor& external, bool requires_grad) {
    return push(Tensor::zeros({0}), &external, requires_grad, {});
  }

  Var record(Tensor out, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    return push(std::move(out), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var record(Tensor out, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    return push(std::move(out), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::vector<Real>& grad(std::size_t id) { return nodes_[id].grad; }
  const std::vector<Real>& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Every record is visited once, newest first.
  void backward(Var loss) {
    require(&loss.tape() == this, "backward: loss belongs to another tape");
    require(value(loss.id()).size() == 1, "backward: loss must be a scalar, got shape " +
                                              shape_str(value(loss.id()).shape));
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.needs_grad) n.grad.assign(value(i).size(), 0.0);
      else n.grad.clear();
    }
    if (!nodes_[loss.id()].needs_grad) return;
    nodes_[loss.id()].grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    std::vector<Real> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var push(Tensor owned, const Tensor* borrowed, bool needs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(owned), borrowed, {}, std::move(fn), needs});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline Real Var::item() const {
  require(value().size() == 1, "item() on non-scalar of shape " + shape_str(value().shape));
  return value()[0];
}
inline const std::vector<Real>& Var::grad() const { return tape_->grad(id_); }

namespace ad {

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  require(&a.tape() == &b.tape(), "operands live on different tapes");
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  same_tape(a, b);
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

inline Real sigmoid(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// W (o x i) times x (i) -> (o).
inline Var matvec(Var W, Var x) {
  detail::same_tape(W, x);
  const Tensor& w = W.value();
  const Tensor& v = x.value();
  require(w.rank() == 2 && v.rank() == 1 && w.cols() == v.size(),
          "matvec: bad shapes " + shape_str(w.shape) + " x " + shape_str(v.shape));
  const std::size_t o = w.rows(), n = w.cols();
  std::vector<Real> out(o, 0.0);
  for (std::size_t r = 0; r < o; ++r) {
    const Real* wr = &w.values[r * n];
    Real acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += wr[c] * v.values[c];
    out[r] = acc;
  }
  return W.tape().record(Tensor::vector(std::move(out)), {W, x},
                         [wi = W.id(), xi = x.id(), o, n](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           if (t.needs_grad(wi)) {
                             auto& gw = t.grad(wi);
                             const auto& xv = t.value(xi).values;
                             for (std::size_t r = 0; r < o; ++r)
                               for (std::size_t c = 0; c < n; ++c) gw[r * n + c] += g[r] * xv[c];
                           }
                           if (t.needs_grad(xi)) {
                             auto& gx = t.grad(xi);
                             const auto& wv = t.value(wi).values;
                             for (std::size_t r = 0; r < o; ++r)
                               for (std::size_t c = 0; c < n; ++c) gx[c] += g[r] * wv[r * n + c];
                           }
                         });
}

/// Row-wise affine map without bias: X (n x i), W (o x i) -> X W^T (n x o).
inline Var linear_rows(Var X, Var W) {
  detail::same_tape(X, W);
  const Tensor& x = X.value();
  const Tensor& w = W.value();
  require(x.rank() == 2 && w.rank() == 2 && x.cols() == w.cols(),
          "linear_rows: bad shapes " + shape_str(x.shape) + " x " + shape_str(w.shape) + "^T");
  const std::size_t n = x.rows(), in = x.cols(), o = w.rows();
  std::vector<Real> out(n * o, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const Real* xr = &x.values[k * in];
    for (std::size_t r = 0; r < o; ++r) {
      const Real* wr = &w.values[r * in];
      Real acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += xr[c] * wr[c];
      out[k * o + r] = acc;
    }
  }
  return X.tape().record(Tensor::matrix(n, o, std::move(out)), {X, W},
                         [xi = X.id(), wi = W.id(), n, in, o](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           if (t.needs_grad(xi)) {
                             auto& gx = t.grad(xi);
                             const auto& wv = t.value(wi).values;
                             for (std::size_t k = 0; k < n; ++k)
                               for (std::size_t r = 0; r < o; ++r) {
                                 const Real gk = g[k * o + r];
                                 if (gk == 0.0) continue;
                                 for (std::size_t c = 0; c < in; ++c) gx[k * in + c] += gk * wv[r * in + c];
                               }
                           }
                           if (t.needs_grad(wi)) {
                             auto& gw = t.grad(wi);
                             const auto& xv = t.value(xi).values;
                             for (std::size_t k = 0; k < n; ++k)
                               for (std::size_t r = 0; r < o; ++r) {
                                 const Real gk = g[k * o + r];
                                 if (gk == 0.0) continue;
                                 for (std::size_t c = 0; c < in; ++c) gw[r * in + c] += gk * xv[k * in + c];
                               }
                           }
                         });
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  Tensor out = a.value();
  out.requires_grad = false;
  const auto& bv = b.value().values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t id : {ai, bi}) {
      if (!t.needs_grad(id)) continue;
      auto& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  Tensor out = a.value();
  out.requires_grad = false;
  const auto& bv = b.value().values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  Tensor out = a.value();
  out.requires_grad = false;
  const auto& bv = b.value().values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad(ai);
      const auto& bv = t.value(bi).values;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad(bi);
      const auto& av = t.value(ai).values;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// X (n x d) plus v (d) broadcast over rows.
inline Var add_row(Var X, Var v) {
  detail::same_tape(X, v);
  const Tensor& x = X.value();
  require(x.rank() == 2 && v.value().rank() == 1 && v.size() == x.cols(),
          "add_row: bad shapes " + shape_str(x.shape) + " + " + shape_str(v.shape()));
  Tensor out = x;
  out.requires_grad = false;
  const std::size_t n = x.rows(), d = x.cols();
  const auto& vv = v.value().values;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < d; ++c) out.values[k * d + c] += vv[c];
  return X.tape().record(std::move(out), {X, v}, [xi = X.id(), vi = v.id(), n, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(xi)) {
      auto& gx = t.grad(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.needs_grad(vi)) {
      auto& gv = t.grad(vi);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t c = 0; c < d; ++c) gv[c] += g[k * d + c];
    }
  });
}

/// X (n x d) times v (d) elementwise, broadcast over rows.
inline Var mul_row(Var X, Var v) {
  detail::same_tape(X, v);
  const Tensor& x = X.value();
  require(x.rank() == 2 && v.value().rank() == 1 && v.size() == x.cols(),
          "mul_row: bad shapes " + shape_str(x.shape) + " * " + shape_str(v.shape()));
  Tensor out = x;
  out.requires_grad = false;
  const std::size_t n = x.rows(), d = x.cols();
  const auto& vv = v.value().values;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < d; ++c) out.values[k * d + c] *= vv[c];
  return X.tape().record(std::move(out), {X, v}, [xi = X.id(), vi = v.id(), n, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi).values;
    const auto& vv = t.value(vi).values;
    if (t.needs_grad(xi)) {
      auto& gx = t.grad(xi);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t c = 0; c < d; ++c) gx[k * d + c] += g[k * d + c] * vv[c];
    }
    if (t.needs_grad(vi)) {
      auto& gv = t.grad(vi);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t c = 0; c < d; ++c) gv[c] += g[k * d + c] * xv[k * d + c];
    }
  });
}

/// Row k of X (n x d) scaled by a[k].
inline Var scale_rows(Var X, Var a) {
  detail::same_tape(X, a);
  const Tensor& x = X.value();
  require(x.rank() == 2 && a.value().rank() == 1 && a.size() == x.rows(),
          "scale_rows: bad shapes " + shape_str(x.shape) + " by " + shape_str(a.shape()));
  Tensor out = x;
  out.requires_grad = false;
  const std::size_t n = x.rows(), d = x.cols();
  const auto& av = a.value().values;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < d; ++c) out.values[k * d + c] *= av[k];
  return X.tape().record(std::move(out), {X, a}, [xi = X.id(), ai = a.id(), n, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi).values;
    const auto& av = t.value(ai).values;
    if (t.needs_grad(xi)) {
      auto& gx = t.grad(xi);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t c = 0; c < d; ++c) gx[k * d + c] += g[k * d + c] * av[k];
    }
    if (t.needs_grad(ai)) {
      auto& ga = t.grad(ai);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t c = 0; c < d; ++c) ga[k] += g[k * d + c] * xv[k * d + c];
    }
  });
}

/// x times a constant.
inline Var scale(Var x, Real c) {
  Tensor out = x.value();
  out.requires_grad = false;
  for (Real& v : out.values) v *= c;
  return x.tape().record(std::move(out), {x}, [xi = x.id(), c](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

/// x times a scalar node s.
inline Var scalar_mul(Var s, Var x) {
  detail::same_tape(s, x);
  require(s.size() == 1, "scalar_mul: first operand must be scalar");
  const Real sv = s.value()[0];
  Tensor out = x.value();
  out.requires_grad = false;
  for (Real& v : out.values) v *= sv;
  return x.tape().record(std::move(out), {s, x}, [si = s.id(), xi = x.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const Real sv = t.value(si)[0];
    const auto& xv = t.value(xi).values;
    if (t.needs_grad(xi)) {
      auto& gx = t.grad(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
    }
    if (t.needs_grad(si)) {
      Real acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad(si)[0] += acc;
    }
  });
}

inline Var sigmoid(Var x) {
  Tensor out = x.value();
  out.requires_grad = false;
  for (Real& v : out.values) v = detail::sigmoid(v);
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).values;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var tanh(Var x) {
  Tensor out = x.value();
  out.requires_grad = false;
  for (Real& v : out.values) v = std::tanh(v);
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).values;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

/// 1 - x elementwise.
inline Var one_minus(Var x) {
  Tensor out = x.value();
  out.requires_grad = false;
  for (Real& v : out.values) v = 1.0 - v;
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
  });
}

/// Concatenation of rank-1 tensors.
inline Var concat(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat: no inputs");
  std::vector<Real> out;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    require(p.value().rank() == 1, "concat: inputs must be vectors");
    offsets.push_back(out.size());
    out.insert(out.end(), p.value().values.begin(), p.value().values.end());
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts.front().tape().record(Tensor::vector(std::move(out)), parts,
                                     [ids, offsets](Tape& t, std::size_t self) {
                                       const auto& g = t.grad(self);
                                       for (std::size_t k = 0; k < ids.size(); ++k) {
                                         if (!t.needs_grad(ids[k])) continue;
                                         auto& gk = t.grad(ids[k]);
                                         for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] + i];
                                       }
                                     });
}

namespace detail {

inline Var softmax_over(Var v, const std::vector<bool>* mask) {
  const Tensor& x = v.value();
  require(x.rank() == 1, "softmax: input must be a vector, got " + shape_str(x.shape));
  require(x.size() > 0, "softmax: empty vector");
  const std::size_t n = x.size();
  auto active = [&](std::size_t i) { return mask == nullptr || (*mask)[i]; };
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (active(i)) mx = std::max(mx, x[i]);
  require(std::isfinite(mx), "softmax: no finite active entry");
  std::vector<Real> out(n, 0.0);
  Real z = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (active(i)) z += (out[i] = std::exp(x[i] - mx));
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
  return v.tape().record(Tensor::vector(std::move(out)), {v}, [vi = v.id()](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).values;
    Real inner = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += g[i] * y[i];
    auto& gv = t.grad(vi);
    // masked entries have y == 0 and receive no gradient
    for (std::size_t i = 0; i < y.size(); ++i) gv[i] += y[i] * (g[i] - inner);
  });
}

}  // namespace detail

inline Var softmax(Var v) { return detail::softmax_over(v, nullptr); }

/// Softmax restricted to entries where mask is true; the rest are exactly 0.
inline Var masked_softmax(Var v, const std::vector<bool>& mask) {
  require(mask.size() == v.size(), "masked_softmax: mask size mismatch");
  return detail::softmax_over(v, &mask);
}

/// log(max(x, floor)) elementwise. Floored entries pass no gradient.
inline Var log_floor(Var x, Real floor) {
  Tensor out = x.value();
  out.requires_grad = false;
  for (Real& v : out.values) v = std::log(std::max(v, floor));
  return x.tape().record(std::move(out), {x}, [xi = x.id(), floor](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi).values;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > floor) gx[i] += g[i] / xv[i];
  });
}

/// Sum of all entries, as a scalar.
inline Var sum(Var x) {
  Real acc = 0.0;
  for (Real v : x.value().values) acc += v;
  return x.tape().record(Tensor::scalar(acc), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    auto& gx = t.grad(xi);
    for (Real& v : gx) v += g;
  });
}

/// Sum of scalar nodes, accumulated left to right.
inline Var add_scalars(const std::vector<Var>& xs) {
  require(!xs.empty(), "add_scalars: no inputs");
  Real acc = 0.0;
  std::vector<std::size_t> ids;
  for (const Var& x : xs) {
    require(x.size() == 1, "add_scalars: inputs must be scalars");
    acc += x.value()[0];
    ids.push_back(x.id());
  }
  return xs.front().tape().record(Tensor::scalar(acc), xs, [ids](Tape& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    for (std::size_t id : ids)
      if (t.needs_grad(id)) t.grad(id)[0] += g;
  });
}

/// Column sums of X (n x d) -> (d).
inline Var sum_rows(Var X) {
  const Tensor& x = X.value();
  require(x.rank() == 2, "sum_rows: input must be a matrix");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<Real> out(d, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < d; ++c) out[c] += x.values[k * d + c];
  return X.tape().record(Tensor::vector(std::move(out)), {X}, [xi = X.id(), n, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < d; ++c) gx[k * d + c] += g[c];
  });
}

inline Var mean_rows(Var X) {
  require(X.value().rank() == 2 && X.value().rows() > 0, "mean_rows: need a non-empty matrix");
  return scale(sum_rows(X), 1.0 / static_cast<Real>(X.value().rows()));
}

inline Var dot(Var a, Var b) {
  detail::same_shape(a, b, "dot");
  const auto& av = a.value().values;
  const auto& bv = b.value().values;
  Real acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return a.tape().record(Tensor::scalar(acc), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    if (t.needs_grad(ai)) {
      auto& ga = t.grad(ai);
      const auto& bv = t.value(bi).values;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad(bi);
      const auto& av = t.value(ai).values;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
    }
  });
}

/// Rows idx[0], idx[1], ... of table (r x d) -> (k x d).
inline Var gather_rows(Var table, std::vector<std::size_t> idx) {
  const Tensor& x = table.value();
  require(x.rank() == 2, "gather_rows: table must be a matrix");
  const std::size_t d = x.cols();
  std::vector<Real> out;
  out.reserve(idx.size() * d);
  for (std::size_t r : idx) {
    require(r < x.rows(), "gather_rows: row " + std::to_string(r) + " out of range " +
                              std::to_string(x.rows()));
    out.insert(out.end(), x.values.begin() + static_cast<std::ptrdiff_t>(r * d),
               x.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
  }
  const std::size_t k = idx.size();
  return table.tape().record(Tensor::matrix(k, d, std::move(out)), {table},
                             [ti = table.id(), idx = std::move(idx), d](Tape& t, std::size_t self) {
                               const auto& g = t.grad(self);
                               auto& gt = t.grad(ti);
                               for (std::size_t k = 0; k < idx.size(); ++k)
                                 for (std::size_t c = 0; c < d; ++c) gt[idx[k] * d + c] += g[k * d + c];
                             });
}

/// Row i of X as a vector.
inline Var row(Var X, std::size_t i) {
  const Tensor& x = X.value();
  require(x.rank() == 2 && i < x.rows(), "row: index out of range");
  const std::size_t d = x.cols();
  std::vector<Real> out(x.values.begin() + static_cast<std::ptrdiff_t>(i * d),
                          x.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  return X.tape().record(Tensor::vector(std::move(out)), {X}, [xi = X.id(), i, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t c = 0; c < d; ++c) gx[i * d + c] += g[c];
  });
}

/// Entry i of a vector, as a scalar.
inline Var pick(Var x, std::size_t i) {
  require(i < x.size(), "pick: index out of range");
  return x.tape().record(Tensor::scalar(x.value()[i]), {x}, [xi = x.id(), i](Tape& t, std::size_t self) {
    t.grad(xi)[i] += t.grad(self)[0];
  });
}

/// Vector of length size with out[idx[k]] = x[k], zero elsewhere.
inline Var scatter(Var x, std::vector<std::size_t> idx, std::size_t size) {
  require(x.value().rank() == 1 && x.size() == idx.size(), "scatter: index count mismatch");
  std::vector<Real> out(size, 0.0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    require(idx[k] < size, "scatter: index out of range");
    out[idx[k]] += x.value()[k];
  }
  return x.tape().record(Tensor::vector(std::move(out)), {x}, [xi = x.id(), idx = std::move(idx)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t k = 0; k < idx.size(); ++k) gx[k] += g[idx[k]];
  });
}

/// (n x d) matrix whose row k is c when first[k] is true and 1 - c otherwise.
inline Var rowwise_gate(Var c, std::vector<bool> first) {
  require(c.value().rank() == 1, "rowwise_gate: gate must be a vector");
  const std::size_t n = first.size(), d = c.size();
  std::vector<Real> out(n * d);
  const auto& cv = c.value().values;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < d; ++j) out[k * d + j] = first[k] ? cv[j] : 1.0 - cv[j];
  return c.tape().record(Tensor::matrix(n, d, std::move(out)), {c},
                         [ci = c.id(), first = std::move(first), d](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           auto& gc = t.grad(ci);
                           for (std::size_t k = 0; k < first.size(); ++k)
                             for (std::size_t j = 0; j < d; ++j) gc[j] += first[k] ? g[k * d + j] : -g[k * d + j];
                         });
}

struct SparseEntry {
  std::size_t out_row;
  std::size_t in_row;
  Real coef;
};

/// out[r] = sum over entries (r, p, coef) of coef * X[p]; a constant sparse matrix times X.
inline Var sparse_rows(Var X, std::vector<SparseEntry> entries, std::size_t out_rows) {
  const Tensor& x = X.value();
  require(x.rank() == 2, "sparse_rows: input must be a matrix");
  const std::size_t d = x.cols();
  std::vector<Real> out(out_rows * d, 0.0);
  for (const auto& e : entries) {
    require(e.out_row < out_rows && e.in_row < x.rows(), "sparse_rows: entry out of range");
    for (std::size_t c = 0; c < d; ++c) out[e.out_row * d + c] += e.coef * x.values[e.in_row * d + c];
  }
  return X.tape().record(Tensor::matrix(out_rows, d, std::move(out)), {X},
                         [xi = X.id(), entries = std::move(entries), d](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           auto& gx = t.grad(xi);
                           for (const auto& e : entries)
                             for (std::size_t c = 0; c < d; ++c) gx[e.in_row * d + c] += e.coef * g[e.out_row * d + c];
                         });
}

/// out[e] = S[a_e] . X[b_e] for each pair (a_e, b_e).
inline Var row_pair_dots(Var S, Var X, std::vector<std::pair<std::size_t, std::size_t>> pairs) {
  detail::same_tape(S, X);
  const Tensor& s = S.value();
  const Tensor& x = X.value();
  require(s.rank() == 2 && x.rank() == 2 && s.cols() == x.cols(), "row_pair_dots: bad shapes");
  const std::size_t d = s.cols();
  std::vector<Real> out(pairs.size(), 0.0);
  for (std::size_t e = 0; e < pairs.size(); ++e) {
    const auto [a, b] = pairs[e];
    require(a < s.rows() && b < x.rows(), "row_pair_dots: index out of range");
    Real acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += s.values[a * d + c] * x.values[b * d + c];
    out[e] = acc;
  }
  return S.tape().record(Tensor::vector(std::move(out)), {S, X},
                         [si = S.id(), xi = X.id(), pairs = std::move(pairs), d](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           const auto& sv = t.value(si).values;
                           const auto& xv = t.value(xi).values;
                           for (std::size_t e = 0; e < pairs.size(); ++e) {
                             const auto [a, b] = pairs[e];
                             if (t.needs_grad(si)) {
                               auto& gs = t.grad(si);
                               for (std::size_t c = 0; c < d; ++c) gs[a * d + c] += g[e] * xv[b * d + c];
                             }
                             if (t.needs_grad(xi)) {
                               auto& gx = t.grad(xi);
                               for (std::size_t c = 0; c < d; ++c) gx[b * d + c] += g[e] * sv[a * d + c];
                             }
                           }
                         });
}

/// One relation-tagged message from entity `source` into entity `target`.
struct EdgeTerm {
  std::size_t target;
  std::size_t source;
  std::size_t relation;
  Real scale;
};

/// Weighted neighbour aggregation used by the graph convolution:
///   out[k] = sum_e scale_e * w[r_e] * ((att[p_e] + offset_e) * Y[p_e] + bias)
/// where Y holds the already-transformed neighbour states. `rel_weight` and
/// `offsets` are optional; absent they act as 1 and 0.
inline Var edge_aggregate(Var Y, Var att, std::optional<Var> rel_weight, Var bias, std::vector<EdgeTerm> edges,
                          std::optional<Var> offsets, std::size_t rows) {
  const Tensor& y = Y.value();
  require(y.rank() == 2, "edge_aggregate: Y must be a matrix");
  const std::size_t d = y.cols();
  require(att.size() == y.rows(), "edge_aggregate: attention length mismatch");
  require(bias.size() == d, "edge_aggregate: bias length mismatch");
  require(!offsets || offsets->size() == edges.size(), "edge_aggregate: offsets length mismatch");
  const auto& av = att.value().values;
  const auto& bv = bias.value().values;
  std::vector<Real> out(rows * d, 0.0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const EdgeTerm& t = edges[e];
    require(t.target < rows && t.source < y.rows(), "edge_aggregate: edge out of range");
    const Real w = rel_weight ? rel_weight->value().values.at(t.relation) : 1.0;
    const Real a = av[t.source] + (offsets ? offsets->value()[e] : 0.0);
    for (std::size_t c = 0; c < d; ++c)
      out[t.target * d + c] += t.scale * w * (a * y.values[t.source * d + c] + bv[c]);
  }
  std::vector<Var> inputs{Y, att, bias};
  if (rel_weight) inputs.push_back(*rel_weight);
  if (offsets) inputs.push_back(*offsets);
  const std::size_t wi = rel_weight ? rel_weight->id() : SIZE_MAX;
  const std::size_t oi = offsets ? offsets->id() : SIZE_MAX;
  return Y.tape().record(
      Tensor::matrix(rows, d, std::move(out)), inputs,
      [yi = Y.id(), ai = att.id(), bi = bias.id(), wi, oi, edges = std::move(edges), d](Tape& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& yv = t.value(yi).values;
        const auto& av = t.value(ai).values;
        const auto& bv = t.value(bi).values;
        for (std::size_t e = 0; e < edges.size(); ++e) {
          const EdgeTerm& edge = edges[e];
          const Real w = wi != SIZE_MAX ? t.value(wi).values[edge.relation] : 1.0;
          const Real a = av[edge.source] + (oi != SIZE_MAX ? t.value(oi)[e] : 0.0);
          const Real* gk = &g[edge.target * d];
          const Real* yp = &yv[edge.source * d];
          Real gy_dot = 0.0, gb_dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            gy_dot += gk[c] * yp[c];
            gb_dot += gk[c] * bv[c];
          }
          if (t.needs_grad(yi)) {
            auto& gy = t.grad(yi);
            for (std::size_t c = 0; c < d; ++c) gy[edge.source * d + c] += edge.scale * w * a * gk[c];
          }
          if (t.needs_grad(ai)) t.grad(ai)[edge.source] += edge.scale * w * gy_dot;
          if (oi != SIZE_MAX && t.needs_grad(oi)) t.grad(oi)[e] += edge.scale * w * gy_dot;
          if (t.needs_grad(bi)) {
            auto& gb = t.grad(bi);
            for (std::size_t c = 0; c < d; ++c) gb[c] += edge.scale * w * gk[c];
          }
          if (wi != SIZE_MAX && t.needs_grad(wi)) t.grad(wi)[edge.relation] += edge.scale * (a * gy_dot + gb_dot);
        }
      });
}

}  // namespace ad
}  // namespace MIFN_PRECISION
}  // namespace mifn
