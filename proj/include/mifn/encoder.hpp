#pragma once

// Per-domain GRU encoders and the behaviour transfer unit.
//
// GRU (prefix p):   z = sig(Wz x + Uz h + bz)      r = sig(Wr x + Ur h + br)
//                   n = tanh(Wn x + Un (r*h) + bn)  h' = (1 - z) * h + z * n
// BTU step (prefix p, source S into target T):
//   f = sig(W_f_src h_S + W_f_tgt h_T + W_f prev + b_f)
//   c = tanh(W_h h_S + U_h prev + b_h)
//   out = f * c + (1 - f) * prev
// and the transfer GRU p.gru.* runs over the step outputs.

#include <optional>
#include <string>
#include <vector>

#include "mifn/autodiff.hpp"
#include "mifn/data.hpp"
#include "mifn/params.hpp"

namespace mifn {
inline namespace MIFN_PRECISION {

inline void add_gru_params(ModelParams& p, const std::string& prefix, std::size_t in, std::size_t d,
                           std::uint64_t& seed) {
  for (const char* gate : {"z", "r", "n"}) {
    p.add(prefix + "W_" + gate, xavier_init({d, in}, seed++));
    p.add(prefix + "U_" + gate, xavier_init({d, d}, seed++));
    p.add(prefix + "b_" + gate, Tensor::zeros({d}));
  }
}

inline void add_btu_params(ModelParams& p, const std::string& prefix, std::size_t d, std::uint64_t& seed) {
  for (const char* w : {"W_f_src", "W_f_tgt", "W_f", "W_h", "U_h"}) p.add(prefix + w, xavier_init({d, d}, seed++));
  p.add(prefix + "b_f", Tensor::zeros({d}));
  p.add(prefix + "b_h", Tensor::zeros({d}));
  add_gru_params(p, prefix + "gru.", d, d, seed);
}

/// GRU cell with pre-projected input terms (Wz x, Wr x, Wn x).
inline Var gru_cell(Binding& b, const std::string& p, Var xz, Var xr, Var xn, Var h) {
  using namespace ad;
  Var z = sigmoid(add(add(xz, matvec(b(p + "U_z"), h)), b(p + "b_z")));
  Var r = sigmoid(add(add(xr, matvec(b(p + "U_r"), h)), b(p + "b_r")));
  Var n = ad::tanh(add(add(xn, matvec(b(p + "U_n"), mul(r, h))), b(p + "b_n")));
  return add(mul(one_minus(z), h), mul(z, n));
}

inline Var gru_step(Binding& b, const std::string& p, Var x, Var h) {
  return gru_cell(b, p, ad::matvec(b(p + "W_z"), x), ad::matvec(b(p + "W_r"), x), ad::matvec(b(p + "W_n"), x), h);
}

/// Runs a GRU from the zero state over the rows of X (n x in). Returns the n states.
inline std::vector<Var> gru_run(Binding& b, const std::string& p, Var X, std::size_t d) {
  std::vector<Var> states;
  const std::size_t n = X.value().rank() == 2 ? X.value().rows() : 0;
  if (n == 0) return states;
  Var xz = ad::linear_rows(X, b(p + "W_z"));
  Var xr = ad::linear_rows(X, b(p + "W_r"));
  Var xn = ad::linear_rows(X, b(p + "W_n"));
  Var h = b.tape().constant(Tensor::zeros({d}));
  for (std::size_t i = 0; i < n; ++i) {
    h = gru_cell(b, p, ad::row(xz, i), ad::row(xr, i), ad::row(xn, i), h);
    states.push_back(h);
  }
  return states;
}

/// Encoder states for one domain's sub-sequence.
struct EncodedSequence {
  std::vector<Var> states;          // one per domain item, in order
  std::vector<std::size_t> positions;  // position of each step in the hybrid prefix
  Var zero;                         // zero vector of size d

  /// State after the last step strictly before hybrid position `pos`, or zero.
  Var before(std::size_t pos) const {
    Var out = zero;
    for (std::size_t k = 0; k < positions.size() && positions[k] < pos; ++k) out = states[k];
    return out;
  }
  Var summary() const { return states.empty() ? zero : states.back(); }
};

inline std::string encoder_prefix(Domain d) { return d == Domain::A ? "enc_a." : "enc_b."; }
inline std::string embedding_name(Domain d) { return d == Domain::A ? "emb.item_a" : "emb.item_b"; }

/// Encodes the domain-d items of a hybrid prefix.
inline EncodedSequence encode_sequence(Binding& b, const std::vector<Interaction>& prefix, Domain d, std::size_t dim) {
  EncodedSequence enc;
  enc.zero = b.tape().constant(Tensor::zeros({dim}));
  enc.positions = HybridSequence::positions(prefix, d);
  if (enc.positions.empty()) return enc;
  Var table = b(embedding_name(d));
  std::vector<std::size_t> rows;
  for (std::size_t pos : enc.positions) {
    require(prefix[pos].item < table.value().rows(), "encode_sequence: item index out of vocabulary");
    rows.push_back(prefix[pos].item);
  }
  enc.states = gru_run(b, encoder_prefix(d), ad::gather_rows(table, std::move(rows)), dim);
  return enc;
}

inline Var btu_step(Binding& b, const std::string& p, Var h_src, Var h_tgt, Var prev) {
  using namespace ad;
  Var f = sigmoid(add(add(add(matvec(b(p + "W_f_src"), h_src), matvec(b(p + "W_f_tgt"), h_tgt)),
                          matvec(b(p + "W_f"), prev)),
                      b(p + "b_f")));
  Var c = ad::tanh(add(add(matvec(b(p + "W_h"), h_src), matvec(b(p + "U_h"), prev)), b(p + "b_h")));
  return add(mul(f, c), mul(one_minus(f), prev));
}

/// Transferred behaviour flow from the source domain into the target domain.
struct TransferredFlow {
  std::vector<Var> states;             // transfer-GRU state per source step
  std::vector<std::size_t> positions;  // hybrid position of each source step
  Var zero;

  Var before(std::size_t pos) const {
    Var out = zero;
    for (std::size_t k = 0; k < positions.size() && positions[k] < pos; ++k) out = states[k];
    return out;
  }
  Var summary() const { return states.empty() ? zero : states.back(); }
};

inline std::string btu_prefix(Domain source) { return source == Domain::A ? "btu_ab." : "btu_ba."; }

/// Source step i is paired with the target state of the latest target-domain
/// item before it in hybrid order (zero when there is none).
inline TransferredFlow btu_transfer(Binding& b, const EncodedSequence& source, const EncodedSequence& target,
                                    Domain source_domain) {
  const std::string p = btu_prefix(source_domain);
  TransferredFlow flow;
  flow.zero = source.zero;
  flow.positions = source.positions;
  Var prev_step = source.zero;
  Var h = source.zero;
  for (std::size_t i = 0; i < source.states.size(); ++i) {
    Var step = btu_step(b, p, source.states[i], target.before(source.positions[i]), prev_step);
    h = gru_step(b, p + "gru.", step, h);
    flow.states.push_back(h);
    prev_step = step;
  }
  return flow;
}

}  // namespace MIFN_PRECISION
}  // namespace mifn
