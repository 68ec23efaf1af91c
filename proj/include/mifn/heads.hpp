#pragma once

// Output heads: mode switch, graph and sequence decoders, the two-mode
// mixture and the training losses.

#include <string>
#include <vector>

#include "mifn/autodiff.hpp"
#include "mifn/data.hpp"
#include "mifn/params.hpp"

namespace mifn {
inline namespace MIFN_PRECISION {

inline constexpr double kProbFloor = 1e-12;

inline std::string head_suffix(Domain target) { return target == Domain::A ? "_a." : "_b."; }

inline void add_head_params(ModelParams& p, Domain target, std::size_t d, std::size_t catalog, std::uint64_t& seed) {
  const std::string s = head_suffix(target);
  p.add("graph" + s + "w", xavier_init({d}, seed++));
  p.add("mode" + s + "W", xavier_init({2, 3 * d}, seed++));
  p.add("mode" + s + "b", Tensor::zeros({2}));
  p.add("seq" + s + "W", xavier_init({catalog, 2 * d}, seed++));
  p.add("seq" + s + "b", Tensor::zeros({catalog}));
}

/// (P(graph), P(sequence)) = softmax(W_m [h_tgt, h_transfer, sum_hT] + b_m).
inline Var mode_switch(Binding& b, Domain target, Var h_tgt, Var h_transfer, Var sum_ht) {
  using namespace ad;
  const std::string s = head_suffix(target);
  return softmax(add(matvec(b("mode" + s + "W"), concat({h_tgt, h_transfer, sum_ht})), b("mode" + s + "b")));
}

/// Softmax over the target-domain item entities of the subgraph (rows of HT
/// listed in `candidates`), scattered onto the catalog; zero elsewhere.
inline Var graph_decode(Binding& b, Domain target, Var HT, const std::vector<std::size_t>& candidates,
                        const std::vector<std::size_t>& catalog_index, std::size_t catalog) {
  using namespace ad;
  require(!candidates.empty(), "graph_decode: no target item entity in the subgraph");
  Var logits = matvec(gather_rows(HT, candidates), b("graph" + head_suffix(target) + "w"));
  return scatter(softmax(logits), catalog_index, catalog);
}

/// Softmax of W_I [h_tgt, h_transfer] + b_I over the catalog, restricted to `support`.
inline Var sequence_decode(Binding& b, Domain target, Var h_tgt, Var h_transfer, const std::vector<bool>& support) {
  using namespace ad;
  const std::string s = head_suffix(target);
  Var logits = add(matvec(b("seq" + s + "W"), concat({h_tgt, h_transfer})), b("seq" + s + "b"));
  return masked_softmax(logits, support);
}

/// P(item) = P(seq) * seq(item) + P(graph) * graph(item).
inline Var mix_probabilities(Var p_graph, Var p_seq, std::optional<Var> graph, Var seq) {
  using namespace ad;
  Var mixed = scalar_mul(p_seq, seq);
  if (graph) mixed = add(mixed, scalar_mul(p_graph, *graph));
  return mixed;
}

/// -log max(P(gt), floor). Sets `floored` when the floor was hit.
inline Var nll(Var mixed, std::size_t gt, bool* floored = nullptr) {
  require(gt < mixed.size(), "nll: ground truth out of range");
  if (floored) *floored = mixed.value()[gt] < kProbFloor;
  return ad::scale(ad::log_floor(ad::pick(mixed, gt), kProbFloor), -1.0);
}

enum class ModeLossReading { kAsWritten, kGraphMode };

/// Mode-loss term for one target: coefficient (1 - [gt in training vocabulary])
/// times -log P(seq) as written, or -log P(graph) under the alternative reading.
/// Returns nullopt when the coefficient is zero.
inline std::optional<Var> mode_loss_term(Var p_graph, Var p_seq, bool gt_in_vocab, ModeLossReading reading) {
  if (gt_in_vocab) return std::nullopt;
  Var p = reading == ModeLossReading::kAsWritten ? p_seq : p_graph;
  return ad::scale(ad::log_floor(p, kProbFloor), -1.0);
}

}  // namespace MIFN_PRECISION
}  // namespace mifn
