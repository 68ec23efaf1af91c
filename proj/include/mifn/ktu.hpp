#pragma once

// Knowledge transfer unit: attention-weighted, cross-gated graph convolution
// over a sequence's subgraph followed by a gated merge with the initial entity
// embeddings. One unit per target domain; the other domain is the source.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mifn/autodiff.hpp"
#include "mifn/kg.hpp"
#include "mifn/params.hpp"

namespace mifn {
inline namespace MIFN_PRECISION {

enum class Activation { kSigmoid, kIdentity };

inline std::string ktu_prefix(Domain target) { return target == Domain::A ? "ktu_a." : "ktu_b."; }

inline void add_ktu_params(ModelParams& p, const std::string& prefix, std::size_t d, std::size_t relations,
                           std::uint64_t& seed) {
  for (const char* group : {"att_src.", "att_tgt."}) {
    p.add(prefix + group + "W_q", xavier_init({d, d}, seed++));
    p.add(prefix + group + "W_e", xavier_init({d, d}, seed++));
    p.add(prefix + group + "v", xavier_init({d}, seed++));
  }
  p.add(prefix + "gate.W_c", xavier_init({d, 3 * d}, seed++));
  p.add(prefix + "gate.b_c", Tensor::zeros({d}));
  for (const char* f : {"f0.", "fi.", "fc."}) {
    p.add(prefix + f + "W", xavier_init({d, d}, seed++));
    p.add(prefix + f + "b", Tensor::zeros({d}));
  }
  p.add(prefix + "rel_w", Tensor::filled({relations}, 1.0));
  for (const char* w : {"W_r", "U_r", "W_f", "U_f", "V_f", "W_h"}) p.add(prefix + w, xavier_init({d, d}, seed++));
  p.add(prefix + "b_r", Tensor::zeros({d}));
  p.add(prefix + "b_f", Tensor::zeros({d}));
  p.add(prefix + "U_h", xavier_init({d}, seed++));
}

/// Neighbourhood structure of a subgraph, shared by both transfer units.
/// Edges are taken in both directions; a neighbour reached through several
/// relations contributes once per relation but counts once for normalisation.
struct DisseminationPlan {
  std::size_t entities = 0;
  std::vector<ad::EdgeTerm> in_domain;
  std::vector<ad::EdgeTerm> cross_domain;
  std::vector<ad::SparseEntry> in_neighbour_sum;                  // row k = sum of in-domain neighbours
  std::vector<std::pair<std::size_t, std::size_t>> cross_pairs;  // (k, q) per cross_domain term

  static DisseminationPlan build(const KnowledgeSubgraph& g) {
    DisseminationPlan plan;
    plan.entities = g.size();
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> terms;  // target, source, relation
    for (const LocalEdge& e : g.edges) {
      terms.emplace(e.head, e.tail, e.relation);
      terms.emplace(e.tail, e.head, e.relation);
    }
    std::vector<std::set<std::size_t>> n_in(g.size()), n_cross(g.size());
    for (const auto& [k, p, r] : terms) (g.domains[k] == g.domains[p] ? n_in : n_cross)[k].insert(p);
    for (const auto& [k, p, r] : terms) {
      const bool same = g.domains[k] == g.domains[p];
      const Real scale = Real(1) / static_cast<Real>((same ? n_in : n_cross)[k].size());
      if (same) {
        plan.in_domain.push_back({k, p, r, scale});
      } else {
        plan.cross_domain.push_back({k, p, r, scale});
        plan.cross_pairs.emplace_back(k, p);
      }
    }
    for (std::size_t k = 0; k < g.size(); ++k)
      for (std::size_t p : n_in[k]) plan.in_neighbour_sum.push_back({k, p, 1.0});
    return plan;
  }
};

struct KtuOptions {
  std::size_t layers = 2;
  bool relation_weights = true;
  Activation activation = Activation::kSigmoid;
};

/// Intermediate and final entity states of one transfer unit run.
struct EntityStates {
  Var initial;                 // H0 (n x d)
  Var weights;                 // per-entity attention weight (n)
  Var gate;                    // cross-domain gate c (d)
  std::vector<Var> layers;     // layer 0 .. L (n x d)
  Var transferred;             // H^T (n x d)
};

/// softmax_k v . tanh(W_q query + W_e h0_k) over the given rows of H0.
inline Var entity_attention(Binding& b, const std::string& p, Var query, Var H0, const std::vector<std::size_t>& rows) {
  using namespace ad;
  Var group = gather_rows(H0, rows);
  Var s = ad::tanh(add_row(linear_rows(group, b(p + "W_e")), matvec(b(p + "W_q"), query)));
  return softmax(matvec(s, b(p + "v")));
}

inline Var cross_gate(Binding& b, const std::string& p, Var h_src, Var h_transfer, Var H0) {
  using namespace ad;
  return sigmoid(add(matvec(b(p + "gate.W_c"), concat({h_src, h_transfer, mean_rows(H0)})), b(p + "gate.b_c")));
}

inline Var disseminate(Binding& b, const std::string& p, Var X, Var weights, const DisseminationPlan& plan,
                       Var offsets, const KtuOptions& opt) {
  using namespace ad;
  std::optional<Var> rel;
  if (opt.relation_weights) rel = b(p + "rel_w");
  Var acc = add_row(linear_rows(X, b(p + "f0.W")), b(p + "f0.b"));
  if (!plan.in_domain.empty())
    acc = add(acc, edge_aggregate(linear_rows(X, b(p + "fi.W")), weights, rel, b(p + "fi.b"), plan.in_domain,
                                  std::nullopt, plan.entities));
  if (!plan.cross_domain.empty())
    acc = add(acc, edge_aggregate(linear_rows(X, b(p + "fc.W")), weights, rel, b(p + "fc.b"), plan.cross_domain,
                                  offsets, plan.entities));
  return opt.activation == Activation::kSigmoid ? sigmoid(acc) : acc;
}

inline Var gated_transfer(Binding& b, const std::string& p, Var H0, Var XL, Var h_src) {
  using namespace ad;
  Var R = sigmoid(add_row(add(linear_rows(H0, b(p + "W_r")), linear_rows(XL, b(p + "U_r"))), b(p + "b_r")));
  Var F = sigmoid(add_row(add(linear_rows(H0, b(p + "W_f")), linear_rows(XL, b(p + "U_f"))),
                          add(matvec(b(p + "V_f"), h_src), b(p + "b_f"))));
  Var C = ad::tanh(add(linear_rows(XL, b(p + "W_h")), mul_row(mul(R, H0), b(p + "U_h"))));
  return add(mul(one_minus(F), H0), mul(F, C));
}

/// Runs the unit for target domain `target`. h_src is the source-domain
/// sequence summary and h_transfer the source-to-target behaviour flow.
/// The subgraph must be non-empty.
inline EntityStates run_ktu(Binding& b, const KnowledgeSubgraph& g, const DisseminationPlan& plan, Domain target,
                            Var h_src, Var h_transfer, const KtuOptions& opt) {
  using namespace ad;
  require(!g.empty(), "run_ktu: empty subgraph");
  const std::string p = ktu_prefix(target);
  const Domain source = other(target);
  EntityStates st;
  st.initial = gather_rows(b("emb.entity"), g.entities);
  const std::size_t n = g.size();

  std::vector<std::size_t> src_rows, tgt_rows;
  std::vector<bool> is_src(n);
  for (std::size_t k = 0; k < n; ++k) {
    is_src[k] = g.domains[k] == source;
    (is_src[k] ? src_rows : tgt_rows).push_back(k);
  }
  std::vector<Var> parts;
  if (!src_rows.empty())
    parts.push_back(scatter(entity_attention(b, p + "att_src.", h_src, st.initial, src_rows), src_rows, n));
  if (!tgt_rows.empty())
    parts.push_back(scatter(entity_attention(b, p + "att_tgt.", h_transfer, st.initial, tgt_rows), tgt_rows, n));
  st.weights = parts.size() == 1 ? parts[0] : add(parts[0], parts[1]);

  st.gate = cross_gate(b, p, h_src, h_transfer, st.initial);
  st.layers.push_back(mul(rowwise_gate(st.gate, is_src), scale_rows(st.initial, st.weights)));

  Var offsets;
  if (!plan.cross_domain.empty())
    offsets = row_pair_dots(sparse_rows(st.initial, plan.in_neighbour_sum, n), st.initial, plan.cross_pairs);
  for (std::size_t l = 0; l < opt.layers; ++l)
    st.layers.push_back(disseminate(b, p, st.layers.back(), st.weights, plan, offsets, opt));
  st.transferred = gated_transfer(b, p, st.initial, st.layers.back(), h_src);
  return st;
}

}  // namespace MIFN_PRECISION
}  // namespace mifn
