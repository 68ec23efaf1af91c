#pragma once

// Full model: encoders, behaviour transfer, knowledge transfer and heads for
// both target domains, plus the per-batch training objective.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mifn/encoder.hpp"
#include "mifn/heads.hpp"
#include "mifn/ktu.hpp"

namespace mifn {
inline namespace MIFN_PRECISION {

enum class Variant { kMifn, kMifnModeLoss, kMifnNoKtu };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kMifn: return "MIFN";
    case Variant::kMifnModeLoss: return "MIFN+L_M";
    case Variant::kMifnNoKtu: return "MIFN-KTU";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "MIFN") return Variant::kMifn;
  if (s == "MIFN+L_M" || s == "MIFN+LM") return Variant::kMifnModeLoss;
  if (s == "MIFN-KTU" || s == "MIFN−KTU") return Variant::kMifnNoKtu;
  throw ConfigError("unknown variant '" + s + "' (expected MIFN, MIFN+L_M or MIFN-KTU)");
}

enum class TrainTarget { kLastItem, kAllPositions };

struct ModelConfig {
  std::size_t dim = 256;
  KtuOptions ktu;
  Variant variant = Variant::kMifn;
  ModeLossReading mode_loss = ModeLossReading::kAsWritten;
  TrainTarget target = TrainTarget::kLastItem;
};

/// Table sizes the parameters depend on.
struct ModelShape {
  std::size_t items_a = 0;
  std::size_t items_b = 0;
  std::size_t entities = 0;
  std::size_t relations = 0;

  std::size_t items(Domain d) const { return d == Domain::A ? items_a : items_b; }
};

inline ModelParams init_params(const ModelConfig& cfg, const ModelShape& shape, std::uint64_t seed) {
  require(cfg.dim > 0, "init_params: dimension must be positive");
  const std::size_t d = cfg.dim;
  std::uint64_t s = Rng::mix(seed);
  ModelParams p;
  p.add("emb.item_a", xavier_init({shape.items_a, d}, s++));
  p.add("emb.item_b", xavier_init({shape.items_b, d}, s++));
  p.add("emb.entity", xavier_init({shape.entities, d}, s++));
  add_gru_params(p, "enc_a.", d, d, s);
  add_gru_params(p, "enc_b.", d, d, s);
  add_btu_params(p, "btu_ab.", d, s);
  add_btu_params(p, "btu_ba.", d, s);
  for (Domain t : kDomains) {
    add_ktu_params(p, ktu_prefix(t), d, shape.relations, s);
    add_head_params(p, t, d, shape.items(t), s);
  }
  return p;
}

/// One training or evaluation instance: the encoded prefix, both ground
/// truths and the sequence's subgraph.
struct Example {
  std::size_t id = 0;
  std::vector<Interaction> prefix;
  std::array<std::size_t, 2> truth{0, 0};
  KnowledgeSubgraph graph;
  DisseminationPlan plan;

  static Example from(const HybridSequence& s, KnowledgeSubgraph g) {
    Example ex;
    ex.id = s.id;
    ex.prefix = s.prefix();
    ex.truth = {s.ground_truth(Domain::A), s.ground_truth(Domain::B)};
    ex.graph = std::move(g);
    ex.plan = DisseminationPlan::build(ex.graph);
    return ex;
  }
};

/// Everything the model reads besides the parameters.
struct ModelContext {
  ModelConfig config;
  ModelShape shape;
  std::array<std::vector<bool>, 2> support;  // sequence-decoder support per domain

  static ModelContext make(const ModelConfig& cfg, const Vocabulary& vocab, std::size_t entities,
                           std::size_t relations) {
    ModelContext ctx;
    ctx.config = cfg;
    ctx.shape = {vocab.size(Domain::A), vocab.size(Domain::B), entities, relations};
    for (Domain d : kDomains) {
      ctx.support[idx(d)] = vocab.training_mask(d);
      if (vocab.training_count(d) == 0)
        throw DatasetError(std::string("no training item in domain ") + domain_name(d));
    }
    return ctx;
  }
};

struct DomainPrediction {
  Var mixed;
  Var seq;
  std::optional<Var> graph;  // catalog-sized graph-mode conditional
  Var p_graph;
  Var p_seq;
  bool graph_active = false;
  std::vector<std::size_t> graph_support;  // catalog items graph mode can score
};

/// Recurrent states of one prefix, reused by every prediction on it.
struct EncodedContext {
  std::array<EncodedSequence, 2> enc;
  std::array<TransferredFlow, 2> flow;  // indexed by target domain
};

inline EncodedContext encode_context(Binding& b, const ModelContext& ctx, const std::vector<Interaction>& prefix) {
  EncodedContext out;
  for (Domain d : kDomains) out.enc[idx(d)] = encode_sequence(b, prefix, d, ctx.config.dim);
  for (Domain t : kDomains) {
    const Domain s = other(t);
    out.flow[idx(t)] = btu_transfer(b, out.enc[idx(s)], out.enc[idx(t)], s);
  }
  return out;
}

/// Prediction for target domain t from the prefix items before hybrid position `pos`.
inline DomainPrediction predict(Binding& b, const ModelContext& ctx, const EncodedContext& ec, const Example& ex,
                                Domain t, std::size_t pos) {
  using namespace ad;
  const Domain s = other(t);
  Var h_tgt = ec.enc[idx(t)].before(pos);
  Var h_src = ec.enc[idx(s)].before(pos);
  Var h_transfer = ec.flow[idx(t)].before(pos);

  DomainPrediction out;
  out.seq = sequence_decode(b, t, h_tgt, h_transfer, ctx.support[idx(t)]);
  const std::vector<std::size_t> candidates = ex.graph.item_entities(t);
  out.graph_active = ctx.config.variant != Variant::kMifnNoKtu && !ex.graph.empty() && !candidates.empty();
  if (out.graph_active) {
    EntityStates st = run_ktu(b, ex.graph, ex.plan, t, h_src, h_transfer, ctx.config.ktu);
    Var mode = mode_switch(b, t, h_tgt, h_transfer, sum_rows(st.transferred));
    out.p_graph = pick(mode, 0);
    out.p_seq = pick(mode, 1);
    for (std::size_t k : candidates) out.graph_support.push_back(*ex.graph.items[k]);
    out.graph = graph_decode(b, t, st.transferred, candidates, out.graph_support, ctx.shape.items(t));
  } else {
    out.p_graph = b.tape().constant(Tensor::scalar(0.0));
    out.p_seq = b.tape().constant(Tensor::scalar(1.0));
  }
  out.mixed = mix_probabilities(out.p_graph, out.p_seq, out.graph, out.seq);
  return out;
}

/// Final predictions for both domains from the full prefix.
inline std::array<DomainPrediction, 2> forward(Binding& b, const ModelContext& ctx, const Example& ex) {
  EncodedContext ec = encode_context(b, ctx, ex.prefix);
  return {predict(b, ctx, ec, ex, Domain::A, ex.prefix.size()), predict(b, ctx, ec, ex, Domain::B, ex.prefix.size())};
}

struct LossBreakdown {
  Var total;
  double recommendation = 0.0;
  double mode = 0.0;
  std::size_t floored = 0;
  std::size_t targets = 0;
  std::vector<std::pair<std::size_t, double>> per_example;  // example id, summed per-domain mean NLL
};

/// (position, item) training targets of one domain: the final ground truth
/// from the full prefix, plus every earlier prefix item of that domain under
/// the all-positions reading.
inline std::vector<std::pair<std::size_t, std::size_t>> training_targets(const ModelContext& ctx, const Example& ex,
                                                                         Domain t) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (ctx.config.target == TrainTarget::kAllPositions)
    for (std::size_t j = 1; j < ex.prefix.size(); ++j)
      if (ex.prefix[j].domain == t) out.emplace_back(j, ex.prefix[j].item);
  out.emplace_back(ex.prefix.size(), ex.truth[idx(t)]);
  return out;
}

/// L_R (plus L_M for the mode-loss variant) over a batch. Each domain's terms
/// are averaged over that domain's targets and the two domains are summed.
inline LossBreakdown batch_loss(Binding& b, const ModelContext& ctx, const std::vector<const Example*>& batch) {
  using namespace ad;
  require(!batch.empty(), "batch_loss: empty batch");
  LossBreakdown out;
  std::array<std::vector<Var>, 2> rec, mode;
  std::array<std::size_t, 2> counts{0, 0};
  for (const Example* ex : batch) {
    EncodedContext ec = encode_context(b, ctx, ex->prefix);
    double own = 0.0;
    for (Domain t : kDomains) {
      const auto targets = training_targets(ctx, *ex, t);
      double own_t = 0.0;
      for (const auto& [pos, item] : targets) {
        DomainPrediction pred = predict(b, ctx, ec, *ex, t, pos);
        bool floored = false;
        rec[idx(t)].push_back(nll(pred.mixed, item, &floored));
        own_t += rec[idx(t)].back().item();
        out.floored += floored ? 1 : 0;
        ++counts[idx(t)];
        const bool in_vocab = ctx.support[idx(t)][item];
        if (auto m = mode_loss_term(pred.p_graph, pred.p_seq, in_vocab, ctx.config.mode_loss)) mode[idx(t)].push_back(*m);
      }
      own += own_t / static_cast<double>(targets.size());
    }
    out.per_example.emplace_back(ex->id, own);
  }
  std::vector<Var> terms;
  double rec_sum = 0.0, mode_sum = 0.0;
  for (Domain t : kDomains) {
    const double inv = 1.0 / static_cast<double>(counts[idx(t)]);
    Var r = scale(add_scalars(rec[idx(t)]), inv);
    rec_sum += r.item();
    terms.push_back(r);
    if (!mode[idx(t)].empty()) {
      Var m = scale(add_scalars(mode[idx(t)]), inv);
      mode_sum += m.item();
      if (ctx.config.variant == Variant::kMifnModeLoss) terms.push_back(m);
    }
  }
  out.total = add_scalars(terms);
  out.recommendation = rec_sum;
  out.mode = mode_sum;
  out.targets = counts[0] + counts[1];
  return out;
}

}  // namespace MIFN_PRECISION
}  // namespace mifn
