#pragma once

// Ranking metrics, evaluation loop, popularity baseline and ground-truth
// injection into subgraphs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include "mifn/model.hpp"

namespace mifn {

inline const std::vector<std::size_t> kDefaultCutoffs = {5, 10, 20};

/// 1-based rank of scores[gt] under descending score, ties to the lower index.
inline std::size_t rank_of(std::size_t gt, const std::vector<double>& scores) {
  require(gt < scores.size(), "rank_of: ground truth index out of range");
  const double s = scores[gt];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > s || (scores[j] == s && j < gt)) ++rank;
  return rank;
}

/// The rank when it falls inside the top-k window, otherwise nullopt.
inline std::optional<std::size_t> rank_within(std::size_t gt, const std::vector<double>& scores, std::size_t k) {
  const std::size_t r = rank_of(gt, scores);
  if (r > k) return std::nullopt;
  return r;
}

inline double mrr_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) throw MetricError("MRR is undefined on an empty evaluation set");
  require(k > 0, "mrr_at_k: K must be positive");
  double acc = 0.0;
  for (std::size_t r : ranks)
    if (r >= 1 && r <= k) acc += 1.0 / static_cast<double>(r);
  return acc / static_cast<double>(ranks.size());
}

inline double recall_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) throw MetricError("Recall is undefined on an empty evaluation set");
  require(k > 0, "recall_at_k: K must be positive");
  std::size_t hits = 0;
  for (std::size_t r : ranks)
    if (r >= 1 && r <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

struct EvalReport {
  std::string label;
  std::optional<double> ratio;
  std::vector<std::size_t> cutoffs = kDefaultCutoffs;
  std::array<std::size_t, 2> sequences{0, 0};
  std::array<std::map<std::size_t, double>, 2> mrr;
  std::array<std::map<std::size_t, double>, 2> recall;

  static EvalReport from_ranks(const std::array<std::vector<std::size_t>, 2>& ranks, std::string label,
                               std::optional<double> ratio = std::nullopt,
                               const std::vector<std::size_t>& cutoffs = kDefaultCutoffs) {
    EvalReport r;
    r.label = std::move(label);
    r.ratio = ratio;
    r.cutoffs = cutoffs;
    for (Domain d : kDomains) {
      r.sequences[idx(d)] = ranks[idx(d)].size();
      for (std::size_t k : cutoffs) {
        r.mrr[idx(d)][k] = mrr_at_k(ranks[idx(d)], k);
        r.recall[idx(d)][k] = recall_at_k(ranks[idx(d)], k);
      }
    }
    return r;
  }

  void write_table(std::ostream& out) const {
    out << "variant " << label;
    if (ratio) out << "  injection ratio " << *ratio;
    out << "\n";
    out << std::left << std::setw(8) << "domain" << std::setw(8) << "count";
    for (std::size_t k : cutoffs) out << std::setw(10) << ("MRR@" + std::to_string(k));
    for (std::size_t k : cutoffs) out << std::setw(12) << ("Recall@" + std::to_string(k));
    out << "\n";
    for (Domain d : kDomains) {
      out << std::setw(8) << domain_name(d) << std::setw(8) << sequences[idx(d)];
      for (std::size_t k : cutoffs) out << std::setw(10) << fixed4(mrr[idx(d)].at(k));
      for (std::size_t k : cutoffs) out << std::setw(12) << fixed4(recall[idx(d)].at(k));
      out << "\n";
    }
  }

  /// metric, domain, K, value; values printed with full round-trip precision.
  void write_tsv(std::ostream& out) const {
    out << "metric\tdomain\tK\tvalue\n";
    for (Domain d : kDomains) {
      for (std::size_t k : cutoffs) out << "MRR\t" << domain_name(d) << '\t' << k << '\t' << exact(mrr[idx(d)].at(k)) << '\n';
      for (std::size_t k : cutoffs)
        out << "Recall\t" << domain_name(d) << '\t' << k << '\t' << exact(recall[idx(d)].at(k)) << '\n';
    }
  }

 private:
  static std::string fixed4(double x) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << x;
    return s.str();
  }
  static std::string exact(double x) {
    std::ostringstream s;
    s << std::setprecision(17) << x;
    return s.str();
  }
};

/// Runs fn(i) for i in [0, n) on `threads` workers. Results must be written by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Mixed-distribution scores of both domains for one example (no gradients).
struct ScoredExample {
  std::array<std::vector<double>, 2> mixed;
  std::array<double, 2> p_graph{0.0, 0.0};
};

inline ScoredExample score_example(const ModelParams& params, const ModelContext& ctx, const Example& ex) {
  Tape tape;
  Binding b(tape, params, false);
  auto preds = forward(b, ctx, ex);
  ScoredExample out;
  for (Domain d : kDomains) {
    out.mixed[idx(d)] = preds[idx(d)].mixed.value().values;
    out.p_graph[idx(d)] = preds[idx(d)].p_graph.item();
  }
  return out;
}

inline std::array<std::vector<std::size_t>, 2> rank_examples(const ModelParams& params, const ModelContext& ctx,
                                                             const std::vector<Example>& examples,
                                                             std::size_t threads = 1) {
  std::array<std::vector<std::size_t>, 2> ranks;
  for (auto& r : ranks) r.assign(examples.size(), 0);
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const ScoredExample s = score_example(params, ctx, examples[i]);
    for (Domain d : kDomains) ranks[idx(d)][i] = rank_of(examples[i].truth[idx(d)], s.mixed[idx(d)]);
  });
  return ranks;
}

inline EvalReport evaluate(const ModelParams& params, const ModelContext& ctx, const std::vector<Example>& examples,
                           std::size_t threads = 1, std::optional<double> ratio = std::nullopt) {
  return EvalReport::from_ranks(rank_examples(params, ctx, examples, threads), variant_name(ctx.config.variant), ratio);
}

/// Ranks by item frequency in the training sequences (prefixes and ground truths).
inline EvalReport evaluate_popularity(const std::vector<HybridSequence>& sequences,
                                      const std::vector<std::size_t>& train, const Vocabulary& vocab,
                                      const std::vector<Example>& examples) {
  std::array<std::vector<double>, 2> counts;
  for (Domain d : kDomains) counts[idx(d)].assign(vocab.size(d), 0.0);
  for (std::size_t s : train)
    for (const auto& x : sequences.at(s).items) counts[idx(x.domain)][x.item] += 1.0;
  std::array<std::vector<std::size_t>, 2> ranks;
  for (const Example& ex : examples)
    for (Domain d : kDomains) ranks[idx(d)].push_back(rank_of(ex.truth[idx(d)], counts[idx(d)]));
  return EvalReport::from_ranks(ranks, "popularity");
}

/// Sequences chosen for injection at `ratio`: the first round(ratio * n) of a
/// seeded permutation, so a higher ratio keeps every earlier choice.
inline std::vector<bool> injection_mask(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("injection ratio must lie in [0, 1]");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, /*stream=*/0x696e6a656374ULL);
  rng.shuffle(order);
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < count; ++i) mask[order[i]] = true;
  return mask;
}

/// Adds the domain-d ground-truth item entity to the subgraph when absent,
/// linked by Is_the_same_category from the most recent prefix item entity in
/// the subgraph (isolated if there is none). Returns true if it was added.
inline bool inject_item(KnowledgeSubgraph& g, const std::vector<Interaction>& prefix, Domain d, std::size_t item,
                        const Vocabulary& vocab, const KnowledgeStore& store) {
  if (g.contains_item(d, item)) return false;
  const auto entity = store.find_entity(vocab.item(d, item));
  require(entity.has_value(), "inject_item: catalog item has no entity");
  std::optional<std::size_t> anchor;
  for (std::size_t i = prefix.size(); i-- > 0 && !anchor;) {
    for (std::size_t k = 0; k < g.size(); ++k)
      if (g.domains[k] == prefix[i].domain && g.items[k] == prefix[i].item) {
        anchor = k;
        break;
      }
  }
  const std::size_t local = g.size();
  g.entities.push_back(*entity);
  g.domains.push_back(d);
  g.items.push_back(item);
  g.seeds.push_back(false);
  g.hops.push_back(g.hops_used);
  if (anchor) {
    g.edges.push_back({*anchor, *store.find_relation(kSameCategory), local});
    std::sort(g.edges.begin(), g.edges.end());
  }
  return true;
}

/// Injects both domains' ground truths into the selected examples. Returns the
/// number of selected examples.
inline std::size_t inject_ground_truth(std::vector<Example>& examples, double ratio, std::uint64_t seed,
                                       const Vocabulary& vocab, const KnowledgeStore& store) {
  const std::vector<bool> mask = injection_mask(examples.size(), ratio, seed);
  std::size_t selected = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!mask[i]) continue;
    ++selected;
    Example& ex = examples[i];
    bool changed = false;
    for (Domain d : kDomains) changed |= inject_item(ex.graph, ex.prefix, d, ex.truth[idx(d)], vocab, store);
    if (changed) ex.plan = DisseminationPlan::build(ex.graph);
  }
  return selected;
}

}  // namespace mifn
