#pragma once

// Knowledge store and per-sequence subgraph extraction.
//
// Extraction expands two frontiers over head->tail triples, one seeded with
// the sequence's domain-A item entities and one with its domain-B item
// entities. It stops as soon as the two accumulated entity sets share an
// entity, or after max_hops expansions. The surviving entity list is then cut
// to the budget: seed items first (in sequence order), then entities on the
// recorded seed-to-meeting-point chains, then everything else by undirected
// hop distance to the nearest seed, ties by hop of entry and entity index.

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mifn/data.hpp"

namespace mifn {

struct Triple {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;

  auto operator<=>(const Triple&) const = default;
};

class KnowledgeStore {
 public:
  KnowledgeStore() { relation(kSameCategory); }

  /// Index of `name`, registering it if new.
  std::size_t entity(const std::string& name) {
    auto [it, inserted] = entity_index_.emplace(name, entity_names_.size());
    if (inserted) {
      entity_names_.push_back(name);
      out_.emplace_back();
      degree_.push_back(0);
      domain_.emplace_back();
      item_.emplace_back();
    }
    return it->second;
  }

  std::size_t relation(const std::string& name) {
    auto [it, inserted] = relation_index_.emplace(name, relation_names_.size());
    if (inserted) relation_names_.push_back(name);
    return it->second;
  }

  std::optional<std::size_t> find_entity(const std::string& name) const {
    auto it = entity_index_.find(name);
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> find_relation(const std::string& name) const {
    auto it = relation_index_.find(name);
    if (it == relation_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Adds a triple. Returns false for duplicates and self-loops (which are dropped).
  bool add_triple(const std::string& head, const std::string& rel, const std::string& tail) {
    if (head == tail) {
      ++self_loops_;
      return false;
    }
    const std::size_t h = entity(head), r = relation(rel), t = entity(tail);
    return add_triple(h, r, t);
  }

  bool add_triple(std::size_t h, std::size_t r, std::size_t t) {
    require(h < entity_count() && t < entity_count() && r < relation_count(), "add_triple: index out of range");
    if (h == t) {
      ++self_loops_;
      return false;
    }
    auto& list = out_[h];
    const std::pair<std::size_t, std::size_t> edge{r, t};
    auto pos = std::lower_bound(list.begin(), list.end(), edge);
    if (pos != list.end() && *pos == edge) return false;
    list.insert(pos, edge);
    ++degree_[h];
    ++degree_[t];
    ++triple_count_;
    return true;
  }

  /// Registers every catalog item as an entity (isolated if it has no triple)
  /// and tags item entities with their domain and catalog index.
  void tag_items(const Vocabulary& vocab) {
    for (Domain d : kDomains) {
      for (std::size_t i = 0; i < vocab.size(d); ++i) {
        const std::size_t e = entity(vocab.item(d, i));
        if (domain_[e] && *domain_[e] != d) {
          log::warn("entity " + vocab.item(d, i) + " names items in both domains; keeping domain " +
                    domain_name(*domain_[e]));
          continue;
        }
        domain_[e] = d;
        item_[e] = i;
      }
    }
  }

  void set_domain(std::size_t e, Domain d) { domain_.at(e) = d; }

  std::size_t entity_count() const { return entity_names_.size(); }
  std::size_t relation_count() const { return relation_names_.size(); }
  std::size_t triple_count() const { return triple_count_; }
  std::size_t self_loops_dropped() const { return self_loops_; }

  const std::string& entity_name(std::size_t e) const { return entity_names_.at(e); }
  const std::string& relation_name(std::size_t r) const { return relation_names_.at(r); }

  /// (relation, tail) pairs of triples with head e, sorted.
  const std::vector<std::pair<std::size_t, std::size_t>>& out_edges(std::size_t e) const { return out_.at(e); }

  /// True when the entity takes part in at least one triple.
  bool in_graph(std::size_t e) const { return degree_.at(e) > 0; }

  std::optional<Domain> domain(std::size_t e) const { return domain_.at(e); }
  std::optional<std::size_t> item_index(std::size_t e) const { return item_.at(e); }

  std::vector<Triple> triples() const {
    std::vector<Triple> out;
    out.reserve(triple_count_);
    for (std::size_t h = 0; h < out_.size(); ++h)
      for (const auto& [r, t] : out_[h]) out.push_back({h, r, t});
    return out;
  }

  /// Entities appearing in at least one triple.
  std::size_t graph_entity_count() const {
    return static_cast<std::size_t>(std::count_if(degree_.begin(), degree_.end(), [](std::size_t d) { return d > 0; }));
  }

 private:
  std::vector<std::string> entity_names_;
  std::unordered_map<std::string, std::size_t> entity_index_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, std::size_t> relation_index_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> out_;
  std::vector<std::size_t> degree_;
  std::vector<std::optional<Domain>> domain_;
  std::vector<std::optional<std::size_t>> item_;
  std::size_t triple_count_ = 0;
  std::size_t self_loops_ = 0;
};

/// Reads `head<TAB>relation<TAB>tail` lines into `store`.
inline void parse_triples(std::istream& in, KnowledgeStore& store) {
  std::string line;
  std::size_t malformed = 0, duplicates = 0;
  const std::size_t loops_before = store.self_loops_dropped();
  while (std::getline(in, line)) {
    std::string_view l = detail::strip_cr(line);
    if (l.empty() || l.front() == '#') continue;
    auto f = detail::split_tabs(l);
    if (f.size() != 3 || f[0].empty() || f[1].empty() || f[2].empty()) {
      ++malformed;
      continue;
    }
    if (!store.add_triple(std::string(f[0]), std::string(f[1]), std::string(f[2])) && f[0] != f[2]) ++duplicates;
  }
  if (malformed) log::warn("skipped " + std::to_string(malformed) + " malformed triple lines");
  if (store.self_loops_dropped() > loops_before)
    log::warn("dropped " + std::to_string(store.self_loops_dropped() - loops_before) + " self-loop triples");
  if (duplicates) log::debug("ignored " + std::to_string(duplicates) + " duplicate triples");
}

inline KnowledgeStore load_triples(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read triples file " + path);
  KnowledgeStore store;
  parse_triples(f, store);
  if (store.triple_count() == 0) log::warn("triples file " + path + " holds no usable triple");
  return store;
}

/// Per-relation boolean connectivity over a subgraph's local entity list,
/// stored as given (head row, tail column).
class RelationalAdjacency {
 public:
  RelationalAdjacency(std::size_t entities, std::size_t relations)
      : n_(entities), cells_(relations, std::vector<bool>(entities * entities, false)) {}

  std::size_t entities() const { return n_; }
  std::size_t relations() const { return cells_.size(); }
  bool at(std::size_t r, std::size_t head, std::size_t tail) const { return cells_.at(r)[head * n_ + tail]; }
  void set(std::size_t r, std::size_t head, std::size_t tail) { cells_.at(r)[head * n_ + tail] = true; }

  std::size_t nonzeros() const {
    std::size_t n = 0;
    for (const auto& m : cells_) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
    return n;
  }

 private:
  std::size_t n_;
  std::vector<std::vector<bool>> cells_;
};

struct LocalEdge {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;

  auto operator<=>(const LocalEdge&) const = default;
};

struct KnowledgeSubgraph {
  std::vector<std::size_t> entities;                 // global entity indices
  std::vector<Domain> domains;                       // domain tag per local entity
  std::vector<std::optional<std::size_t>> items;     // catalog index for item entities
  std::vector<bool> seeds;                           // item entity of the source sequence
  std::vector<std::size_t> hops;                     // hop at which the entity entered
  std::vector<LocalEdge> edges;                      // directed, sorted, deduplicated
  bool connected = false;
  std::size_t hops_used = 0;

  std::size_t size() const { return entities.size(); }
  bool empty() const { return entities.empty(); }
  bool is_item(std::size_t k) const { return items[k].has_value(); }

  std::optional<std::size_t> local_of(std::size_t entity) const {
    for (std::size_t k = 0; k < entities.size(); ++k)
      if (entities[k] == entity) return k;
    return std::nullopt;
  }

  /// Local indices of domain-d item entities, which graph mode can recommend.
  std::vector<std::size_t> item_entities(Domain d) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < size(); ++k)
      if (domains[k] == d && items[k]) out.push_back(k);
    return out;
  }

  bool contains_item(Domain d, std::size_t item) const {
    for (std::size_t k = 0; k < size(); ++k)
      if (domains[k] == d && items[k] == item) return true;
    return false;
  }

  bool operator==(const KnowledgeSubgraph&) const = default;
};

/// Accumulated expansion state from one set of seeds.
struct Frontier {
  struct Entry {
    std::size_t hop = 0;
    std::optional<std::size_t> parent;
  };
  std::map<std::size_t, Entry> entities;
  std::set<Triple> triples;
  std::size_t hops = 0;

  explicit Frontier(const std::vector<std::size_t>& seeds = {}) {
    for (std::size_t s : seeds) entities.emplace(s, Entry{0, std::nullopt});
  }

  /// Adds every triple whose head entered at the latest hop; new tails enter
  /// at the next hop with the smallest such head as parent.
  void expand(const KnowledgeStore& store) {
    std::vector<std::size_t> newest;
    for (const auto& [e, info] : entities)
      if (info.hop == hops) newest.push_back(e);
    ++hops;
    for (std::size_t h : newest) {
      for (const auto& [r, t] : store.out_edges(h)) {
        triples.insert({h, r, t});
        entities.emplace(t, Entry{hops, h});
      }
    }
  }

  bool contains(std::size_t e) const { return entities.count(e) != 0; }
};

/// True when the two accumulated entity sets share an entity.
inline bool is_connected(const Frontier& a, const Frontier& b) {
  const Frontier& small = a.entities.size() <= b.entities.size() ? a : b;
  const Frontier& large = &small == &a ? b : a;
  for (const auto& [e, _] : small.entities)
    if (large.contains(e)) return true;
  return false;
}

struct ExtractOptions {
  std::size_t max_hops = 2;
  std::size_t budget = 200;
};

struct Selection {
  std::vector<std::size_t> entities;  // kept, in output order
  std::set<Triple> triples;           // triples with both endpoints kept
};

/// Undirected hop distance from any seed over the given triples.
inline std::unordered_map<std::size_t, std::size_t> seed_distances(const std::set<Triple>& triples,
                                                                   const std::vector<std::size_t>& seeds) {
  std::unordered_map<std::size_t, std::vector<std::size_t>> nbr;
  for (const Triple& t : triples) {
    nbr[t.head].push_back(t.tail);
    nbr[t.tail].push_back(t.head);
  }
  std::unordered_map<std::size_t, std::size_t> dist;
  std::deque<std::size_t> queue;
  for (std::size_t s : seeds)
    if (dist.emplace(s, 0).second) queue.push_back(s);
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v : nbr[u])
      if (dist.emplace(v, dist[u] + 1).second) queue.push_back(v);
  }
  return dist;
}

/// Entities on the parent chains from every meeting point back to the seeds.
inline std::set<std::size_t> bridge_entities(const Frontier& f1, const Frontier& f2) {
  std::set<std::size_t> out;
  for (const auto& [e, _] : f1.entities) {
    if (!f2.contains(e)) continue;
    for (const Frontier* f : {&f1, &f2}) {
      std::optional<std::size_t> cur = e;
      while (cur) {
        out.insert(*cur);
        cur = f->entities.at(*cur).parent;
      }
    }
  }
  return out;
}

/// Chooses at most `budget` entities from the union of both frontiers.
inline Selection select_triples(const Frontier& f1, const Frontier& f2, const std::vector<std::size_t>& seeds,
                                std::size_t budget, bool connected) {
  std::set<Triple> all = f1.triples;
  all.insert(f2.triples.begin(), f2.triples.end());

  Selection sel;
  std::unordered_set<std::size_t> kept;
  if (seeds.size() > budget)
    log::warn("subgraph budget " + std::to_string(budget) + " is below the " + std::to_string(seeds.size()) +
              " sequence item entities; keeping the first " + std::to_string(budget));
  for (std::size_t s : seeds) {
    if (sel.entities.size() >= budget) break;
    if (kept.insert(s).second) sel.entities.push_back(s);
  }

  const auto dist = seed_distances(all, seeds);
  const std::set<std::size_t> bridges = connected ? bridge_entities(f1, f2) : std::set<std::size_t>{};
  auto entry_hop = [&](std::size_t e) {
    std::size_t h = std::numeric_limits<std::size_t>::max();
    if (auto it = f1.entities.find(e); it != f1.entities.end()) h = std::min(h, it->second.hop);
    if (auto it = f2.entities.find(e); it != f2.entities.end()) h = std::min(h, it->second.hop);
    return h;
  };

  std::vector<std::tuple<int, std::size_t, std::size_t, std::size_t>> rest;  // tier, distance, hop, entity
  std::set<std::size_t> candidates;
  for (const auto* f : {&f1, &f2})
    for (const auto& [e, _] : f->entities) candidates.insert(e);
  for (std::size_t e : candidates) {
    if (std::find(seeds.begin(), seeds.end(), e) != seeds.end()) continue;
    auto d = dist.find(e);
    rest.emplace_back(bridges.count(e) ? 0 : 1, d == dist.end() ? std::numeric_limits<std::size_t>::max() : d->second,
                      entry_hop(e), e);
  }
  std::sort(rest.begin(), rest.end());
  for (const auto& r : rest) {
    if (sel.entities.size() >= budget) break;
    sel.entities.push_back(std::get<3>(r));
    kept.insert(std::get<3>(r));
  }
  for (const Triple& t : all)
    if (kept.count(t.head) && kept.count(t.tail)) sel.triples.insert(t);
  return sel;
}

/// Relational adjacency over `entity_list` from `triples`; triples touching an
/// entity outside the list are a contract violation.
inline RelationalAdjacency build_adjacency(const std::vector<Triple>& triples, const std::vector<std::size_t>& entity_list,
                                           std::size_t relation_count) {
  std::unordered_map<std::size_t, std::size_t> local;
  for (std::size_t k = 0; k < entity_list.size(); ++k) local.emplace(entity_list[k], k);
  RelationalAdjacency adj(entity_list.size(), relation_count);
  for (const Triple& t : triples) {
    auto h = local.find(t.head), tl = local.find(t.tail);
    require(h != local.end() && tl != local.end(), "build_adjacency: triple references a pruned entity");
    adj.set(t.relation, h->second, tl->second);
  }
  return adj;
}

inline RelationalAdjacency build_adjacency(const KnowledgeSubgraph& g, std::size_t relation_count) {
  RelationalAdjacency adj(g.size(), relation_count);
  for (const LocalEdge& e : g.edges) adj.set(e.relation, e.head, e.tail);
  return adj;
}

/// Whether some domain-A seed reaches some domain-B seed over the subgraph's
/// edges taken as undirected.
inline bool has_cross_domain_path(const KnowledgeSubgraph& g) {
  std::vector<std::vector<std::size_t>> nbr(g.size());
  for (const LocalEdge& e : g.edges) {
    nbr[e.head].push_back(e.tail);
    nbr[e.tail].push_back(e.head);
  }
  std::vector<bool> seen(g.size(), false);
  std::deque<std::size_t> queue;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.seeds[k] && g.domains[k] == Domain::A) {
      seen[k] = true;
      queue.push_back(k);
    }
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    if (g.seeds[u] && g.domains[u] == Domain::B) return true;
    for (std::size_t v : nbr[u])
      if (!seen[v]) {
        seen[v] = true;
        queue.push_back(v);
      }
  }
  return false;
}

/// Seed entities for a prefix: item entities present in the graph, first
/// occurrence order, split by domain.
inline std::array<std::vector<std::size_t>, 2> seed_entities(const std::vector<Interaction>& prefix,
                                                             const Vocabulary& vocab, const KnowledgeStore& store) {
  std::array<std::vector<std::size_t>, 2> out;
  std::unordered_set<std::size_t> seen;
  for (const Interaction& x : prefix) {
    auto e = store.find_entity(vocab.item(x.domain, x.item));
    if (!e || !store.in_graph(*e) || store.domain(*e) != x.domain) continue;
    if (seen.insert(*e).second) out[idx(x.domain)].push_back(*e);
  }
  return out;
}

/// Multi-hop extraction for one sequence prefix.
inline KnowledgeSubgraph extract_subgraph(const std::vector<Interaction>& prefix, const Vocabulary& vocab,
                                          const KnowledgeStore& store, const ExtractOptions& opt = {}) {
  require(opt.max_hops > 0, "extract_subgraph: max_hops must be positive");
  require(opt.budget > 0, "extract_subgraph: budget must be positive");
  KnowledgeSubgraph g;
  const auto seeds = seed_entities(prefix, vocab, store);
  if (seeds[0].empty() && seeds[1].empty()) return g;

  Frontier f1(seeds[0]), f2(seeds[1]);
  bool connected = false;
  for (std::size_t k = 0; k < opt.max_hops; ++k) {
    f1.expand(store);
    f2.expand(store);
    g.hops_used = k + 1;
    connected = is_connected(f1, f2);
    if (connected) break;
  }

  // seeds in hybrid order
  std::vector<std::size_t> ordered;
  {
    std::unordered_set<std::size_t> in_seeds(seeds[0].begin(), seeds[0].end());
    in_seeds.insert(seeds[1].begin(), seeds[1].end());
    std::unordered_set<std::size_t> seen;
    for (const Interaction& x : prefix) {
      auto e = store.find_entity(vocab.item(x.domain, x.item));
      if (e && in_seeds.count(*e) && seen.insert(*e).second) ordered.push_back(*e);
    }
  }

  Selection sel = select_triples(f1, f2, ordered, opt.budget, connected);
  std::unordered_map<std::size_t, std::size_t> local;
  const std::unordered_set<std::size_t> seed_set(ordered.begin(), ordered.end());
  for (std::size_t e : sel.entities) {
    local.emplace(e, g.entities.size());
    g.entities.push_back(e);
    std::size_t hop = std::numeric_limits<std::size_t>::max();
    Domain side = Domain::A;
    if (auto it = f1.entities.find(e); it != f1.entities.end()) hop = it->second.hop;
    if (auto it = f2.entities.find(e); it != f2.entities.end() && it->second.hop < hop) {
      hop = it->second.hop;
      side = Domain::B;
    }
    g.hops.push_back(hop);
    const auto tag = store.domain(e);
    g.domains.push_back(tag ? *tag : side);
    g.items.push_back(tag ? store.item_index(e) : std::nullopt);
    g.seeds.push_back(seed_set.count(e) != 0);
  }
  for (const Triple& t : sel.triples) g.edges.push_back({local.at(t.head), t.relation, local.at(t.tail)});
  std::sort(g.edges.begin(), g.edges.end());
  g.connected = connected && has_cross_domain_path(g);
  return g;
}

}  // namespace mifn
