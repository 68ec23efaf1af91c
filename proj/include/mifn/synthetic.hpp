#pragma once

// Planted-link synthetic corpora.
//
// Every domain-A item carries one Is_the_same_category link to a domain-B
// item. In each generated sequence the domain-B ground truth is, with
// probability p_link, the link of the last domain-A prefix item and otherwise
// a uniform draw; all other items are uniform draws, so the planted target is
// recoverable from the triples but carries no behavioural co-occurrence signal
// beyond the link itself.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mifn/data.hpp"

namespace mifn {

struct SyntheticConfig {
  std::size_t users = 500;
  std::size_t sequences_per_user = 4;
  std::size_t items_a = 200;
  std::size_t items_b = 200;
  std::size_t min_domain_len = 3;  // items per domain in one sequence, ground truth included
  std::size_t max_domain_len = 7;
  double p_link = 0.9;
  std::size_t categories = 20;
  std::size_t also_buy = 1;  // extra A->A triples per domain-A item
  std::int64_t start_time = 1'600'000'000;
  std::int64_t period_seconds = kPeriodMonth;

  void validate() const {
    if (!(p_link >= 0.0 && p_link <= 1.0)) throw ConfigError("p_link must lie in [0, 1]");
    if (users == 0 || sequences_per_user == 0) throw ConfigError("users and sequences_per_user must be positive");
    if (items_a < 2 || items_b < 2) throw ConfigError("each domain needs at least two items");
    if (min_domain_len < 2 || min_domain_len > max_domain_len)
      throw ConfigError("domain length range must satisfy 2 <= min <= max");
    if (categories == 0) throw ConfigError("categories must be positive");
    if (period_seconds <= 0 || start_time < 0) throw ConfigError("period and start time must be positive");
  }
};

struct NamedTriple {
  std::string head;
  std::string relation;
  std::string tail;

  auto operator<=>(const NamedTriple&) const = default;
};

/// Counts describing a generated triple file, for cross-checking the loader.
struct SyntheticManifest {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
  std::size_t sequences = 0;
  std::size_t planted = 0;  // sequences whose B ground truth is the planted link
};

struct SyntheticData {
  std::vector<Event> events;
  std::vector<NamedTriple> triples;  // sorted, distinct
  std::vector<std::size_t> link;     // domain-A item -> linked domain-B item
  SyntheticManifest manifest;
};

inline std::string synthetic_item(Domain d, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%04zu", d == Domain::A ? 'a' : 'b', i);
  return buf;
}

inline std::string synthetic_category(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cat%03zu", c);
  return buf;
}

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, /*stream=*/0x73796e7468ULL);
  SyntheticData out;

  std::set<NamedTriple> triples;
  out.link.resize(cfg.items_a);
  for (std::size_t i = 0; i < cfg.items_a; ++i) {
    out.link[i] = rng.below(cfg.items_b);
    triples.insert({synthetic_item(Domain::A, i), kSameCategory, synthetic_item(Domain::B, out.link[i])});
  }
  for (Domain d : kDomains) {
    const std::size_t n = d == Domain::A ? cfg.items_a : cfg.items_b;
    for (std::size_t i = 0; i < n; ++i)
      triples.insert({synthetic_item(d, i), "Belongs_to", synthetic_category(rng.below(cfg.categories))});
  }
  for (std::size_t i = 0; i < cfg.items_a; ++i) {
    for (std::size_t k = 0; k < cfg.also_buy; ++k) {
      std::size_t j = rng.below(cfg.items_a - 1);
      if (j >= i) ++j;  // never a self-loop
      triples.insert({synthetic_item(Domain::A, i), "Also_buy", synthetic_item(Domain::A, j)});
    }
  }
  out.triples.assign(triples.begin(), triples.end());

  std::set<std::string> entities, relations;
  for (const auto& t : out.triples) {
    entities.insert(t.head);
    entities.insert(t.tail);
    relations.insert(t.relation);
  }
  out.manifest.entities = entities.size();
  out.manifest.relations = relations.size();
  out.manifest.triples = out.triples.size();

  const std::size_t span = cfg.max_domain_len - cfg.min_domain_len + 1;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    char user[32];
    std::snprintf(user, sizeof user, "u%05zu", u);
    for (std::size_t s = 0; s < cfg.sequences_per_user; ++s) {
      const std::size_t na = cfg.min_domain_len + rng.below(span);
      const std::size_t nb = cfg.min_domain_len + rng.below(span);
      // prefix: random interleave of (na - 1) A and (nb - 1) B draws
      std::vector<Domain> order(na - 1, Domain::A);
      order.insert(order.end(), nb - 1, Domain::B);
      rng.shuffle(order);
      std::vector<Interaction> seq;
      std::optional<std::size_t> last_a;
      for (Domain d : order) {
        const std::size_t item = rng.below(d == Domain::A ? cfg.items_a : cfg.items_b);
        seq.push_back({item, d});
        if (d == Domain::A) last_a = item;
      }
      const bool planted = rng.bernoulli(cfg.p_link);
      const std::size_t gt_b = planted ? out.link[*last_a] : rng.below(cfg.items_b);
      if (planted) ++out.manifest.planted;
      seq.push_back({gt_b, Domain::B});
      seq.push_back({static_cast<std::size_t>(rng.below(cfg.items_a)), Domain::A});

      // one period per sequence, one hour between events
      const std::int64_t base = (cfg.start_time / cfg.period_seconds + static_cast<std::int64_t>(s)) * cfg.period_seconds;
      for (std::size_t k = 0; k < seq.size(); ++k)
        out.events.push_back({user, synthetic_item(seq[k].domain, seq[k].item), seq[k].domain,
                              base + 3600 * static_cast<std::int64_t>(k)});
      ++out.manifest.sequences;
    }
  }
  return out;
}

inline void write_triples(std::ostream& out, const std::vector<NamedTriple>& triples) {
  for (const auto& t : triples) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
}

inline void write_manifest(std::ostream& out, const SyntheticManifest& m) {
  out << "entities\t" << m.entities << "\nrelations\t" << m.relations << "\ntriples\t" << m.triples
      << "\nsequences\t" << m.sequences << "\nplanted\t" << m.planted << '\n';
}

}  // namespace mifn
