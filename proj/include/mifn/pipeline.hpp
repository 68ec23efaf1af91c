#pragma once

// End-to-end commands over a cache directory.
//
// build-kg writes into <out>:
//   sequences.tsv   key, user, then one `A:item` / `B:item` token per interaction
//   split.tsv       key, split label (train / valid / test)
//   vocab.tsv       domain, item id, 1 if seen in training else 0 (catalog order)
//   entities.tsv    entity name, domain tag (A, B or -) in index order
//   relations.tsv   relation name in index order
//   triples.tsv     head, relation, tail of every stored triple
//   subgraphs.txt   per-sequence subgraphs, format below
//   manifest.tsv    counts and the ground-truth-in-subgraph ratio
//
// subgraphs.txt is line oriented and tab separated:
//   seq <key> <connected 0|1> <hops used> <entity count> <edge count>
//   e <entity name> <domain A|B> <item 0|1> <seed 0|1> <hop of entry>
//   r <local head> <relation name> <local tail>
// Entity lines follow their `seq` line in local order, then the edge lines.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mifn/checkpoint.hpp"
#include "mifn/config.hpp"
#include "mifn/synthetic.hpp"

namespace mifn {

namespace fs = std::filesystem;

/// Runs `fn`, rethrowing library errors tagged with the stage name.
template <typename Fn>
auto stage(const std::string& name, Fn fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

struct Dataset {
  std::vector<HybridSequence> sequences;
  Vocabulary vocab;
  DatasetSplit split;
  KnowledgeStore store;
  std::vector<KnowledgeSubgraph> subgraphs;  // indexed by sequence id

  std::vector<Example> examples(SplitLabel part) const {
    std::vector<Example> out;
    for (std::size_t id : split.part(part)) out.push_back(Example::from(sequences[id], subgraphs[id]));
    return out;
  }
};

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  return f;
}

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read " + p.string());
  return f;
}

inline void write_subgraph(std::ostream& out, const std::string& key, const KnowledgeSubgraph& g,
                           const KnowledgeStore& store) {
  out << "seq\t" << key << '\t' << (g.connected ? 1 : 0) << '\t' << g.hops_used << '\t' << g.size() << '\t'
      << g.edges.size() << '\n';
  for (std::size_t k = 0; k < g.size(); ++k)
    out << "e\t" << store.entity_name(g.entities[k]) << '\t' << domain_name(g.domains[k]) << '\t'
        << (g.is_item(k) ? 1 : 0) << '\t' << (g.seeds[k] ? 1 : 0) << '\t' << g.hops[k] << '\n';
  for (const LocalEdge& e : g.edges)
    out << "r\t" << e.head << '\t' << store.relation_name(e.relation) << '\t' << e.tail << '\n';
}

/// Reads subgraphs keyed by sequence key; entity and relation names resolve through `store`.
inline std::map<std::string, KnowledgeSubgraph> read_subgraphs(std::istream& in, const KnowledgeStore& store) {
  std::map<std::string, KnowledgeSubgraph> out;
  std::string line;
  std::size_t n = 0;
  auto fail = [&](const std::string& why) { throw FormatError("subgraphs.txt:" + std::to_string(n) + ": " + why); };
  auto num = [&](std::string_view s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail("bad number");
    return v;
  };
  KnowledgeSubgraph* cur = nullptr;
  std::size_t want_e = 0, want_r = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = detail::split_tabs(line);
    if (f[0] == "seq") {
      if (cur && (want_e || want_r)) fail("previous subgraph is incomplete");
      if (f.size() != 6) fail("seq line needs 6 fields");
      auto [it, fresh] = out.emplace(std::string(f[1]), KnowledgeSubgraph{});
      if (!fresh) fail("duplicate sequence key");
      cur = &it->second;
      cur->connected = num(f[2]) != 0;
      cur->hops_used = num(f[3]);
      want_e = num(f[4]);
      want_r = num(f[5]);
    } else if (f[0] == "e") {
      if (!cur || want_e == 0 || f.size() != 6) fail("unexpected entity line");
      const auto e = store.find_entity(std::string(f[1]));
      const auto d = parse_domain(f[2]);
      if (!e || !d) fail("unknown entity or domain");
      cur->entities.push_back(*e);
      cur->domains.push_back(*d);
      std::optional<std::size_t> item;
      if (num(f[3])) {
        if (store.domain(*e) != *d || !store.item_index(*e)) fail("entity is not an item of that domain");
        item = store.item_index(*e);
      }
      cur->items.push_back(item);
      cur->seeds.push_back(num(f[4]) != 0);
      cur->hops.push_back(num(f[5]));
      --want_e;
    } else if (f[0] == "r") {
      if (!cur || want_e != 0 || want_r == 0 || f.size() != 4) fail("unexpected edge line");
      const auto r = store.find_relation(std::string(f[2]));
      const std::size_t h = num(f[1]), t = num(f[3]);
      if (!r || h >= cur->size() || t >= cur->size()) fail("bad edge");
      cur->edges.push_back({h, *r, t});
      --want_r;
    } else {
      fail("unknown record type");
    }
  }
  if (cur && (want_e || want_r)) fail("last subgraph is incomplete");
  return out;
}

struct CacheManifest {
  std::size_t sequences = 0;
  std::array<std::size_t, 3> split{0, 0, 0};
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
  std::size_t empty_subgraphs = 0;
  std::size_t connected = 0;
  std::array<double, 2> gt_ratio{0.0, 0.0};  // share of sequences whose ground truth entity is in the subgraph
  double mean_entities = 0.0;

  void write(std::ostream& out) const {
    out << std::setprecision(17);
    out << "sequences\t" << sequences << "\ntrain\t" << split[0] << "\nvalid\t" << split[1] << "\ntest\t" << split[2]
        << "\nentities\t" << entities << "\nrelations\t" << relations << "\ntriples\t" << triples
        << "\nempty_subgraphs\t" << empty_subgraphs << "\nconnected_subgraphs\t" << connected
        << "\nmean_subgraph_entities\t" << mean_entities << "\ngt_in_subgraph_ratio_A\t" << gt_ratio[0]
        << "\ngt_in_subgraph_ratio_B\t" << gt_ratio[1] << "\ngt_in_subgraph_ratio\t"
        << 0.5 * (gt_ratio[0] + gt_ratio[1]) << '\n';
  }
};

inline CacheManifest summarize(const Dataset& ds) {
  CacheManifest m;
  m.sequences = ds.sequences.size();
  m.split = {ds.split.train.size(), ds.split.valid.size(), ds.split.test.size()};
  m.entities = ds.store.entity_count();
  m.relations = ds.store.relation_count();
  m.triples = ds.store.triple_count();
  std::array<std::size_t, 2> hits{0, 0};
  double ents = 0.0;
  for (const auto& s : ds.sequences) {
    const auto& g = ds.subgraphs[s.id];
    m.empty_subgraphs += g.empty() ? 1 : 0;
    m.connected += g.connected ? 1 : 0;
    ents += static_cast<double>(g.size());
    for (Domain d : kDomains) hits[idx(d)] += g.contains_item(d, s.ground_truth(d)) ? 1 : 0;
  }
  if (m.sequences) {
    for (Domain d : kDomains) m.gt_ratio[idx(d)] = static_cast<double>(hits[idx(d)]) / static_cast<double>(m.sequences);
    m.mean_entities = ents / static_cast<double>(m.sequences);
  }
  return m;
}

inline void write_cache(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "sequences.tsv");
    for (const auto& s : ds.sequences) {
      f << s.key << '\t' << s.user;
      for (const auto& x : s.items) f << '\t' << domain_name(x.domain) << ':' << ds.vocab.item(x.domain, x.item);
      f << '\n';
    }
  }
  {
    std::vector<SplitLabel> label(ds.sequences.size(), SplitLabel::kTrain);
    for (SplitLabel p : {SplitLabel::kTrain, SplitLabel::kValid, SplitLabel::kTest})
      for (std::size_t id : ds.split.part(p)) label[id] = p;
    auto f = open_out(dir / "split.tsv");
    for (const auto& s : ds.sequences) f << s.key << '\t' << split_name(label[s.id]) << '\n';
  }
  {
    auto f = open_out(dir / "vocab.tsv");
    for (Domain d : kDomains)
      for (std::size_t i = 0; i < ds.vocab.size(d); ++i)
        f << domain_name(d) << '\t' << ds.vocab.item(d, i) << '\t' << (ds.vocab.in_training(d, i) ? 1 : 0) << '\n';
  }
  {
    auto f = open_out(dir / "entities.tsv");
    for (std::size_t e = 0; e < ds.store.entity_count(); ++e) {
      const auto d = ds.store.domain(e);
      f << ds.store.entity_name(e) << '\t' << (d ? domain_name(*d) : "-") << '\n';
    }
  }
  {
    auto f = open_out(dir / "relations.tsv");
    for (std::size_t r = 0; r < ds.store.relation_count(); ++r) f << ds.store.relation_name(r) << '\n';
  }
  {
    auto f = open_out(dir / "triples.tsv");
    for (const Triple& t : ds.store.triples())
      f << ds.store.entity_name(t.head) << '\t' << ds.store.relation_name(t.relation) << '\t'
        << ds.store.entity_name(t.tail) << '\n';
  }
  {
    auto f = open_out(dir / "subgraphs.txt");
    for (const auto& s : ds.sequences) write_subgraph(f, s.key, ds.subgraphs[s.id], ds.store);
  }
  {
    auto f = open_out(dir / "manifest.tsv");
    summarize(ds).write(f);
  }
}

/// Rebuilds the store with the cached entity and relation numbering.
inline KnowledgeStore read_store(const fs::path& dir, const Vocabulary& vocab) {
  KnowledgeStore store;
  std::string line;
  {
    auto f = open_in(dir / "relations.tsv");
    while (std::getline(f, line))
      if (!line.empty()) store.relation(line);
  }
  {
    auto f = open_in(dir / "entities.tsv");
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto fields = detail::split_tabs(line);
      if (fields.size() != 2) throw FormatError("entities.tsv: expected name and domain");
      store.entity(std::string(fields[0]));
    }
  }
  {
    auto f = open_in(dir / "triples.tsv");
    parse_triples(f, store);
  }
  store.tag_items(vocab);
  return store;
}

inline Dataset read_cache(const fs::path& dir) {
  Dataset ds;
  std::string line;
  std::array<std::vector<std::string>, 2> ids;
  std::array<std::vector<bool>, 2> mask;
  {
    auto f = open_in(dir / "vocab.tsv");
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto fl = detail::split_tabs(line);
      const auto d = parse_domain(fl[0]);
      if (fl.size() != 3 || !d) throw FormatError("vocab.tsv: bad line '" + line + "'");
      ids[idx(*d)].emplace_back(fl[1]);
      mask[idx(*d)].push_back(fl[2] == "1");
    }
  }
  const auto order = ids;
  ds.vocab = Vocabulary::from_ids(ids);
  for (Domain d : kDomains) {
    if (ds.vocab.items(d) != order[idx(d)]) throw FormatError("vocab.tsv: items are not in catalog order");
    ds.vocab.set_training_mask(d, mask[idx(d)]);
  }
  {
    auto f = open_in(dir / "sequences.tsv");
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto fl = detail::split_tabs(line);
      if (fl.size() < 3) throw FormatError("sequences.tsv: bad line");
      HybridSequence s;
      s.id = ds.sequences.size();
      s.key = std::string(fl[0]);
      s.user = std::string(fl[1]);
      for (std::size_t k = 2; k < fl.size(); ++k) {
        const auto tok = fl[k];
        const auto d = tok.size() > 2 && tok[1] == ':' ? parse_domain(tok.substr(0, 1)) : std::nullopt;
        if (!d) throw FormatError("sequences.tsv: bad item token");
        const auto item = ds.vocab.find(*d, std::string(tok.substr(2)));
        if (!item) throw FormatError("sequences.tsv: item missing from vocab.tsv");
        s.items.push_back({*item, *d});
      }
      ds.sequences.push_back(std::move(s));
    }
  }
  std::map<std::string, std::size_t> by_key;
  for (const auto& s : ds.sequences) by_key.emplace(s.key, s.id);
  {
    auto f = open_in(dir / "split.tsv");
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto fl = detail::split_tabs(line);
      const auto label = fl.size() == 2 ? parse_split(fl[1]) : std::nullopt;
      const auto it = by_key.find(std::string(fl[0]));
      if (!label || it == by_key.end()) throw FormatError("split.tsv: bad line '" + line + "'");
      ds.split.part(*label).push_back(it->second);
    }
    for (SplitLabel p : {SplitLabel::kTrain, SplitLabel::kValid, SplitLabel::kTest})
      std::sort(ds.split.part(p).begin(), ds.split.part(p).end());
    if (ds.split.total() != ds.sequences.size()) throw FormatError("split.tsv does not cover every sequence");
  }
  ds.store = read_store(dir, ds.vocab);
  {
    auto f = open_in(dir / "subgraphs.txt");
    auto graphs = read_subgraphs(f, ds.store);
    ds.subgraphs.resize(ds.sequences.size());
    for (const auto& s : ds.sequences) {
      auto it = graphs.find(s.key);
      if (it == graphs.end()) throw FormatError("subgraphs.txt lacks sequence " + s.key);
      ds.subgraphs[s.id] = std::move(it->second);
    }
  }
  return ds;
}

/// ingest -> sequences -> split -> knowledge store -> per-sequence subgraphs.
inline Dataset build_dataset(const RunConfig& cfg) {
  Dataset ds;
  EventLog log = stage("ingest", [&] { return ingest_events(cfg.events, cfg.labels); });
  log::info("ingested " + std::to_string(log.events.size()) + " events (" + std::to_string(log.malformed) +
            " malformed lines)");
  SequenceDataset sd = stage("sequences", [&] { return build_hybrid_sequences(std::move(log.events), cfg.sequences); });
  ds.sequences = std::move(sd.sequences);
  ds.vocab = std::move(sd.vocab);
  ds.split = stage("split", [&] { return split_dataset(ds.sequences, cfg.split, cfg.seed); });
  ds.vocab.mark_training(ds.sequences, ds.split.train);
  ds.store = stage("knowledge", [&] {
    KnowledgeStore s = load_triples(cfg.triples);
    s.tag_items(ds.vocab);
    return s;
  });
  stage("extract", [&] {
    ds.subgraphs.resize(ds.sequences.size());
    parallel_for(ds.sequences.size(), cfg.threads, [&](std::size_t i) {
      ds.subgraphs[i] = extract_subgraph(ds.sequences[i].prefix(), ds.vocab, ds.store, cfg.extract);
    });
    const auto empty = std::count_if(ds.subgraphs.begin(), ds.subgraphs.end(), [](const auto& g) { return g.empty(); });
    if (empty == static_cast<std::ptrdiff_t>(ds.subgraphs.size()))
      log::warn("every subgraph is empty; only sequence mode will be available");
  });
  return ds;
}

inline Dataset cmd_build_kg(const RunConfig& cfg) {
  cfg.validate();
  Dataset ds = build_dataset(cfg);
  stage("write", [&] {
    write_cache(ds, cfg.out);
    std::ofstream c(fs::path(cfg.out) / "config.txt");
    cfg.write(c);
  });
  const auto m = summarize(ds);
  log::info("built " + std::to_string(m.sequences) + " sequences; ground truth in subgraph: A " +
            std::to_string(m.gt_ratio[0]) + ", B " + std::to_string(m.gt_ratio[1]));
  return ds;
}

inline ModelContext make_context(const RunConfig& cfg, const Dataset& ds) {
  return ModelContext::make(cfg.model, ds.vocab, ds.store.entity_count(), ds.store.relation_count());
}

inline TrainResult cmd_train(const RunConfig& cfg) {
  cfg.validate();
  Dataset ds = stage("load", [&] { return read_cache(cfg.out); });
  const ModelContext ctx = make_context(cfg, ds);
  const auto train = ds.examples(SplitLabel::kTrain);
  const auto valid = ds.examples(SplitLabel::kValid);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.threads = cfg.threads;
  ModelParams params = init_params(cfg.model, ctx.shape, cfg.seed);
  const std::string ckpt = cfg.checkpoint_path();
  save_checkpoint(params, ckpt);  // something valid exists even if epoch 1 fails
  {
    // evaluate and recommend can reuse the exact training configuration
    auto c = open_out(fs::path(cfg.out) / "config.txt");
    cfg.write(c);
  }

  auto logf = open_out(fs::path(cfg.out) / "train_log.tsv");
  write_log_header(logf);
  TrainHooks hooks;
  hooks.on_epoch = [&](const ModelParams&, const EpochRecord& r) {
    write_log_line(logf, r);
    logf.flush();
    log::info("epoch " + std::to_string(r.epoch) + "  L_R " + std::to_string(r.recommendation) + "  valid MRR@10 " +
              std::to_string(r.valid_mrr10) + "  " + std::to_string(r.seconds) + "s");
  };
  hooks.on_best = [&](const ModelParams& p, const EpochRecord&) { save_checkpoint(p, ckpt); };
  TrainResult res = stage("train", [&] { return train_model(std::move(params), ctx, train, valid, tc, hooks); });
  log::info("best epoch " + std::to_string(res.best_epoch) + ", checkpoint " + ckpt);
  return res;
}

inline ModelParams load_compatible(const RunConfig& cfg, const ModelContext& ctx) {
  ModelParams loaded = load_checkpoint(cfg.checkpoint_path());
  check_compatible(init_params(cfg.model, ctx.shape, 0), loaded);
  return loaded;
}

/// Test-split report; applies ground-truth injection first when cfg.ratio is set.
inline EvalReport cmd_evaluate(const RunConfig& cfg) {
  cfg.validate();
  Dataset ds = stage("load", [&] { return read_cache(cfg.out); });
  const ModelContext ctx = make_context(cfg, ds);
  ModelParams params = stage("checkpoint", [&] { return load_compatible(cfg, ctx); });
  auto test = ds.examples(SplitLabel::kTest);
  if (test.empty()) throw StageError("evaluate", "test split is empty");
  if (cfg.ratio) inject_ground_truth(test, *cfg.ratio, cfg.inject_seed, ds.vocab, ds.store);
  EvalReport report = stage("evaluate", [&] { return evaluate(params, ctx, test, cfg.threads, cfg.ratio); });
  const std::string stem = cfg.ratio ? "report_ratio_" + detail::show(*cfg.ratio) : "report";
  {
    auto f = open_out(fs::path(cfg.out) / (stem + ".txt"));
    report.write_table(f);
  }
  {
    auto f = open_out(fs::path(cfg.out) / (stem + ".tsv"));
    report.write_tsv(f);
  }
  return report;
}

struct ListedItem {
  std::string item;
  double mixed = 0.0;
  double seq = 0.0;
  double graph = 0.0;
};

struct DomainRecommendation {
  Domain domain = Domain::A;
  double p_seq = 1.0;
  double p_graph = 0.0;
  std::vector<ListedItem> items;
};

/// Top-k per domain for the single user in `sequence_file`. Every interaction
/// in the file is context; items outside the catalog are ignored.
inline std::array<DomainRecommendation, 2> cmd_recommend(const RunConfig& cfg, const std::string& sequence_file) {
  cfg.validate();
  Dataset ds = stage("load", [&] { return read_cache(cfg.out); });
  const ModelContext ctx = make_context(cfg, ds);
  ModelParams params = stage("checkpoint", [&] { return load_compatible(cfg, ctx); });
  EventLog log = stage("ingest", [&] { return ingest_events(sequence_file, cfg.labels); });
  std::set<std::string> users;
  for (const Event& e : log.events) users.insert(e.user_id);
  if (users.size() != 1) throw StageError("recommend", "sequence file must hold exactly one user");
  std::stable_sort(log.events.begin(), log.events.end(), [](const Event& x, const Event& y) {
    return x.timestamp != y.timestamp ? x.timestamp < y.timestamp : x.item_id < y.item_id;
  });
  Example ex;
  for (const Event& e : log.events) {
    const auto item = ds.vocab.find(e.domain, e.item_id);
    if (!item) {
      log::warn("ignoring unknown item " + e.item_id);
      continue;
    }
    ex.prefix.push_back({*item, e.domain});
  }
  for (Domain d : kDomains) {
    const std::size_t n = HybridSequence::positions(ex.prefix, d).size();
    if (n < cfg.sequences.min_per_domain)
      throw StageError("recommend", "sequence has " + std::to_string(n) + " known items in domain " + domain_name(d) +
                                        ", fewer than min_per_domain = " + std::to_string(cfg.sequences.min_per_domain));
  }
  ex.graph = extract_subgraph(ex.prefix, ds.vocab, ds.store, cfg.extract);
  ex.plan = DisseminationPlan::build(ex.graph);

  Tape tape;
  Binding b(tape, params, false);
  const auto preds = forward(b, ctx, ex);
  std::array<DomainRecommendation, 2> out;
  for (Domain d : kDomains) {
    const auto& p = preds[idx(d)];
    DomainRecommendation& r = out[idx(d)];
    r.domain = d;
    r.p_seq = p.p_seq.item();
    r.p_graph = p.p_graph.item();
    const auto& mixed = p.mixed.value().values;
    std::vector<std::size_t> order(mixed.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return mixed[x] > mixed[y]; });
    order.resize(std::min(order.size(), cfg.top_k));
    for (std::size_t i : order)
      r.items.push_back({ds.vocab.item(d, i), mixed[i], p.seq.value()[i], p.graph ? p.graph->value()[i] : 0.0});
  }
  return out;
}

inline void write_recommendations(std::ostream& out, const std::array<DomainRecommendation, 2>& recs) {
  out << std::fixed << std::setprecision(6);
  for (const auto& r : recs) {
    out << "domain " << domain_name(r.domain) << "\tP(sequence mode) " << r.p_seq << "\tP(graph mode) " << r.p_graph
        << '\n';
    out << "rank\titem\tmixed\tsequence\tgraph\n";
    for (std::size_t k = 0; k < r.items.size(); ++k)
      out << k + 1 << '\t' << r.items[k].item << '\t' << r.items[k].mixed << '\t' << r.items[k].seq << '\t'
          << r.items[k].graph << '\n';
  }
}

/// Writes a synthetic corpus to <out>/events.tsv and <out>/triples.tsv (plus
/// synthetic_manifest.tsv and config.txt) and points cfg.events / cfg.triples at them.
inline SyntheticData cmd_generate(RunConfig& cfg) {
  cfg.validate();
  SyntheticData data = stage("generate", [&] { return generate_synthetic(cfg.synthetic, cfg.seed); });
  stage("write", [&] {
    fs::create_directories(cfg.out);
    cfg.events = (fs::path(cfg.out) / "events.tsv").string();
    cfg.triples = (fs::path(cfg.out) / "triples.tsv").string();
    auto ev = open_out(cfg.events);
    write_events(ev, data.events, cfg.labels);
    auto tr = open_out(cfg.triples);
    write_triples(tr, data.triples);
    auto mf = open_out(fs::path(cfg.out) / "synthetic_manifest.tsv");
    write_manifest(mf, data.manifest);
    // later stages can start from -c <out>/config.txt
    auto c = open_out(fs::path(cfg.out) / "config.txt");
    cfg.write(c);
  });
  log::info("generated " + std::to_string(data.events.size()) + " events and " + std::to_string(data.triples.size()) +
            " triples in " + cfg.out);
  return data;
}

}  // namespace mifn
