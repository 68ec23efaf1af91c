// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "mifn/pipeline.hpp"
#include "mifn/testing/corpus.hpp"
#include "mifn/testing/extended_fd.hpp"
#include "mifn/testing/oracles.hpp"
#include "mifn/testing/toy.hpp"

using namespace mifn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

std::string sci(double x) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << x;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ------------------------------------------------------------------ 1

Outcome gradient_correctness() {
  const auto start = Clock::now();
  auto fx = testing::grad_fixture(Variant::kMifn, 3);
  const std::size_t entities = fx.problem.example.graph.size();
  const GradMap analytic = analytic_gradients(testing::fixture_loss(fx), fx.params);
  const auto numeric = extended::toy_central_differences(export_values(fx.params), "MIFN", 3, false, 1e-5);
  const auto r = compare_gradients(analytic, numeric);
  const double secs = seconds_since(start);
  const bool covered = r.entries_checked == fx.params.scalar_count();
  return {r.max_rel_error < 1e-4 && secs < 60 && covered && entities == 5,
          "max relative error " + sci(r.max_rel_error) + " (" + r.worst_param + ") over " +
              std::to_string(r.entries_checked) + "/" + std::to_string(fx.params.scalar_count()) +
              " entries, subgraph of " + std::to_string(entities) + " entities, " + fmt(secs, 1) + " s"};
}

// ------------------------------------------------------------------ 2

Outcome probability_discipline() {
  SyntheticConfig sc;
  sc.users = 100;
  sc.items_a = 60;
  sc.items_b = 60;
  sc.categories = 8;
  const auto corpus = testing::make_corpus(sc, 21);
  std::vector<const Example*> pool;
  for (const auto* part : {&corpus.train, &corpus.valid, &corpus.test})
    for (const auto& ex : *part) pool.push_back(&ex);

  Rng rng(22);
  std::size_t bad = 0, graph_passes = 0;
  double worst_mode = 0, worst_cond = 0, worst_mixed = 0;
  for (std::size_t pass = 0; pass < 500; ++pass) {
    ModelConfig mc;
    mc.dim = 8 + 4 * rng.below(4);
    mc.variant = rng.bernoulli(0.8) ? Variant::kMifn : Variant::kMifnNoKtu;
    const auto ctx = corpus.context(mc);
    ModelParams p = init_params(mc, ctx.shape, rng.next());
    // stretch the weights so some passes run with saturated gates and peaked softmaxes
    const double stretch = std::exp(rng.uniform(-1.0, 2.0));
    for (auto& [name, t] : p.all())
      for (double& v : t.values) v *= stretch;
    const Example& ex = *pool[rng.below(pool.size())];
    Tape tape;
    Binding b(tape, p, false);
    const auto preds = forward(b, ctx, ex);
    for (Domain d : kDomains) {
      const auto& pr = preds[idx(d)];
      const std::size_t m = ctx.shape.items(d);
      const auto& support = ctx.support[idx(d)];
      std::vector<bool> in_graph(m, false);
      for (std::size_t i : pr.graph_support) in_graph[i] = true;
      graph_passes += pr.graph_active;

      const double mode = std::abs(pr.p_graph.item() + pr.p_seq.item() - 1.0);
      const auto& seq = pr.seq.value().values;
      const auto& mixed = pr.mixed.value().values;
      double seq_sum = 0, mixed_sum = 0, graph_sum = 0;
      bool outside = false;
      for (std::size_t i = 0; i < m; ++i) {
        if (support[i]) seq_sum += seq[i];
        else outside |= seq[i] != 0.0;
        mixed_sum += mixed[i];
        if (!support[i] && !in_graph[i]) outside |= mixed[i] != 0.0;
        outside |= seq[i] < 0 || mixed[i] < 0;
      }
      double cond = std::abs(seq_sum - 1.0);
      if (pr.graph) {
        const auto& g = pr.graph->value().values;
        for (std::size_t i = 0; i < m; ++i) {
          if (in_graph[i]) graph_sum += g[i];
          else outside |= g[i] != 0.0;
        }
        cond = std::max(cond, std::abs(graph_sum - 1.0));
      } else {
        outside |= pr.p_graph.item() != 0.0;
      }
      const double mix_err = std::abs(mixed_sum - 1.0);
      worst_mode = std::max(worst_mode, mode);
      worst_cond = std::max(worst_cond, cond);
      worst_mixed = std::max(worst_mixed, mix_err);
      bad += mode > 1e-9 || cond > 1e-6 || mix_err > 1e-6 || outside;
    }
  }
  return {bad == 0 && graph_passes > 0,
          std::to_string(1000 - bad) + "/1000 domain predictions clean over 500 passes (" +
              std::to_string(graph_passes) + " with graph mode); worst |P(M_S)+P(M_G)-1| " + sci(worst_mode) +
              ", conditional " + sci(worst_cond) + ", mixed " + sci(worst_mixed)};
}

// ------------------------------------------------------------------ 3

Outcome extraction_oracle() {
  Rng rng(31);
  std::size_t same = 0, connected = 0, paths = 0;
  const auto level = log::threshold().load();
  log::set_level(log::Level::kError);
  for (std::size_t i = 0; i < 200; ++i) {
    auto c = testing::random_extraction_case(rng, 300);
    const auto g = extract_subgraph(c.prefix, c.vocab, c.store, c.options);
    const auto want = testing::oracle_extract(c.prefix, c.vocab, c.store, c.options);
    const auto got = testing::describe(g, c.store);
    same += got.entities == want.entities && got.connected == want.connected && got.edges == want.edges;
    if (g.connected) {
      ++connected;
      paths += testing::bfs_cross_path(g);
    }
  }
  log::set_level(level);
  return {same == 200 && paths == connected, std::to_string(same) + "/200 equal the oracle; " + std::to_string(paths) +
                                                 "/" + std::to_string(connected) +
                                                 " connected subgraphs pass the BFS path check"};
}

// ------------------------------------------------------------------ 4

Outcome metric_oracle() {
  Rng rng(41);
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> truth, ranks;
  for (std::size_t n = 0; n < 1000; ++n) {
    const std::size_t m = 1 + rng.below(100);
    std::vector<double> s(m);
    // half the vectors on a coarse grid so ties are frequent
    const bool coarse = rng.bernoulli(0.5);
    for (double& v : s) v = coarse ? static_cast<double>(rng.below(6)) : rng.uniform(0, 1);
    truth.push_back(rng.below(m));
    ranks.push_back(rank_of(truth.back(), s));
    scores.push_back(std::move(s));
  }
  std::size_t exact = 0;
  std::string detail;
  for (std::size_t k : {5u, 10u, 20u}) {
    const auto o = testing::oracle_metrics(scores, truth, k);
    const bool m = mrr_at_k(ranks, k) == o.mrr, r = recall_at_k(ranks, k) == o.recall;
    // per-vector agreement as well as the averages
    std::size_t per = 0;
    for (std::size_t n = 0; n < scores.size(); ++n) {
      const auto one = testing::oracle_metrics({scores[n]}, {truth[n]}, k);
      per += mrr_at_k({ranks[n]}, k) == one.mrr && recall_at_k({ranks[n]}, k) == one.recall;
    }
    exact += m && r && per == scores.size();
    detail += "K=" + std::to_string(k) + ": " + std::to_string(per) + "/1000 ";
  }
  return {exact == 3, detail + "exact"};
}

// ------------------------------------------------------------------ 5 and 6

// Training budget shared by both variants of the planted-link comparison.
constexpr std::size_t kPlantedDim = 32;
constexpr std::size_t kPlantedEpochs = 18;
constexpr std::size_t kPlantedPatience = 18;
constexpr double kPlantedLr = 1e-3;

struct PlantedRun {
  double recall5_b = 0.0;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

struct PlantedState {
  testing::Corpus corpus;
  ModelContext ctx;
  ModelParams params;
};

PlantedRun planted_run(std::uint64_t seed, Variant v, PlantedState* keep) {
  const auto start = Clock::now();
  SyntheticConfig sc;  // p_link 0.9, 500 users x 4 sequences, 200 items per domain
  auto corpus = testing::make_corpus(sc, seed);
  ModelConfig mc;
  mc.dim = kPlantedDim;
  mc.variant = v;
  const auto ctx = corpus.context(mc);
  TrainConfig tc;
  tc.epochs = kPlantedEpochs;
  tc.patience = kPlantedPatience;
  tc.adam.lr = kPlantedLr;
  tc.seed = seed;
  auto res = train_model(init_params(mc, ctx.shape, seed), ctx, corpus.train, corpus.valid, tc);
  const auto rep = evaluate(res.best, ctx, corpus.test);
  PlantedRun out{rep.recall[idx(Domain::B)].at(5), res.best_epoch, seconds_since(start)};
  if (keep) *keep = {std::move(corpus), ctx, std::move(res.best)};
  return out;
}

Outcome planted_link(PlantedState& kept) {
  const auto start = Clock::now();
  double mifn = 0, ablated = 0;
  std::string detail;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto a = planted_run(seed, Variant::kMifn, seed == 1 ? &kept : nullptr);
    const auto b = planted_run(seed, Variant::kMifnNoKtu, nullptr);
    mifn += a.recall5_b / 3;
    ablated += b.recall5_b / 3;
    detail += "seed " + std::to_string(seed) + " " + fmt(a.recall5_b, 3) + "/" + fmt(b.recall5_b, 3) + "; ";
    std::cerr << "  planted-link seed " << seed << ": MIFN B Recall@5 " << fmt(a.recall5_b) << " (epoch "
              << a.best_epoch << ", " << fmt(a.seconds, 0) << " s), MIFN-KTU " << fmt(b.recall5_b) << " (epoch "
              << b.best_epoch << ", " << fmt(b.seconds, 0) << " s)\n";
  }
  const double secs = seconds_since(start);
  return {mifn - ablated >= 0.2 && mifn >= 0.8 && secs < 1800,
          "mean B Recall@5 MIFN " + fmt(mifn) + " vs MIFN-KTU " + fmt(ablated) + " (gap " + fmt(mifn - ablated) +
              "); " + detail + fmt(secs / 60, 1) + " min"};
}

Outcome ratio_monotonicity(const PlantedState& s) {
  std::vector<double> r20;
  std::string detail;
  for (double ratio : {0.0, 0.3, 0.5, 0.7, 0.9, 1.0}) {
    auto test = s.corpus.test;
    inject_ground_truth(test, ratio, 7, s.corpus.data.vocab, s.corpus.store);
    const auto rep = evaluate(s.params, s.ctx, test, 1, ratio);
    r20.push_back(rep.recall[idx(Domain::B)].at(20));
    detail += fmt(ratio, 1) + ":" + fmt(r20.back()) + " ";
  }
  bool ok = true;
  for (std::size_t i = 1; i < r20.size(); ++i) ok &= r20[i] >= r20[i - 1];
  return {ok, "B Recall@20 by ratio " + detail};
}

// ------------------------------------------------------------------ 7

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "mifn_acceptance_determinism";
  fs::remove_all(root);
  const auto level = log::threshold().load();
  log::set_level(log::Level::kWarn);
  std::array<std::string, 2> tsv, txt, ckpt;
  double loss_live = 0, loss_loaded = 0;
  for (int run = 0; run < 2; ++run) {
    RunConfig cfg;
    cfg.out = (root / ("run" + std::to_string(run))).string();
    cfg.synthetic.users = 120;
    cfg.synthetic.items_a = 60;
    cfg.synthetic.items_b = 60;
    cfg.synthetic.categories = 8;
    cfg.model.dim = 16;
    cfg.train.epochs = 2;
    cfg.seed = 77;
    cmd_generate(cfg);
    cmd_build_kg(cfg);
    const TrainResult tr = cmd_train(cfg);
    cmd_evaluate(cfg);
    tsv[run] = slurp(fs::path(cfg.out) / "report.tsv");
    txt[run] = slurp(fs::path(cfg.out) / "report.txt");
    ckpt[run] = slurp(cfg.checkpoint_path());
    if (run == 0) {
      const Dataset ds = read_cache(cfg.out);
      const auto ctx = make_context(cfg, ds);
      const auto valid = ds.examples(SplitLabel::kValid);
      loss_live = dataset_loss(tr.best, ctx, valid);
      loss_loaded = dataset_loss(load_checkpoint(cfg.checkpoint_path()), ctx, valid);
    }
  }
  log::set_level(level);
  const bool same_reports = tsv[0] == tsv[1] && txt[0] == txt[1] && !tsv[0].empty();
  const bool same_loss = std::memcmp(&loss_live, &loss_loaded, sizeof(double)) == 0;
  return {same_reports && same_loss && ckpt[0] == ckpt[1],
          std::string("metric files ") + (same_reports ? "identical" : "DIFFER") + ", checkpoints " +
              (ckpt[0] == ckpt[1] ? "identical" : "DIFFER") + ", validation loss " + fmt(loss_live, 17) +
              (same_loss ? " == " : " != ") + fmt(loss_loaded, 17) + " after reload"};
}

// ------------------------------------------------------------------ 8

Outcome chance_level() {
  SyntheticConfig sc;
  sc.p_link = 0.0;
  const auto corpus = testing::make_corpus(sc, 81);
  ModelConfig mc;
  mc.dim = 32;
  const auto ctx = corpus.context(mc);
  const ModelParams p = init_params(mc, ctx.shape, 82);
  std::vector<Example> all = corpus.train;
  all.insert(all.end(), corpus.valid.begin(), corpus.valid.end());
  all.insert(all.end(), corpus.test.begin(), corpus.test.end());
  const auto rep = evaluate(p, ctx, all);
  bool ok = true;
  std::string detail = std::to_string(all.size()) + " sequences; ";
  for (Domain d : kDomains) {
    const double m = static_cast<double>(ctx.shape.items(d));
    for (std::size_t k : kDefaultCutoffs) {
      const double expect = static_cast<double>(k) / m;
      const double sigma = std::sqrt(expect * (1 - expect) / static_cast<double>(all.size()));
      const double got = rep.recall[idx(d)].at(k);
      const double z = (got - expect) / sigma;
      ok &= std::abs(z) <= 3.0;
      detail += std::string(domain_name(d)) + "@" + std::to_string(k) + " " + fmt(got) + " (z " + fmt(z, 2) + ") ";
    }
  }
  return {ok, detail};
}

}  // namespace

int main() {
  log::set_level(log::Level::kWarn);
  bool all = true;
  auto line = [&](int n, const std::string& name, const std::function<Outcome()>& fn) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all &= o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "): " << o.detail << "  ["
              << fmt(seconds_since(start), 1) << " s]" << std::endl;
  };
  PlantedState kept;
  bool planted_done = false;
  line(1, "gradient correctness", gradient_correctness);
  line(2, "probability discipline", probability_discipline);
  line(3, "extraction oracle", extraction_oracle);
  line(4, "metric oracle", metric_oracle);
  line(5, "planted-link separation", [&] {
    auto o = planted_link(kept);
    planted_done = true;
    return o;
  });
  line(6, "ratio monotonicity", [&] {
    if (!planted_done || kept.params.count() == 0) return Outcome{false, "no trained checkpoint from criterion 5"};
    return ratio_monotonicity(kept);
  });
  line(7, "determinism and persistence", determinism);
  line(8, "chance level", chance_level);
  return all ? 0 : 1;
}
