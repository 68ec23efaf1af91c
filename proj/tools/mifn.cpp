// mifn command line: generate, build-kg, train, evaluate, recommend, selftest.

#include <chrono>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "mifn/pipeline.hpp"
#include "mifn/testing/extended_fd.hpp"
#include "mifn/testing/oracles.hpp"

namespace {

using namespace mifn;

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;
  bool quiet = false;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_file, "key = value config file; flags override it");
  cmd->add_flag("-q,--quiet", o.quiet, "only print warnings and errors");
  for (const auto& key : RunConfig::keys())
    cmd->add_option_function<std::string>(
        "--" + key.name, [&o, name = key.name](const std::string& v) { o.values[name] = v; }, key.help);
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_file.empty()) cfg.load_file(o.config_file);
  for (const auto& [k, v] : o.values) cfg.set(k, v);
  if (o.quiet) log::set_level(log::Level::kWarn);
  return cfg;
}

bool report(std::ostream& out, const std::string& name, bool ok, const std::string& detail) {
  out << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
  return ok;
}

/// Gradient check on the toy model plus the extraction and metric oracles.
bool selftest(std::ostream& out, std::size_t cases, std::uint64_t seed) {
  bool ok = true;
  {
    const auto start = std::chrono::steady_clock::now();
    auto fx = testing::grad_fixture(Variant::kMifn, seed);
    const GradMap analytic = analytic_gradients(testing::fixture_loss(fx), fx.params);
    const auto numeric = extended::toy_central_differences(export_values(fx.params), "MIFN", seed, false, 1e-5);
    const auto r = compare_gradients(analytic, numeric);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ok &= report(out, "gradient", r.max_rel_error < 1e-4,
                 "max relative error " + std::to_string(r.max_rel_error) + " over " +
                     std::to_string(r.entries_checked) + " entries (" + r.worst_param + "), " + std::to_string(secs) +
                     " s");
  }
  {
    Rng rng(seed, /*stream=*/1);
    std::size_t same = 0, paths = 0, connected = 0;
    const auto level = log::threshold().load();
    log::set_level(log::Level::kError);
    for (std::size_t i = 0; i < cases; ++i) {
      auto c = testing::random_extraction_case(rng);
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
    ok &= report(out, "extraction", same == cases && paths == connected,
                 std::to_string(same) + "/" + std::to_string(cases) + " match the oracle, " + std::to_string(paths) +
                     "/" + std::to_string(connected) + " connected subgraphs have a cross-domain path");
  }
  {
    Rng rng(seed, /*stream=*/2);
    std::size_t same = 0, total = 0;
    for (std::size_t i = 0; i < cases; ++i) {
      const std::size_t m = 1 + rng.below(60);
      std::vector<double> s(m);
      for (double& v : s) v = static_cast<double>(rng.below(8)) / 4.0;  // plenty of ties
      const std::size_t gt = rng.below(m);
      for (std::size_t k : kDefaultCutoffs) {
        const auto want = testing::oracle_metrics({s}, {gt}, k);
        const std::vector<std::size_t> ranks{rank_of(gt, s)};
        same += mrr_at_k(ranks, k) == want.mrr && recall_at_k(ranks, k) == want.recall;
        ++total;
      }
    }
    ok &= report(out, "metrics", same == total, std::to_string(same) + "/" + std::to_string(total) + " exact");
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed information flow network for cross-domain sequential recommendation"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("generate", "write a planted-link synthetic corpus into --out");
  auto* build = app.add_subcommand("build-kg", "ingest events and triples, extract subgraphs, write the cache");
  auto* train = app.add_subcommand("train", "train on the cache in --out and write the checkpoint");
  auto* eval = app.add_subcommand("evaluate", "report MRR and Recall on the test split");
  auto* rec = app.add_subcommand("recommend", "top-K lists for one user's interaction file");
  auto* self = app.add_subcommand("selftest", "gradient check and oracle suites");
  for (auto* c : {gen, build, train, eval, rec}) add_config_flags(c, o);

  bool baseline = false;
  eval->add_flag("--baseline", baseline, "also report the popularity baseline");
  std::string sequence_file;
  rec->add_option("--sequence", sequence_file, "events TSV holding one user's interactions")->required();
  std::size_t cases = 200;
  std::uint64_t self_seed = 1;
  self->add_option("--cases", cases, "random cases per oracle suite");
  self->add_option("--seed", self_seed, "seed of the random cases");

  CLI11_PARSE(app, argc, argv);

  try {
    if (self->parsed()) return selftest(std::cout, cases, self_seed) ? 0 : 1;
    RunConfig cfg = resolve(o);
    if (gen->parsed()) {
      cmd_generate(cfg);
      std::cout << "events\t" << cfg.events << "\ntriples\t" << cfg.triples << '\n';
    } else if (build->parsed()) {
      const Dataset ds = cmd_build_kg(cfg);
      summarize(ds).write(std::cout);
    } else if (train->parsed()) {
      const TrainResult r = cmd_train(cfg);
      std::cout << "best_epoch\t" << r.best_epoch << "\nvalid_mrr10\t" << r.best_score << "\ncheckpoint\t"
                << cfg.checkpoint_path() << '\n';
    } else if (eval->parsed()) {
      cmd_evaluate(cfg).write_table(std::cout);
      if (baseline) {
        const Dataset ds = read_cache(cfg.out);
        evaluate_popularity(ds.sequences, ds.split.train, ds.vocab, ds.examples(SplitLabel::kTest))
            .write_table(std::cout);
      }
    } else if (rec->parsed()) {
      write_recommendations(std::cout, cmd_recommend(cfg, sequence_file));
    }
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}
