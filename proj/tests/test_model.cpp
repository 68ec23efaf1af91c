#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mifn/model.hpp"
#include "mifn/testing/corpus.hpp"
#include "mifn/testing/toy.hpp"

using namespace mifn;
namespace oracle = mifn::testing;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig sc;
  sc.users = 60;
  sc.sequences_per_user = 4;
  sc.items_a = 30;
  sc.items_b = 30;
  sc.categories = 6;
  sc.max_domain_len = 5;
  return sc;
}

ModelConfig small_model(Variant v = Variant::kMifn) {
  ModelConfig mc;
  mc.dim = 8;
  mc.variant = v;
  return mc;
}

const oracle::Corpus& corpus() {
  static const oracle::Corpus c = oracle::make_corpus(small_config(), 5);
  return c;
}

void check_distribution(const DomainPrediction& p, const std::vector<bool>& support, std::size_t m) {
  const auto& mixed = p.mixed.value().values;
  ASSERT_EQ(mixed.size(), m);
  EXPECT_NEAR(std::accumulate(mixed.begin(), mixed.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(p.p_graph.item() + p.p_seq.item(), 1.0, 1e-15);
  std::vector<bool> allowed = support;
  for (std::size_t i : p.graph_support) allowed[i] = true;
  for (std::size_t i = 0; i < m; ++i) {
    EXPECT_GE(mixed[i], 0.0);
    if (!allowed[i]) { EXPECT_EQ(mixed[i], 0.0) << "item " << i; }
  }
  if (p.graph) {
    const auto& g = p.graph->value().values;
    EXPECT_NEAR(std::accumulate(g.begin(), g.end(), 0.0), 1.0, 1e-12);
    std::vector<bool> in_graph(m, false);
    for (std::size_t i : p.graph_support) in_graph[i] = true;
    for (std::size_t i = 0; i < m; ++i)
      if (!in_graph[i]) { EXPECT_EQ(g[i], 0.0); }
  }
}

}  // namespace

TEST(Model, VariantNamesRoundTrip) {
  for (Variant v : {Variant::kMifn, Variant::kMifnModeLoss, Variant::kMifnNoKtu})
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_THROW(parse_variant("GRU4Rec"), ConfigError);
}

TEST(Model, InitialisationIsDeterministic) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  EXPECT_TRUE(init_params(ctx.config, ctx.shape, 9) == init_params(ctx.config, ctx.shape, 9));
  EXPECT_FALSE(init_params(ctx.config, ctx.shape, 9) == init_params(ctx.config, ctx.shape, 10));
}

TEST(Model, PredictionsAreDistributionsOnTheirSupport) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  const ModelParams p = init_params(ctx.config, ctx.shape, 1);
  std::size_t graph_used = 0;
  for (const Example& ex : c.test) {
    Tape tape;
    Binding b(tape, p);
    const auto preds = forward(b, ctx, ex);
    for (Domain d : kDomains) {
      check_distribution(preds[idx(d)], ctx.support[idx(d)], ctx.shape.items(d));
      graph_used += preds[idx(d)].graph_active;
    }
  }
  EXPECT_GT(graph_used, 0u);
}

TEST(Model, NoKtuVariantRoutesEverythingToSequenceMode) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model(Variant::kMifnNoKtu));
  const ModelParams p = init_params(ctx.config, ctx.shape, 2);
  for (const Example& ex : c.test) {
    Tape tape;
    Binding b(tape, p);
    for (const auto& pred : forward(b, ctx, ex)) {
      EXPECT_FALSE(pred.graph_active);
      EXPECT_FALSE(pred.graph.has_value());
      EXPECT_EQ(pred.p_graph.item(), 0.0);
      EXPECT_EQ(pred.mixed.value().values, pred.seq.value().values);
    }
  }
}

TEST(Model, EmptySubgraphFallsBackToSequenceMode) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  const ModelParams p = init_params(ctx.config, ctx.shape, 3);
  Example ex = c.test.front();
  ex.graph = KnowledgeSubgraph{};
  ex.plan = DisseminationPlan::build(ex.graph);
  Tape tape;
  Binding b(tape, p);
  for (const auto& pred : forward(b, ctx, ex)) {
    EXPECT_FALSE(pred.graph_active);
    EXPECT_EQ(pred.p_seq.item(), 1.0);
    EXPECT_EQ(pred.mixed.value().values, pred.seq.value().values);
  }
}

// Subgraph without any target-domain item entity: graph mode cannot decode.
TEST(Model, SubgraphWithoutTargetItemsDisablesGraphMode) {
  auto fx = oracle::grad_fixture();
  Example ex = fx.problem.example;
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < ex.graph.size(); ++k)
    if (ex.graph.domains[k] == Domain::A) keep.push_back(k);
  KnowledgeSubgraph g;
  for (std::size_t k : keep) {
    g.entities.push_back(ex.graph.entities[k]);
    g.domains.push_back(ex.graph.domains[k]);
    g.items.push_back(ex.graph.items[k]);
    g.seeds.push_back(ex.graph.seeds[k]);
    g.hops.push_back(ex.graph.hops[k]);
  }
  ex.graph = g;
  ex.plan = DisseminationPlan::build(g);
  Tape tape;
  Binding b(tape, fx.params);
  const auto preds = forward(b, fx.ctx, ex);
  EXPECT_TRUE(preds[idx(Domain::A)].graph_active);
  EXPECT_FALSE(preds[idx(Domain::B)].graph_active);
}

TEST(Model, BatchLossIsMeanNegativeLogLikelihood) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  const ModelParams p = init_params(ctx.config, ctx.shape, 4);
  std::vector<const Example*> batch;
  for (std::size_t i = 0; i < 6; ++i) batch.push_back(&c.train[i]);
  double want = 0.0;
  for (Domain d : kDomains) {
    double s = 0.0;
    for (const Example* ex : batch) {
      Tape tape;
      Binding b(tape, p);
      s += -std::log(std::max(forward(b, ctx, *ex)[idx(d)].mixed.value()[ex->truth[idx(d)]], 1e-12));
    }
    want += s / batch.size();
  }
  Tape tape;
  Binding b(tape, p);
  const auto loss = batch_loss(b, ctx, batch);
  EXPECT_NEAR(loss.total.item(), want, 1e-12);
  EXPECT_NEAR(loss.recommendation, want, 1e-12);
  EXPECT_EQ(loss.targets, 12u);
  EXPECT_EQ(loss.per_example.size(), 6u);
  EXPECT_THROW(batch_loss(b, ctx, {}), ContractViolation);
}

TEST(Model, ModeLossOnlyEntersTheModeLossVariant) {
  const auto& c = corpus();
  for (Variant v : {Variant::kMifn, Variant::kMifnModeLoss}) {
    auto ctx = c.context(small_model(v));
    const ModelParams p = init_params(ctx.config, ctx.shape, 5);
    const Example& ex = *std::find_if(c.train.begin(), c.train.end(), [](const Example& e) {
      return !e.graph.item_entities(Domain::B).empty();
    });
    // pretend the B ground truth never occurred in training
    ctx.support[idx(Domain::B)][ex.truth[idx(Domain::B)]] = false;
    Tape tape;
    Binding b(tape, p);
    const auto loss = batch_loss(b, ctx, {&ex});
    // one B target, so the mode term is -log P(seq) of that single prediction
    Tape t2;
    Binding b2(t2, p);
    EXPECT_NEAR(loss.mode, -std::log(forward(b2, ctx, ex)[idx(Domain::B)].p_seq.item()), 1e-12);
    const double expected = v == Variant::kMifnModeLoss ? loss.recommendation + loss.mode : loss.recommendation;
    EXPECT_NEAR(loss.total.item(), expected, 1e-12) << variant_name(v);
  }
}

TEST(Model, AllPositionsTargetsEveryLaterItem) {
  auto fx = oracle::grad_fixture(Variant::kMifn, 3, TrainTarget::kAllPositions);
  // prefix A0 B1 A2 B0 A1 B2: A targets at 2, 4 and the final one; B at 1, 3, 5 and the final one
  EXPECT_EQ(training_targets(fx.ctx, fx.problem.example, Domain::A).size(), 3u);
  EXPECT_EQ(training_targets(fx.ctx, fx.problem.example, Domain::B).size(), 4u);
  fx.ctx.config.target = TrainTarget::kLastItem;
  EXPECT_EQ(training_targets(fx.ctx, fx.problem.example, Domain::B),
            (std::vector<std::pair<std::size_t, std::size_t>>{{6, 3}}));
}
