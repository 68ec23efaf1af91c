#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mifn/checkpoint.hpp"
#include "mifn/testing/corpus.hpp"
#include "mifn/train.hpp"

using namespace mifn;
namespace oracle = mifn::testing;
namespace fs = std::filesystem;

namespace {

const oracle::Corpus& corpus() {
  static const oracle::Corpus c = [] {
    SyntheticConfig sc;
    sc.users = 60;
    sc.sequences_per_user = 4;
    sc.items_a = 30;
    sc.items_b = 30;
    sc.categories = 6;
    sc.max_domain_len = 5;
    return oracle::make_corpus(sc, 12);
  }();
  return c;
}

ModelConfig small_model(Variant v = Variant::kMifn) {
  ModelConfig mc;
  mc.dim = 8;
  mc.variant = v;
  return mc;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mifn_test_train";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  TrainConfig tc;
  tc.epochs = 3;
  tc.adam.lr = 0.0;
  const auto res = train_model(init_params(ctx.config, ctx.shape, 1), ctx, c.train, c.valid, tc);
  ASSERT_EQ(res.history.size(), 3u);
  for (const auto& r : res.history) {
    EXPECT_EQ(r.recommendation, res.history[0].recommendation);
    EXPECT_EQ(r.valid_mrr10, res.history[0].valid_mrr10);
  }
  EXPECT_TRUE(res.best == init_params(ctx.config, ctx.shape, 1));
}

TEST(Train, PatienceStopsAFlatRun) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  TrainConfig tc;
  tc.epochs = 30;
  tc.patience = 2;
  tc.adam.lr = 0.0;
  const auto res = train_model(init_params(ctx.config, ctx.shape, 1), ctx, c.train, c.valid, tc);
  // epoch 1 sets the best; epochs 2 and 3 fail to beat it
  EXPECT_EQ(res.history.size(), 3u);
  EXPECT_EQ(res.best_epoch, 1u);
}

TEST(Train, LossDecreasesOverFirstFiveEpochs) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  TrainConfig tc;
  tc.epochs = 5;
  tc.patience = 10;
  const auto res = train_model(init_params(ctx.config, ctx.shape, 2), ctx, c.train, c.valid, tc);
  ASSERT_EQ(res.history.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e)
    EXPECT_LE(res.history[e].recommendation, res.history[e - 1].recommendation + 1e-3) << "epoch " << e + 1;
  EXPECT_LT(res.history[4].recommendation, res.history[0].recommendation);
}

TEST(Train, SameSeedSameResult) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 5;
  const auto a = train_model(init_params(ctx.config, ctx.shape, 3), ctx, c.train, c.valid, tc);
  const auto b = train_model(init_params(ctx.config, ctx.shape, 3), ctx, c.train, c.valid, tc);
  EXPECT_TRUE(a.best == b.best);
  EXPECT_EQ(a.history[1].recommendation, b.history[1].recommendation);
  tc.seed = 6;
  const auto d = train_model(init_params(ctx.config, ctx.shape, 3), ctx, c.train, c.valid, tc);
  EXPECT_FALSE(a.best == d.best);
}

TEST(Train, NonFiniteParametersAbort) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  ModelParams p = init_params(ctx.config, ctx.shape, 4);
  p.at("seq_b.b").values[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  bool saved = false;
  TrainHooks hooks;
  hooks.on_best = [&](const ModelParams&, const EpochRecord&) { saved = true; };
  EXPECT_THROW(train_model(p, ctx, c.train, c.valid, tc, hooks), TrainingError);
  EXPECT_FALSE(saved);
}

TEST(Train, InvalidConfigurationIsRejected) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  TrainConfig tc;
  tc.epochs = 0;
  EXPECT_THROW(train_model(init_params(ctx.config, ctx.shape, 1), ctx, c.train, c.valid, tc), ConfigError);
  tc.epochs = 1;
  EXPECT_THROW(train_model(init_params(ctx.config, ctx.shape, 1), ctx, {}, c.valid, tc), DatasetError);
}

TEST(Checkpoint, RoundTripReproducesValidationLossExactly) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  std::vector<Example> ten(c.train.begin(), c.train.begin() + 10);
  TrainConfig tc;
  tc.epochs = 1;
  const auto res = train_model(init_params(ctx.config, ctx.shape, 6), ctx, ten, c.valid, tc);
  const fs::path path = scratch("round_trip.ckpt");
  save_checkpoint(res.best, path.string());
  const ModelParams loaded = load_checkpoint(path.string());
  EXPECT_TRUE(loaded == res.best);
  EXPECT_EQ(dataset_loss(loaded, ctx, c.valid), dataset_loss(res.best, ctx, c.valid));
  EXPECT_NO_THROW(check_compatible(init_params(ctx.config, ctx.shape, 0), loaded));
}

TEST(Checkpoint, EncodingIsStableAndDecodable) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  const ModelParams p = init_params(ctx.config, ctx.shape, 7);
  const std::string bytes = encode_checkpoint(p);
  EXPECT_EQ(bytes, encode_checkpoint(decode_checkpoint(bytes)));
  EXPECT_TRUE(decode_checkpoint(bytes) == p);
}

TEST(Checkpoint, CorruptInputIsRejected) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  const std::string bytes = encode_checkpoint(init_params(ctx.config, ctx.shape, 8));
  EXPECT_THROW(decode_checkpoint(""), CheckpointError);
  EXPECT_THROW(decode_checkpoint("NOTACKPT" + bytes.substr(8)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
  EXPECT_THROW(load_checkpoint(scratch("missing.ckpt").string()), IoError);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  const auto& c = corpus();
  const auto ctx = c.context(small_model());
  ModelConfig wide = small_model();
  wide.dim = 12;
  EXPECT_THROW(check_compatible(init_params(ctx.config, ctx.shape, 0), init_params(wide, ctx.shape, 0)),
               CheckpointError);
}
