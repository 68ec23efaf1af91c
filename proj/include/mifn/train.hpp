#pragma once

// Mini-batch Adam training with validation-driven early stopping.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <vector>

#include "mifn/eval.hpp"
#include "mifn/optim.hpp"

namespace mifn {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::size_t patience = 5;
  double clip = 5.0;
  AdamConfig adam;
  std::uint64_t seed = 42;
  std::size_t threads = 1;  // validation only; the training step is single-threaded

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
    if (adam.lr < 0) throw ConfigError("learning rate must be non-negative");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double recommendation = 0.0;  // mean per-sequence L_R over the epoch
  double mode = 0.0;            // mean batch L_M
  double seconds = 0.0;
  double grad_norm = 0.0;       // mean pre-clip global norm
  double valid_mrr10 = 0.0;     // mean over domains; 0 without a validation set
  std::size_t floored = 0;
};

inline void write_log_header(std::ostream& out) { out << "epoch\tL_R\tL_M\twall_seconds\tgrad_norm\n"; }
inline void write_log_line(std::ostream& out, const EpochRecord& r) {
  out << r.epoch << '\t' << r.recommendation << '\t' << r.mode << '\t' << r.seconds << '\t' << r.grad_norm << '\n';
}

struct TrainResult {
  ModelParams best;
  std::size_t best_epoch = 0;
  double best_score = -1.0;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  std::function<void(const ModelParams&, const EpochRecord&)> on_epoch;
  std::function<void(const ModelParams&, const EpochRecord&)> on_best;
};

/// Mean validation MRR@10 over both domains.
inline double validation_score(const ModelParams& params, const ModelContext& ctx, const std::vector<Example>& valid,
                               std::size_t threads) {
  const auto ranks = rank_examples(params, ctx, valid, threads);
  return 0.5 * (mrr_at_k(ranks[0], 10) + mrr_at_k(ranks[1], 10));
}

/// Objective value over `examples` in fixed batches of `batch_size`, without gradients.
inline double dataset_loss(const ModelParams& params, const ModelContext& ctx, const std::vector<Example>& examples,
                           std::size_t batch_size = 32) {
  require(!examples.empty(), "dataset_loss: no examples");
  double acc = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<const Example*> batch;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) batch.push_back(&examples[i]);
    Tape tape;
    Binding b(tape, params, false);
    acc += batch_loss(b, ctx, batch).total.item() * static_cast<double>(batch.size());
  }
  return acc / static_cast<double>(examples.size());
}

/// Trains in place. A non-finite loss or gradient aborts with TrainingError;
/// the caller keeps whatever on_best last received.
inline TrainResult train_model(ModelParams params, const ModelContext& ctx, const std::vector<Example>& train,
                               const std::vector<Example>& valid, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train.empty()) throw DatasetError("no training sequences");
  TrainResult result;
  result.best = params;
  AdamState state;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(Rng::mix(cfg.seed) ^ epoch, /*stream=*/0x73687566ULL);
    shuffle.shuffle(order);

    std::vector<double> per_example(train.size(), 0.0);
    double mode_acc = 0.0, norm_acc = 0.0;
    std::size_t batches = 0;
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t startb = 0; startb < order.size(); startb += cfg.batch_size) {
      std::vector<const Example*> batch;
      std::vector<std::size_t> slots;
      for (std::size_t i = startb; i < std::min(order.size(), startb + cfg.batch_size); ++i) {
        batch.push_back(&train[order[i]]);
        slots.push_back(order[i]);
      }
      Tape tape;
      Binding b(tape, params, true);
      LossBreakdown loss = batch_loss(b, ctx, batch);
      if (!std::isfinite(loss.total.item()))
        throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) + "; keeping the last good checkpoint");
      GradMap g = grad(loss.total, b);
      const double norm = clip_by_global_norm(g, cfg.clip);
      if (!std::isfinite(norm))
        throw TrainingError("non-finite gradient in epoch " + std::to_string(epoch) +
                            "; keeping the last good checkpoint");
      adam_step(params, g, state, cfg.adam);
      for (std::size_t k = 0; k < slots.size(); ++k) per_example[slots[k]] = loss.per_example[k].second;
      mode_acc += loss.mode;
      norm_acc += norm;
      rec.floored += loss.floored;
      ++batches;
    }
    double total = 0.0;
    for (double v : per_example) total += v;  // example order, independent of the shuffle
    rec.recommendation = total / static_cast<double>(train.size());
    rec.mode = mode_acc / static_cast<double>(batches);
    rec.grad_norm = norm_acc / static_cast<double>(batches);
    if (rec.floored) log::warn(std::to_string(rec.floored) + " ground truths hit the probability floor in epoch " +
                               std::to_string(epoch));
    if (!params.all_finite()) throw TrainingError("parameters became non-finite; keeping the last good checkpoint");

    rec.valid_mrr10 = valid.empty() ? 0.0 : validation_score(params, ctx, valid, cfg.threads);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(params, rec);

    if (valid.empty() || rec.valid_mrr10 > result.best_score) {
      result.best = params;
      result.best_epoch = epoch;
      result.best_score = rec.valid_mrr10;
      since_best = 0;
      if (hooks.on_best) hooks.on_best(params, rec);
    } else if (++since_best >= cfg.patience) {
      log::info("early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  return result;
}

}  // namespace mifn
