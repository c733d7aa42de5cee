#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroalign/core/log.hpp"
#include "neuroalign/training/adamw.hpp"
#include "neuroalign/training/checkpoint.hpp"

namespace neuroalign::training {

struct StepRecord {
  int epoch = 0;
  long step = 0;
  losses::LossValue loss;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},       {"step", step},     {"loss_total", loss.total}, {"loss_e", loss.loss_e},
            {"loss_i", loss.loss_i}, {"loss_sk", loss.loss_sk}, {"tau", loss.tau},          {"beta", loss.beta}};
  }
};

struct EpochSummary {
  int epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's steps
  double val_loss = 0.0;
  bool improved = false;
};

// Model, learned loss scalars and optimizer moments of one run.
struct TrainState {
  ExperimentConfig config;
  std::unique_ptr<encoders::EegModel> model;
  losses::LossParams loss_params;
  std::unique_ptr<AdamW> optimizer;
  int epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;

  // Fresh state. Image embeddings are not part of it; they stay constants.
  static TrainState create(const ExperimentConfig& cfg) {
    TrainState s;
    s.config = cfg;
    s.seed = static_cast<std::uint64_t>(cfg.seed);
    auto spec = encoders::EncoderSpec::from_config(cfg);
    s.model = std::make_unique<encoders::EegModel>(spec, static_cast<std::size_t>(cfg.embedding_dim), s.seed);
    s.loss_params = losses::LossParams::create(cfg.tau_init, cfg.beta_init, cfg.loss.tau_scale_cap, cfg.loss.beta_trainable,
                                               cfg.loss.beta_min);
    s.optimizer = std::make_unique<AdamW>(cfg.optimizer);
    for (const auto& [n, v] : s.model->parameters().parameters()) s.optimizer->add(n, v, true);
    // No weight decay on the loss scalars: shrinking tau or beta toward zero is not a regularizer.
    s.optimizer->add("loss.tau", s.loss_params.tau, false);
    if (cfg.loss.beta_trainable) s.optimizer->add("loss.beta", s.loss_params.beta, false);
    return s;
  }

  static TrainState from_checkpoint(const Checkpoint& c) {
    TrainState s;
    s.config = c.config;
    s.seed = static_cast<std::uint64_t>(c.config.seed);
    s.model = restore_model(c);
    s.loss_params = restore_loss_params(c);
    // Optimizer moments are not checkpointed; a resumed run restarts them from zero.
    s.optimizer = std::make_unique<AdamW>(c.config.optimizer);
    for (const auto& [n, v] : s.model->parameters().parameters()) s.optimizer->add(n, v, true);
    s.optimizer->add("loss.tau", s.loss_params.tau, false);
    if (c.config.loss.beta_trainable) s.optimizer->add("loss.beta", s.loss_params.beta, false);
    s.epoch = c.epoch;
    s.best_val_loss = c.val_loss;
    return s;
  }
};

inline losses::SkOptions sk_options(const ExperimentConfig& c) {
  return {c.loss.sk_mode == "flattened", c.loss.sk_include_diagonal};
}

// The configured objective on one matched batch.
inline losses::LossTerms compute_loss(const ExperimentConfig& c, const ag::Var& E_f, const ag::Var& I_f,
                                      const losses::LossParams& lp) {
  if (c.loss_kind() == LossKind::kSkInfoNce) return losses::sk_infonce(E_f, I_f, lp, sk_options(c));
  return losses::plain_infonce(E_f, I_f, lp);
}

// Image rows paired with the trials at `idx`, as a gradient-free constant.
inline ag::Var paired_images(const EEGTrialSet& set, const EmbeddingMatrix& images, const std::vector<std::size_t>& idx) {
  const std::size_t d = images.dim();
  Tensor t({idx.size(), d});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const int id = set.image_ids[idx[k]];
    if (id < 0 || static_cast<std::size_t>(id) >= images.rows())
      throw DataError("trial refers to image id " + std::to_string(id) + " outside the embedding table");
    std::copy_n(images.values.data() + static_cast<std::size_t>(id) * d, d, t.data() + k * d);
  }
  return ag::constant(std::move(t));
}

// Contiguous batches over `order`; a trailing batch smaller than 2 is merged into its predecessor.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
  if (out.size() > 1 && out.back().size() < 2) {
    auto tail = out.back();
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

// Inference-mode mean of the configured loss over fixed-order batches, weighted by batch size.
inline double validate(TrainState& s, const EEGTrialSet& val, const EmbeddingMatrix& images) {
  if (val.n_trials() < 2) throw DataError("validation needs at least 2 trials");
  std::vector<std::size_t> order(val.n_trials());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(s.config.batch_size), val.n_trials());
  nn::ForwardContext ctx;
  double total = 0.0;
  for (const auto& b : make_batches(order, batch)) {
    ag::Var x = ag::constant(encoders::EegModel::batch_input(val, b));
    ag::Var E_f = s.model->embed(x, ctx);
    total += compute_loss(s.config, E_f, paired_images(val, images, b), s.loss_params).total.item() * static_cast<double>(b.size());
  }
  return total / static_cast<double>(val.n_trials());
}

struct TrainOptions {
  std::string metrics_path;     // JSONL, one record per step; empty: memory only
  std::string checkpoint_path;  // best-val checkpoint; empty: memory only
  std::function<void(const EpochSummary&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  std::vector<StepRecord> log;
  std::vector<EpochSummary> epochs;
};

// Mini-batch training with best-validation checkpointing.
inline TrainResult train(const ExperimentConfig& cfg, const EEGTrialSet& train_set, const EEGTrialSet& val_set,
                         const EmbeddingMatrix& train_images, const TrainOptions& opt = {}) {
  if (train_set.n_trials() < 2) throw DataError("training split needs at least 2 trials");
  if (val_set.n_trials() < 2) throw DataError("validation split needs at least 2 trials");
  if (train_images.dim() != static_cast<std::size_t>(cfg.embedding_dim))
    throw DataError("image embeddings have dimension " + std::to_string(train_images.dim()) + ", config expects " +
                    std::to_string(cfg.embedding_dim));
  set_global_seed(static_cast<std::uint64_t>(cfg.seed));
  TrainState s = TrainState::create(cfg);
  std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  if (batch > train_set.n_trials()) {
    log_warning("batch_size " + std::to_string(batch) + " exceeds the " + std::to_string(train_set.n_trials()) +
                " training trials; clamped");
    batch = train_set.n_trials();
  }
  std::optional<std::ofstream> metrics;
  if (!opt.metrics_path.empty()) {
    metrics.emplace(opt.metrics_path, std::ios::trunc);
    if (!*metrics) throw std::runtime_error("cannot write metrics log '" + opt.metrics_path + "'");
  }
  Rng shuffle_rng = derive_rng(s.seed, "shuffle");
  Rng dropout_rng = derive_rng(s.seed, "dropout");
  TrainResult result;
  std::vector<std::size_t> order(train_set.n_trials());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    nn::ForwardContext ctx{true, &dropout_rng, nullptr};
    double epoch_loss = 0.0;
    const auto batches = make_batches(order, batch);
    for (const auto& b : batches) {
      ag::Var x = ag::constant(encoders::EegModel::batch_input(train_set, b));
      ag::Var E_f = s.model->embed(x, ctx);
      losses::LossTerms terms = compute_loss(cfg, E_f, paired_images(train_set, train_images, b), s.loss_params);
      StepRecord rec{epoch, ++step, losses::summarize(terms, s.loss_params)};
      if (!std::isfinite(rec.loss.total)) throw std::runtime_error("non-finite loss at step " + std::to_string(step));
      s.optimizer->zero_grad();
      terms.total.backward();
      s.optimizer->step();
      s.loss_params.enforce_constraints();
      epoch_loss += rec.loss.total;
      if (metrics) *metrics << rec.to_json().dump() << '\n';
      result.log.push_back(rec);
    }
    s.epoch = epoch;
    EpochSummary sum{epoch, epoch_loss / static_cast<double>(batches.size()), validate(s, val_set, train_images), false};
    if (sum.val_loss < s.best_val_loss) {
      s.best_val_loss = sum.val_loss;
      sum.improved = true;
      result.best = snapshot(cfg, *s.model, s.loss_params, epoch, sum.val_loss);
      result.best.metrics = {{"train_loss", sum.train_loss}, {"val_loss", sum.val_loss}, {"steps", step}};
      if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, result.best);
    }
    log_info("epoch " + std::to_string(epoch) + " train " + std::to_string(sum.train_loss) + " val " + std::to_string(sum.val_loss));
    if (opt.on_epoch) opt.on_epoch(sum);
    result.epochs.push_back(sum);
  }
  return result;
}

}  // namespace neuroalign::training
