#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <unistd.h>

#include "neuroalign/experiment.hpp"

using namespace neuroalign;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.encoder_name = "SK-STConv";
  c.embedding_dim = 16;
  c.n_electrodes = 8;
  c.n_timepoints = 32;
  c.batch_size = 16;
  c.epochs = 3;
  c.optimizer.lr = 1e-3;
  c.encoder.n_maps = 4;
  c.encoder.temporal_kernel = 5;
  c.encoder.pool_kernel = 2;
  c.encoder.pool_stride = 2;
  c.encoder.dropout = 0.1;
  c.attention_heads = 2;
  c.synthetic.n_classes = 20;
  c.synthetic.n_test_classes = 5;
  c.synthetic.trials_per_class = 4;
  c.synthetic.test_trials_per_class = 3;
  c.synthetic.latent_dim = 4;
  c.data.val_fraction = 0.25;
  c.data.window_ms = 128;  // 32 samples at 250 Hz
  return c;
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Trainer, FrozenZeroBetaReproducesInfoNceRun) {
  auto cfg = tiny_config();
  cfg.beta_init = 0.0;
  cfg.loss.beta_trainable = false;
  auto splits = data::synthetic_splits(cfg);
  auto sk = training::train(cfg, splits.train, splits.val, splits.train_images);
  cfg.loss_name = "InfoNCE";
  auto plain = training::train(cfg, splits.train, splits.val, splits.train_images);
  ASSERT_EQ(sk.log.size(), plain.log.size());
  for (std::size_t i = 0; i < sk.log.size(); ++i) EXPECT_EQ(sk.log[i].loss.total, plain.log[i].loss.total) << "step " << i;
  for (const auto& [n, t] : sk.best.tensors) EXPECT_TRUE(same_tensor(t, plain.best.at(n))) << n;
}

TEST(Trainer, FreshStateStartsAtConfiguredTemperature) {
  EXPECT_NO_THROW(validate_config(tiny_config()));
  auto s = training::TrainState::create(tiny_config());
  EXPECT_NEAR(s.loss_params.logit_scale(), 1.0 / 0.07, 1e-9);
  EXPECT_DOUBLE_EQ(s.loss_params.beta.item(), 1.0);
}

TEST(Trainer, LossHalvesOnSyntheticData) {
  auto cfg = tiny_config();
  cfg.epochs = 40;
  auto splits = data::synthetic_splits(cfg);
  auto r = training::train(cfg, splits.train, splits.val, splits.train_images);
  const double first = r.epochs.front().train_loss, last = r.epochs.back().train_loss;
  EXPECT_LE(last, 0.5 * first) << first << " -> " << last;
}

TEST(Trainer, ValidationIsPureAndRepeatable) {
  auto cfg = tiny_config();
  auto splits = data::synthetic_splits(cfg);
  auto s = training::TrainState::create(cfg);
  std::vector<Tensor> before;
  for (const auto& [n, b] : s.model->parameters().buffers()) before.push_back(*b);
  for (const auto& [n, v] : s.model->parameters().parameters()) before.push_back(v.value());
  const double a = training::validate(s, splits.val, splits.train_images);
  const double b = training::validate(s, splits.val, splits.train_images);
  EXPECT_EQ(a, b);
  std::size_t k = 0;
  for (const auto& [n, buf] : s.model->parameters().buffers()) EXPECT_TRUE(same_tensor(*buf, before[k++])) << n;
  for (const auto& [n, v] : s.model->parameters().parameters()) EXPECT_TRUE(same_tensor(v.value(), before[k++])) << n;
}

TEST(Trainer, MatchedToyBatchGivesKnownLoss) {
  // Two trials whose embeddings equal their orthogonal image rows: InfoNCE at logit scale 1 is ln(1 + e^-1).
  ag::Var E = ag::constant(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
  auto lp = losses::LossParams::create(0.0, 0.0);
  auto cfg = tiny_config();
  cfg.loss_name = "InfoNCE";
  EXPECT_NEAR(training::compute_loss(cfg, E, E, lp).total.item(), std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(Trainer, SeedControlsTheRun) {
  auto cfg = tiny_config();
  cfg.epochs = 2;
  auto splits = data::synthetic_splits(cfg);
  auto a = training::train(cfg, splits.train, splits.val, splits.train_images);
  auto b = training::train(cfg, splits.train, splits.val, splits.train_images);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
  for (const auto& [n, t] : a.best.tensors) EXPECT_TRUE(same_tensor(t, b.best.at(n))) << n;
  cfg.seed = 1;
  auto c = training::train(cfg, splits.train, splits.val, splits.train_images);
  EXPECT_NE(a.log.front().loss.total, c.log.front().loss.total);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUntouched) {
  auto cfg = tiny_config();
  cfg.optimizer.lr = 0.0;
  auto splits = data::synthetic_splits(cfg);
  auto fresh = training::TrainState::create(cfg);
  auto r = training::train(cfg, splits.train, splits.val, splits.train_images);
  for (const auto& [n, v] : fresh.model->parameters().parameters()) EXPECT_TRUE(same_tensor(v.value(), r.best.at(n))) << n;
  EXPECT_EQ(r.best.at("loss.tau").item(), fresh.loss_params.tau.item());
  EXPECT_EQ(r.best.at("loss.beta").item(), fresh.loss_params.beta.item());
}

TEST(Trainer, BetaNeverGoesNegative) {
  // The SK term is nonnegative, so its gradient always pushes beta down; a large step overshoots zero.
  auto cfg = tiny_config();
  cfg.optimizer.lr = 0.3;
  cfg.beta_init = 0.5;
  cfg.epochs = 4;
  auto splits = data::synthetic_splits(cfg);
  auto r = training::train(cfg, splits.train, splits.val, splits.train_images);
  double lowest = 1.0;
  for (const auto& rec : r.log) {
    EXPECT_GE(rec.loss.beta, 0.0) << "step " << rec.step;
    lowest = std::min(lowest, rec.loss.beta);
  }
  EXPECT_EQ(lowest, 0.0);
}

TEST(Trainer, CheckpointRoundTripReproducesValidationLoss) {
  auto cfg = tiny_config();
  auto splits = data::synthetic_splits(cfg);
  const fs::path dir = fs::temp_directory_path() / ("neuroalign-ckpt-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  training::TrainOptions opt;
  opt.checkpoint_path = (dir / "best.nack").string();
  opt.metrics_path = (dir / "metrics.jsonl").string();
  auto r = training::train(cfg, splits.train, splits.val, splits.train_images, opt);
  auto loaded = training::load_checkpoint(opt.checkpoint_path);
  EXPECT_EQ(loaded.epoch, r.best.epoch);
  EXPECT_EQ(loaded.config, validate_config(cfg));  // stored with the loss name resolved
  auto s = training::TrainState::from_checkpoint(loaded);
  EXPECT_NEAR(training::validate(s, splits.val, splits.train_images), r.best.val_loss, 1e-6);
  std::ifstream metrics(opt.metrics_path);
  std::size_t lines = 0;
  for (std::string line; std::getline(metrics, line); ++lines) EXPECT_TRUE(nlohmann::json::parse(line).contains("loss_sk"));
  EXPECT_EQ(lines, r.log.size());
  fs::remove_all(dir);
}

TEST(Trainer, CorruptCheckpointsAreRejected) {
  const fs::path p = fs::temp_directory_path() / ("neuroalign-bad-" + std::to_string(::getpid()) + ".nack");
  { std::ofstream(p) << "not a checkpoint"; }
  EXPECT_THROW(training::load_checkpoint(p.string()), training::CheckpointError);
  fs::remove(p);
  try {
    training::load_checkpoint(p.string());
    FAIL();
  } catch (const training::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("neuroalign train"), std::string::npos);
  }
}

TEST(Trainer, ImageEmbeddingsAreNotTrained) {
  auto cfg = tiny_config();
  auto splits = data::synthetic_splits(cfg);
  const Tensor images = splits.train_images.values;
  auto s = training::TrainState::create(cfg);
  EXPECT_EQ(s.optimizer->slots().size(), s.model->parameters().parameters().size() + 2);
  for (const auto& slot : s.optimizer->slots()) EXPECT_EQ(slot.name.find("image"), std::string::npos);
  training::train(cfg, splits.train, splits.val, splits.train_images);
  EXPECT_TRUE(same_tensor(images, splits.train_images.values));
}

TEST(Trainer, TrailingSingletonBatchIsMerged) {
  std::vector<std::size_t> order(10);
  std::iota(order.begin(), order.end(), 0);
  auto b = training::make_batches(order, 3);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b.back().size(), 4u);
  EXPECT_EQ(training::make_batches(order, 5).size(), 2u);
  std::size_t total = 0;
  for (const auto& x : training::make_batches(order, 4)) total += x.size();
  EXPECT_EQ(total, 10u);
}

TEST(Trainer, OversizedBatchIsClamped) {
  auto cfg = tiny_config();
  cfg.batch_size = 1000;
  cfg.epochs = 2;
  auto splits = data::synthetic_splits(cfg);
  auto r = training::train(cfg, splits.train, splits.val, splits.train_images);
  EXPECT_EQ(r.log.size(), 2u);  // one full-split step per epoch
}

TEST(Experiment, OneReportPerSeed) {
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.seeds = {0, 1, 2, 3, 4};
  auto splits = data::synthetic_splits(cfg);
  const fs::path dir = fs::temp_directory_path() / ("neuroalign-exp-" + std::to_string(::getpid()));
  auto res = run_experiment(cfg, splits, {dir.string()});
  ASSERT_EQ(res.runs.size(), 5u);
  EXPECT_EQ(res.aggregate.seeds.size(), 5u);
  for (const auto& run : res.runs) {
    EXPECT_EQ(run.report.n_candidates, 5u);
    EXPECT_TRUE(fs::exists(dir / ("seed-" + std::to_string(run.seed)) / "checkpoint.nack"));
  }
  fs::remove_all(dir);
}
