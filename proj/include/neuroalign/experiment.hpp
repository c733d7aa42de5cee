#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neuroalign/data/dataset.hpp"
#include "neuroalign/evaluation/retrieval.hpp"
#include "neuroalign/training/trainer.hpp"

namespace neuroalign {

struct SeedRun {
  std::int64_t seed = 0;
  training::TrainResult train;
  evaluation::AccuracyReport report;
};

struct ExperimentResult {
  std::vector<SeedRun> runs;
  evaluation::AccuracyReport aggregate;
};

struct ExperimentOptions {
  std::string out_dir;  // per-seed metrics and checkpoints under seed-<n>/; empty: memory only
};

// Trains and evaluates once per configured seed, then aggregates.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const data::DatasetSplits& splits,
                                       const ExperimentOptions& opt = {}) {
  ExperimentResult out;
  std::vector<evaluation::AccuracyReport> reports;
  for (std::int64_t seed : cfg.run_seeds()) {
    ExperimentConfig c = cfg;
    c.seed = seed;
    c.seeds.clear();
    training::TrainOptions topt;
    if (!opt.out_dir.empty()) {
      const auto dir = std::filesystem::path(opt.out_dir) / ("seed-" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      topt.metrics_path = (dir / "metrics.jsonl").string();
      topt.checkpoint_path = (dir / "checkpoint.nack").string();
    }
    SeedRun run;
    run.seed = seed;
    run.train = training::train(c, splits.train, splits.val, splits.train_images, topt);
    evaluation::EvalOptions eopt;
    eopt.top_k = c.eval.top_k;
    eopt.average_repetitions = c.data.average_test_repetitions;
    eopt.method = c.encoder_name;
    run.report = evaluation::evaluate_checkpoint(run.train.best, splits.test, splits.test_images, eopt);
    reports.push_back(run.report);
    out.runs.push_back(std::move(run));
  }
  out.aggregate = evaluation::aggregate_seeds(reports);
  return out;
}

}  // namespace neuroalign
