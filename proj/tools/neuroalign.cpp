// neuroalign: command-line front end for data preparation, training, evaluation and saliency maps.

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuroalign/neuroalign.hpp"

using namespace neuroalign;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Upstream artifact missing or out of date.
class StaleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::int64_t> seed;
  std::vector<std::string> overrides;
  bool verbose = false;
  std::vector<std::string> argv;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_hash(const std::string& path) { return data::hex64(data::hash_file(path)); }

ExperimentConfig load_config(const Globals& g) {
  json doc = g.config_path.empty() ? json::object() : load_config_document(g.config_path);
  for (const auto& o : g.overrides) apply_override(doc, o);
  if (g.seed) {
    doc["seed"] = *g.seed;
    doc["seeds"] = json::array();
  }
  return validate_config(doc);
}

// Exclusive lock on the output directory. A lock left by a dead process is taken over.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_((fs::path(dir) / ".lock").string()) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        if (::write(fd, pid.data(), pid.size()) < 0) log_warning("could not record pid in " + path_);
        ::close(fd);
        held_ = true;
        return;
      }
      long owner = 0;
      std::ifstream(path_) >> owner;
      if (owner > 0 && ::kill(static_cast<pid_t>(owner), 0) == 0)
        throw LockError("output directory is locked by process " + std::to_string(owner) + " (" + path_ + ")");
      log_warning("removing stale lock " + path_);
      fs::remove(path_);
    }
    throw LockError("could not acquire " + path_);
  }
  ~DirLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  bool held_ = false;
};

// One run-<command>.json per invocation: what ran, with which configuration, and what it read and wrote.
class RunRecord {
 public:
  RunRecord(const Globals& g, std::string command)
      : g_(g), command_(std::move(command)), started_(utc_now()), t0_(std::chrono::steady_clock::now()) {
    fs::create_directories(g.out_dir);
    lock_.emplace(g.out_dir);
  }

  void set_config(const ExperimentConfig& c) {
    rec_["config"] = to_json(c);
    rec_["seeds"] = c.run_seeds();
  }
  void input(const std::string& path) { rec_["inputs"][path] = file_hash(path); }
  void inputs(const json& hashes) {
    for (auto it = hashes.begin(); it != hashes.end(); ++it) rec_["inputs"][it.key()] = it.value();
  }
  void artifact(const std::string& path) { rec_["artifacts"][path] = file_hash(path); }
  json& extra() { return rec_["result"]; }

  void write() {
    rec_["command"] = command_;
    rec_["argv"] = g_.argv;
    rec_["config_path"] = g_.config_path;
    rec_["overrides"] = g_.overrides;
    rec_["started_at"] = started_;
    rec_["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    if (!rec_.contains("inputs")) rec_["inputs"] = json::object();
    if (!rec_.contains("artifacts")) rec_["artifacts"] = json::object();
    const std::string path = (fs::path(g_.out_dir) / ("run-" + command_ + ".json")).string();
    data::detail::atomic_write(path, [&](std::ofstream& out) { out << rec_.dump(2) << '\n'; });
  }

 private:
  const Globals& g_;
  std::string command_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
  std::optional<DirLock> lock_;
  json rec_ = json::object();
};

void write_text(const std::string& path, const std::string& text) {
  data::detail::atomic_write(path, [&](std::ofstream& out) { out << text; });
}

std::string out_path(const Globals& g, const std::string& name) { return (fs::path(g.out_dir) / name).string(); }

// Hashes of the prepared files a training run reads.
json dataset_inputs(const ExperimentConfig& c) {
  const std::string root = data::resolve_data_root(c);
  json h = json::object();
  auto add = [&](const std::string& p) {
    if (fs::exists(p)) h[p] = file_hash(p);
  };
  for (Split s : {Split::kTrain, Split::kTest}) {
    add(data::eeg_path(root, c.data.subject, s));
    add(data::labels_path(root, c.data.subject, s));
    if (c.data.embedding_provider != "random_projection_stub") add(data::embeddings_path(root, c.data.provider_name, s));
  }
  return h;
}

// Refuses a checkpoint whose training inputs changed after it was written.
void check_fresh(const std::string& checkpoint) {
  const fs::path dir = fs::path(checkpoint).parent_path();
  for (const fs::path& cand : {dir / "run-train.json", dir.parent_path() / "run-train.json"}) {
    if (!fs::exists(cand)) continue;
    std::ifstream in(cand);
    const json rec = json::parse(in, nullptr, false);
    if (rec.is_discarded() || !rec.contains("inputs")) return;
    for (auto it = rec["inputs"].begin(); it != rec["inputs"].end(); ++it) {
      if (!fs::exists(it.key()))
        throw StaleError("'" + it.key() + "' used to train " + checkpoint + " no longer exists; rerun `neuroalign prepare` and `neuroalign train`");
      if (file_hash(it.key()) != it.value().get<std::string>())
        throw StaleError("'" + it.key() + "' changed after " + checkpoint + " was trained; rerun `neuroalign train`");
    }
    return;
  }
}

training::Checkpoint open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw StaleError("missing checkpoint '" + path + "'; run `neuroalign train` first");
  check_fresh(path);
  return training::load_checkpoint(path);
}

data::DatasetSplits load_splits(const ExperimentConfig& c, bool synthetic) {
  return synthetic ? data::synthetic_splits(c) : data::load_dataset(c);
}

std::vector<std::string> default_checkpoints(const Globals& g, const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (auto s : c.run_seeds()) out.push_back((fs::path(g.out_dir) / ("seed-" + std::to_string(s)) / "checkpoint.nack").string());
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_prepare(const Globals& g, std::string manifest) {
  const ExperimentConfig cfg = load_config(g);
  if (manifest.empty()) manifest = data::manifest_path(data::resolve_data_root(cfg));
  if (!fs::exists(manifest))
    throw DataError("no manifest at '" + manifest + "'; write one or run `neuroalign synth --write-data`");
  RunRecord run(g, "prepare");
  const data::DatasetManifest m = data::load_manifest(manifest);
  run.input(manifest);
  const data::PrepareReport rep = data::prepare_dataset(m);
  for (const auto& f : rep.written) run.artifact(f);
  for (const auto& f : rep.skipped) run.artifact(f);
  run.extra() = {{"written", rep.written}, {"skipped", rep.skipped}};
  run.write();
  std::cout << "prepared " << m.subjects.size() << " subject(s) under " << m.root << ": " << rep.written.size() << " written, "
            << rep.skipped.size() << " up to date\n";
  return 0;
}

int cmd_synth(const Globals& g, bool write_data) {
  const ExperimentConfig cfg = load_config(g);
  RunRecord run(g, "synth");
  run.set_config(cfg);
  if (write_data) {
    const std::string root = data::resolve_data_root(cfg);
    data::DatasetManifest m;
    m.root = root;
    m.subjects = {cfg.data.subject};
    m.n_electrodes = static_cast<std::size_t>(cfg.n_electrodes);
    m.sampling_rate_hz = cfg.data.sampling_rate_hz;
    m.pre_stimulus_ms = cfg.data.pre_stimulus_ms;
    m.post_stimulus_ms = cfg.data.window_ms;
    m.embedding_provider = cfg.data.provider_name;
    m.synthetic = data::SyntheticSpec::from_config(cfg);
    m.synthetic_seed = cfg.synthetic.seed;
    fs::create_directories(root);
    data::save_manifest(m, data::manifest_path(root));
    run.artifact(data::manifest_path(root));
    std::cout << "wrote " << data::manifest_path(root) << "; run `neuroalign prepare` to materialize it\n";
    run.write();
    return 0;
  }
  const data::DatasetSplits splits = data::synthetic_splits(cfg);
  ExperimentOptions opt;
  opt.out_dir = g.out_dir;
  const ExperimentResult res = run_experiment(cfg, splits, opt);
  json runs = json::array();
  for (const auto& r : res.runs) {
    const auto dir = fs::path(g.out_dir) / ("seed-" + std::to_string(r.seed));
    run.artifact((dir / "metrics.jsonl").string());
    run.artifact((dir / "checkpoint.nack").string());
    runs.push_back({{"checkpoint", (dir / "checkpoint.nack").string()}, {"report", r.report.to_json()}});
  }
  const json report{{"aggregates", json::array({res.aggregate.to_json()})}, {"runs", runs}};
  write_text(out_path(g, "report.json"), report.dump(2) + "\n");
  const std::string table = evaluation::render_table({res.aggregate}, cfg.eval.top_k);
  write_text(out_path(g, "table.md"), table);
  run.artifact(out_path(g, "report.json"));
  run.artifact(out_path(g, "table.md"));
  run.write();
  std::cout << table;
  return 0;
}

int cmd_embed(const Globals& g, const std::vector<std::string>& split_names, bool force) {
  const ExperimentConfig cfg = load_config(g);
  const std::string root = data::resolve_data_root(cfg);
  std::optional<data::DatasetManifest> manifest;
  if (fs::exists(data::manifest_path(root))) manifest = data::load_manifest(data::manifest_path(root));
  RunRecord run(g, "embed");
  run.set_config(cfg);
  json result = json::object();
  for (const auto& name : split_names) {
    const Split split = name == "train" ? Split::kTrain : name == "test" ? Split::kTest
                                                                        : throw std::invalid_argument("unknown split '" + name + "'");
    const std::string labels = data::labels_path(root, cfg.data.subject, split);
    if (!fs::exists(labels)) throw DataError("missing '" + labels + "'; run `neuroalign prepare` first");
    run.input(labels);
    const data::IntArray lab = data::load_i32(labels);
    int max_id = -1;
    for (std::size_t i = 1; i < lab.values.size(); i += 2) max_id = std::max(max_id, static_cast<int>(lab.values[i]));
    std::vector<int> ids(static_cast<std::size_t>(max_id + 1));
    std::iota(ids.begin(), ids.end(), 0);
    const std::string target = data::embeddings_path(root, cfg.data.provider_name, split);
    const auto& kind = cfg.data.embedding_provider;
    std::string action;
    if (kind == "random_projection_stub" && fs::exists(target) && !force) {
      action = "kept";
    } else {
      std::vector<std::string> files;
      if (manifest && manifest->image_files.count(name)) files = manifest->image_files.at(name);
      auto provider = data::make_provider(cfg, root, split, files);
      const EmbeddingMatrix m = provider->get(ids);
      if (kind == "random_projection_stub") {
        fs::create_directories(fs::path(target).parent_path());
        data::save_f32(target, m.values);
        action = "written";
      } else {
        action = kind == "precomputed_file" ? "verified" : "encoded";
      }
    }
    run.artifact(target);
    result[name] = {{"path", target}, {"images", ids.size()}, {"action", action}};
    std::cout << name << ": " << ids.size() << " image embeddings " << action << " at " << target << '\n';
  }
  run.extra() = result;
  run.write();
  return 0;
}

int cmd_train(const Globals& g, const std::string& metrics, const std::string& checkpoint, bool synthetic) {
  const ExperimentConfig cfg = load_config(g);
  const auto seeds = cfg.run_seeds();
  if ((!metrics.empty() || !checkpoint.empty()) && seeds.size() != 1)
    throw std::invalid_argument("--metrics/--checkpoint need a single seed; pass --seed");
  RunRecord run(g, "train");
  run.set_config(cfg);
  const data::DatasetSplits splits = load_splits(cfg, synthetic);
  if (!synthetic) run.inputs(dataset_inputs(cfg));
  save_config(cfg, out_path(g, "config.json"));
  run.artifact(out_path(g, "config.json"));
  json result = json::array();
  for (auto seed : seeds) {
    ExperimentConfig c = cfg;
    c.seed = seed;
    c.seeds.clear();
    const auto dir = fs::path(g.out_dir) / ("seed-" + std::to_string(seed));
    training::TrainOptions opt;
    opt.metrics_path = metrics.empty() ? (dir / "metrics.jsonl").string() : metrics;
    opt.checkpoint_path = checkpoint.empty() ? (dir / "checkpoint.nack").string() : checkpoint;
    for (const auto& p : {opt.metrics_path, opt.checkpoint_path})
      if (auto parent = fs::path(p).parent_path(); !parent.empty()) fs::create_directories(parent);
    log_info("training " + c.encoder_name + " seed " + std::to_string(seed));
    const training::TrainResult tr = training::train(c, splits.train, splits.val, splits.train_images, opt);
    run.artifact(opt.metrics_path);
    run.artifact(opt.checkpoint_path);
    result.push_back({{"seed", seed},
                      {"checkpoint", opt.checkpoint_path},
                      {"best_epoch", tr.best.epoch},
                      {"val_loss", tr.best.val_loss},
                      {"final_train_loss", tr.epochs.empty() ? 0.0 : tr.epochs.back().train_loss}});
    std::cout << "seed " << seed << ": best epoch " << tr.best.epoch << ", val loss " << tr.best.val_loss << " -> "
              << opt.checkpoint_path << '\n';
  }
  run.extra() = result;
  run.write();
  return 0;
}

int cmd_eval(const Globals& g, std::vector<std::string> checkpoints, bool per_trial, bool synthetic) {
  const ExperimentConfig cfg = load_config(g);
  if (checkpoints.empty()) checkpoints = default_checkpoints(g, cfg);
  RunRecord run(g, "eval");
  run.set_config(cfg);
  std::map<std::string, data::DatasetSplits> cache;  // one load per data identity
  std::map<std::string, std::vector<evaluation::AccuracyReport>> by_method;
  std::vector<std::string> order;
  json runs = json::array();
  for (const auto& path : checkpoints) {
    const training::Checkpoint ck = open_checkpoint(path);
    run.input(path);
    const ExperimentConfig& c = ck.config;
    const std::string key = synthetic ? to_json(c)["synthetic"].dump() + c.data.subject + std::to_string(c.seed)
                                      : data::resolve_data_root(c) + "|" + c.data.subject + "|" + c.data.provider_name;
    if (!cache.count(key)) cache.emplace(key, load_splits(c, synthetic));
    const auto& splits = cache.at(key);
    auto evaluate = [&](bool average, const std::string& suffix) {
      evaluation::EvalOptions opt;
      opt.top_k = c.eval.top_k;
      opt.average_repetitions = average;
      opt.method = c.encoder_name + suffix;
      auto rep = evaluation::evaluate_checkpoint(ck, splits.test, splits.test_images, opt);
      if (!by_method.count(opt.method)) order.push_back(opt.method);
      by_method[opt.method].push_back(rep);
      runs.push_back({{"checkpoint", path}, {"report", rep.to_json()}});
    };
    evaluate(c.data.average_test_repetitions, "");
    if (per_trial && c.data.average_test_repetitions) evaluate(false, " (per-trial)");
  }
  std::vector<evaluation::AccuracyReport> aggregates;
  json agg = json::array();
  for (const auto& m : order) {
    aggregates.push_back(evaluation::aggregate_seeds(by_method.at(m)));
    agg.push_back(aggregates.back().to_json());
  }
  write_text(out_path(g, "report.json"), json{{"aggregates", agg}, {"runs", runs}}.dump(2) + "\n");
  const std::string table = evaluation::render_table(aggregates, cfg.eval.top_k);
  write_text(out_path(g, "table.md"), table);
  run.artifact(out_path(g, "report.json"));
  run.artifact(out_path(g, "table.md"));
  run.write();
  std::cout << table;
  return 0;
}

int cmd_interpret(const Globals& g, std::string checkpoint, std::string layer, int max_trials, bool synthetic) {
  const ExperimentConfig cfg = load_config(g);
  if (checkpoint.empty()) checkpoint = default_checkpoints(g, cfg).front();
  RunRecord run(g, "interpret");
  run.set_config(cfg);
  const training::Checkpoint ck = open_checkpoint(checkpoint);
  run.input(checkpoint);
  const data::DatasetSplits splits = load_splits(ck.config, synthetic);
  EEGTrialSet set = ck.config.data.average_test_repetitions ? data::average_repetitions(splits.test) : splits.test;
  if (max_trials <= 0) max_trials = cfg.interpret.max_trials;
  if (max_trials > 0 && static_cast<std::size_t>(max_trials) < set.n_trials()) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(max_trials));
    std::iota(idx.begin(), idx.end(), 0);
    set = set.subset(idx);
  }
  auto model = training::restore_model(ck);
  interpret::GradCamOptions opt;
  opt.target_layer = layer.empty() ? cfg.interpret.target_layer : layer;
  const auto maps = interpret::grad_cam(*model, set, splits.test_images, opt);
  const interpret::SaliencyMap mean = interpret::aggregate_saliency(maps);

  const std::size_t E = mean.values.dim(0), T = mean.values.dim(1);
  const interpret::Montage montage =
      cfg.interpret.montage.empty() ? interpret::builtin_montage(E) : interpret::load_montage(cfg.interpret.montage);
  const fs::path dir = fs::path(g.out_dir) / "interpret";
  fs::create_directories(dir);
  auto emit = [&](const std::string& name) {
    const std::string p = (dir / name).string();
    run.artifact(p);
    return p;
  };

  data::save_f32((dir / "saliency.f32").string(), mean.values);
  emit("saliency.f32");
  const double hi = *std::max_element(mean.values.data(), mean.values.data() + mean.values.size());
  interpret::write_png((dir / "saliency.png").string(),
                       interpret::render_heatmap(std::vector<double>(mean.values.data(), mean.values.data() + E * T), E, T, 2, 6, 0.0, hi));
  emit("saliency.png");

  const auto tw = interpret::topomap_windows(mean, set.sampling_rate_hz, cfg.interpret.window_ms, montage);
  interpret::render_topomaps((dir / "topomaps.png").string(), tw, montage);
  data::save_f32((dir / "topomaps.f32").string(), tw.values);
  emit("topomaps.png");
  emit("topomaps.f32");

  auto bands = interpret::bands_from_config(cfg.interpret);
  if (bands.empty()) bands = interpret::default_bands();
  const auto tf = interpret::time_frequency_map(mean.values, bands, set.sampling_rate_hz, cfg.interpret.wavelet_cycles, &montage);
  interpret::render_time_frequency((dir / "time_frequency.png").string(), tf);
  data::save_f32((dir / "time_frequency.f32").string(), tf.power);
  emit("time_frequency.png");
  emit("time_frequency.f32");

  json band_means = json::object();
  for (std::size_t gi = 0; gi < tf.groups.size(); ++gi) {
    const auto v = interpret::band_means(tf, gi);
    for (std::size_t b = 0; b < tf.bands.size(); ++b) band_means[tf.groups[gi]][tf.bands[b]] = v[b];
  }
  const json summary{{"checkpoint", checkpoint},
                     {"layer", mean.layer},
                     {"scope", mean.scope},
                     {"n_trials", set.n_trials()},
                     {"electrodes", montage.names},
                     {"topomaps",
                      {{"n_windows", tw.n_windows()},
                       {"window_ms", tw.window_ms},
                       {"window_samples", tw.window_samples},
                       {"dropped_samples", tw.dropped_samples}}},
                     {"band_groups", tf.groups},
                     {"band_means", band_means}};
  write_text((dir / "interpret.json").string(), summary.dump(2) + "\n");
  emit("interpret.json");
  run.extra() = summary;
  run.write();
  std::cout << "layer " << mean.layer << " over " << set.n_trials() << " trials: " << tw.n_windows() << " topomap windows of "
            << tw.window_ms << " ms -> " << dir.string() << '\n';
  return 0;
}

std::vector<evaluation::AccuracyReport> read_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StaleError("missing report '" + path + "'; run `neuroalign eval` first");
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("'" + path + "' is not valid JSON");
  std::vector<evaluation::AccuracyReport> out;
  const json& list = j.is_array() ? j : j.contains("aggregates") ? j["aggregates"] : json::array({j});
  for (const auto& r : list) out.push_back(evaluation::AccuracyReport::from_json(r));
  return out;
}

int cmd_table(const Globals& g, const std::vector<std::string>& reports) {
  const ExperimentConfig cfg = load_config(g);
  RunRecord run(g, "table");
  std::vector<evaluation::AccuracyReport> all;
  for (const auto& p : reports) {
    auto r = read_reports(p);
    run.input(p);
    all.insert(all.end(), r.begin(), r.end());
  }
  const std::string table = evaluation::render_table(all, cfg.eval.top_k);
  write_text(out_path(g, "table.md"), table);
  run.artifact(out_path(g, "table.md"));
  run.write();
  std::cout << table;
  return 0;
}

int report_error(const std::string& command, const std::string& type, const std::string& message, int code,
                 const json& details = nullptr) {
  json err{{"error", {{"type", type}, {"message", message}, {"command", command}, {"exit_code", code}}}};
  if (!details.is_null()) err["error"]["details"] = details;
  std::cerr << err.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  g.argv.assign(argv, argv + argc);
  CLI::App app{"EEG-to-image contrastive alignment: prepare, train, evaluate, interpret"};
  app.require_subcommand(1);
  app.add_option("--config", g.config_path, "experiment configuration (JSON)");
  app.add_option("--out", g.out_dir, "output directory for checkpoints, reports and run records")->capture_default_str();
  app.add_option("--seed", g.seed, "run a single seed (replaces any seed list)");
  app.add_option("--override", g.overrides, "dotted config assignment, e.g. optimizer.lr=1e-3 (repeatable)");
  app.add_flag("-v,--verbose", g.verbose, "progress messages on stderr");

  std::string manifest;
  auto* prepare = app.add_subcommand("prepare", "preprocess raw EEG (or generate the synthetic fixture) under the data root");
  prepare->add_option("--manifest", manifest, "dataset manifest (default: <data root>/manifest.json)");

  bool write_data = false;
  auto* synth = app.add_subcommand("synth", "train and evaluate every seed on the in-memory synthetic fixture");
  synth->add_flag("--write-data", write_data, "instead write a synthetic manifest under the data root for `prepare`");

  std::vector<std::string> splits{"train", "test"};
  bool force = false;
  auto* embed = app.add_subcommand("embed", "materialize or verify image embeddings for the prepared splits");
  embed->add_option("--split", splits, "splits to embed")->capture_default_str();
  embed->add_flag("--force", force, "rewrite existing stub embeddings");

  std::string metrics, checkpoint_out;
  bool train_synthetic = false;
  auto* train = app.add_subcommand("train", "train one model per seed; best-validation checkpoint under <out>/seed-<n>/");
  train->add_option("--metrics", metrics, "per-step JSONL path (single seed)");
  train->add_option("--checkpoint", checkpoint_out, "checkpoint path (single seed)");
  train->add_flag("--synthetic", train_synthetic, "use the in-memory synthetic fixture instead of the data root");

  std::vector<std::string> eval_ckpts;
  bool per_trial = false, eval_synthetic = false;
  auto* eval = app.add_subcommand("eval", "zero-shot top-k retrieval on the test split, aggregated over seeds");
  eval->add_option("--checkpoint", eval_ckpts, "checkpoints (default: <out>/seed-<n>/checkpoint.nack per seed)");
  eval->add_flag("--per-trial", per_trial, "also report accuracy on single trials without repetition averaging");
  eval->add_flag("--synthetic", eval_synthetic, "regenerate the in-memory synthetic fixture from each checkpoint's config");

  std::string interp_ckpt, layer;
  int max_trials = 0;
  bool interp_synthetic = false;
  auto* interp = app.add_subcommand("interpret", "Grad-CAM saliency, scalp topomaps and band-power maps");
  interp->add_option("--checkpoint", interp_ckpt, "checkpoint (default: first seed under <out>)");
  interp->add_option("--layer", layer, "target layer (default: last convolution before flattening)");
  interp->add_option("--max-trials", max_trials, "limit the number of test trials");
  interp->add_flag("--synthetic", interp_synthetic, "regenerate the in-memory synthetic fixture");

  std::vector<std::string> reports;
  auto* table = app.add_subcommand("table", "render a subject x method accuracy table from report files");
  table->add_option("--reports", reports, "report.json files from `eval` or `synth`")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::string command = "neuroalign";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(command, "usage", e.what(), 2);
  }
  set_log_level(g.verbose ? LogLevel::kInfo : LogLevel::kWarn);
  command = app.get_subcommands().front()->get_name();

  try {
    if (*prepare) return cmd_prepare(g, manifest);
    if (*synth) return cmd_synth(g, write_data);
    if (*embed) return cmd_embed(g, splits, force);
    if (*train) return cmd_train(g, metrics, checkpoint_out, train_synthetic);
    if (*eval) return cmd_eval(g, eval_ckpts, per_trial, eval_synthetic);
    if (*interp) return cmd_interpret(g, interp_ckpt, layer, max_trials, interp_synthetic);
    if (*table) return cmd_table(g, reports);
  } catch (const ConfigError& e) {
    return report_error(command, "config", e.what(), 2, e.errors());
  } catch (const interpret::MontageError& e) {
    return report_error(command, "config", e.what(), 2);
  } catch (const LockError& e) {
    return report_error(command, "lock", e.what(), 4);
  } catch (const StaleError& e) {
    return report_error(command, "stale_or_missing_artifact", e.what(), 3);
  } catch (const training::CheckpointError& e) {
    return report_error(command, "checkpoint", e.what(), 3);
  } catch (const DataError& e) {
    return report_error(command, "data", e.what(), 3);
  } catch (const std::invalid_argument& e) {
    return report_error(command, "invalid_argument", e.what(), 2);
  } catch (const std::exception& e) {
    return report_error(command, "internal", e.what(), 1);
  }
  return 1;
}
