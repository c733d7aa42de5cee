#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroalign/core/config.hpp"
#include "neuroalign/data/array_io.hpp"
#include "neuroalign/data/embeddings.hpp"
#include "neuroalign/data/preprocess.hpp"
#include "neuroalign/data/synthetic.hpp"

namespace neuroalign::data {

namespace fs = std::filesystem;

inline constexpr const char* kDataRootEnv = "NEUROALIGN_DATA_ROOT";

// ---------------------------------------------------------------- layout

inline std::string split_dir(const std::string& root, const std::string& subject, Split split) {
  return (fs::path(root) / subject / to_string(split)).string();
}
inline std::string eeg_path(const std::string& root, const std::string& subject, Split split) {
  return (fs::path(split_dir(root, subject, split)) / "eeg.bin").string();
}
inline std::string labels_path(const std::string& root, const std::string& subject, Split split) {
  return (fs::path(split_dir(root, subject, split)) / "labels.bin").string();
}
inline std::string embeddings_path(const std::string& root, const std::string& provider, Split split) {
  return (fs::path(root) / "embeddings" / provider / (to_string(split) + ".bin")).string();
}
inline std::string raw_dir(const std::string& root, const std::string& subject) {
  return (fs::path(root) / "raw" / subject).string();
}
inline std::string manifest_path(const std::string& root) { return (fs::path(root) / "manifest.json").string(); }

// config.data.root, else the environment variable.
inline std::string resolve_data_root(const ExperimentConfig& c) {
  if (!c.data.root.empty()) return c.data.root;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  throw DataError(std::string("no dataset root: set data.root or ") + kDataRootEnv);
}

// ---------------------------------------------------------------- trial sets on disk

// eeg.bin: (n, E, T) float32; labels.bin: (n, 2) int32 rows of (label, image_id).
inline void save_trial_set(const std::string& eeg_file, const std::string& labels_file, const EEGTrialSet& set) {
  set.validate();
  save_f32(eeg_file, set.data);
  IntArray lab{{set.n_trials(), 2}, {}};
  lab.values.reserve(2 * set.n_trials());
  for (std::size_t i = 0; i < set.n_trials(); ++i) {
    lab.values.push_back(set.labels[i]);
    lab.values.push_back(set.image_ids[i]);
  }
  save_i32(labels_file, lab);
}

inline EEGTrialSet load_trial_set(const std::string& eeg_file, const std::string& labels_file, const std::string& subject,
                                  Split split, double fs) {
  EEGTrialSet set;
  set.data = load_f32(eeg_file);
  IntArray lab = load_i32(labels_file);
  if (set.data.rank() != 3) throw DataError("'" + eeg_file + "' must be (trials, electrodes, time)");
  if (lab.shape.size() != 2 || lab.shape[1] != 2 || lab.shape[0] != set.data.dim(0)) {
    throw DataError("'" + labels_file + "' must be (" + std::to_string(set.data.dim(0)) + ", 2), got " + shape_str(lab.shape));
  }
  for (std::size_t i = 0; i < lab.shape[0]; ++i) {
    set.labels.push_back(lab.values[2 * i]);
    set.image_ids.push_back(lab.values[2 * i + 1]);
  }
  set.subject_id = subject;
  set.split = split;
  set.sampling_rate_hz = fs;
  set.validate();
  return set;
}

// ---------------------------------------------------------------- manifest

struct DatasetManifest {
  std::string root;  // empty: the manifest's directory
  std::vector<std::string> subjects;
  std::size_t n_electrodes = 64;
  double sampling_rate_hz = 250.0;
  double pre_stimulus_ms = 200.0;
  double post_stimulus_ms = 1000.0;
  std::map<std::string, std::size_t> split_trials;  // declared counts after preprocessing; 0 or absent: unchecked
  bool average_train_repetitions = true;
  std::map<std::string, std::vector<std::string>> image_files;  // split -> path per image id
  std::string embedding_provider = "synthetic";
  // Present for synthetic manifests.
  std::optional<SyntheticSpec> synthetic;
  std::uint64_t synthetic_seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"root", root},
                     {"subjects", subjects},
                     {"n_electrodes", n_electrodes},
                     {"sampling_rate_hz", sampling_rate_hz},
                     {"pre_stimulus_ms", pre_stimulus_ms},
                     {"post_stimulus_ms", post_stimulus_ms},
                     {"average_train_repetitions", average_train_repetitions},
                     {"embedding_provider", embedding_provider}};
    nlohmann::json splits = nlohmann::json::object();
    for (const auto& [k, v] : split_trials) splits[k] = {{"n_trials", v}};
    j["splits"] = splits;
    if (!image_files.empty()) j["image_files"] = image_files;
    if (synthetic) {
      j["synthetic"] = synthetic->to_json();
      j["synthetic"]["seed"] = synthetic_seed;
    }
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
      m.root = j.value("root", "");
      m.subjects = j.value("subjects", std::vector<std::string>{});
      m.n_electrodes = j.value("n_electrodes", m.n_electrodes);
      m.sampling_rate_hz = j.value("sampling_rate_hz", m.sampling_rate_hz);
      m.pre_stimulus_ms = j.value("pre_stimulus_ms", m.pre_stimulus_ms);
      m.post_stimulus_ms = j.value("post_stimulus_ms", m.post_stimulus_ms);
      m.average_train_repetitions = j.value("average_train_repetitions", true);
      m.embedding_provider = j.value("embedding_provider", m.embedding_provider);
      if (j.contains("splits"))
        for (const auto& [k, v] : j["splits"].items()) m.split_trials[k] = v.value("n_trials", std::size_t{0});
      if (j.contains("image_files")) m.image_files = j["image_files"].get<std::map<std::string, std::vector<std::string>>>();
      if (j.contains("synthetic")) {
        const auto& s = j["synthetic"];
        SyntheticSpec spec;
        spec.n_classes = s.value("n_classes", spec.n_classes);
        spec.n_test_classes = s.value("n_test_classes", spec.n_test_classes);
        spec.trials_per_class = s.value("trials_per_class", spec.trials_per_class);
        spec.test_trials_per_class = s.value("test_trials_per_class", spec.test_trials_per_class);
        spec.latent_dim = s.value("latent_dim", spec.latent_dim);
        spec.n_electrodes = s.value("n_electrodes", m.n_electrodes);
        spec.n_timepoints = s.value("n_timepoints", ms_to_samples(m.post_stimulus_ms, m.sampling_rate_hz));
        spec.embedding_dim = s.value("embedding_dim", spec.embedding_dim);
        spec.sampling_rate_hz = m.sampling_rate_hz;
        spec.sigma_eeg = s.value("sigma_eeg", spec.sigma_eeg);
        spec.sigma_img = s.value("sigma_img", spec.sigma_img);
        m.synthetic = spec;
        m.synthetic_seed = s.value("seed", std::uint64_t{0});
        if (m.subjects.empty()) m.subjects = {"synthetic"};
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed manifest: ") + e.what());
    }
    if (m.subjects.empty()) throw DataError("manifest lists no subjects");
    return m;
  }
};

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  auto j = nlohmann::json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw DataError("manifest '" + path + "' is not valid JSON");
  DatasetManifest m = DatasetManifest::from_json(j);
  if (m.root.empty()) m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  detail::atomic_write(path, [&](std::ofstream& out) { out << m.to_json().dump(2) << '\n'; });
}

// ---------------------------------------------------------------- prepare

struct PrepareReport {
  std::vector<std::string> written;
  std::vector<std::string> skipped;
};

namespace detail {

inline std::string stamp_path(const std::string& dir) { return (fs::path(dir) / ".prepared").string(); }

inline bool stamp_matches(const std::string& dir, const std::string& stamp, const std::vector<std::string>& outputs) {
  for (const auto& o : outputs)
    if (!fs::exists(o)) return false;
  std::ifstream in(stamp_path(dir));
  std::string have;
  return in && std::getline(in, have) && have == stamp;
}

inline void write_stamp(const std::string& dir, const std::string& stamp) {
  atomic_write(stamp_path(dir), [&](std::ofstream& out) { out << stamp << '\n'; });
}

inline std::string hash_string(const std::string& s) { return hex64(neuroalign::detail::fnv1a(s)); }

}  // namespace detail

// Writes the synthetic fixture described by the manifest; skipped when already up to date.
inline PrepareReport prepare_synthetic(const DatasetManifest& m) {
  PrepareReport rep;
  const std::string subject = m.subjects.front();
  const std::string stamp = detail::hash_string(m.synthetic->to_json().dump() + "|" + std::to_string(m.synthetic_seed) + "|" + subject + "|" + m.embedding_provider);
  const std::vector<std::string> outputs{eeg_path(m.root, subject, Split::kTrain), labels_path(m.root, subject, Split::kTrain),
                                         eeg_path(m.root, subject, Split::kTest), labels_path(m.root, subject, Split::kTest),
                                         embeddings_path(m.root, m.embedding_provider, Split::kTrain),
                                         embeddings_path(m.root, m.embedding_provider, Split::kTest)};
  const std::string dir = (fs::path(m.root) / subject).string();
  if (detail::stamp_matches(dir, stamp, outputs)) {
    rep.skipped = outputs;
    return rep;
  }
  SyntheticDataset ds = generate_synthetic(*m.synthetic, m.synthetic_seed);
  save_trial_set(outputs[0], outputs[1], ds.train);
  save_trial_set(outputs[2], outputs[3], ds.test);
  save_f32(outputs[4], ds.train_images.values);
  save_f32(outputs[5], ds.test_images.values);
  detail::write_stamp(dir, stamp);
  rep.written = outputs;
  return rep;
}

// Baseline-corrects and crops raw trials (root/raw/{subject}/{split}/eeg.bin + labels.bin), averages
// training repetitions, and writes root/{subject}/{split}/. Up-to-date outputs are skipped by content hash.
inline PrepareReport prepare_dataset(const DatasetManifest& m) {
  if (m.synthetic) return prepare_synthetic(m);
  std::vector<std::string> missing;
  for (const auto& s : m.subjects) {
    const std::string dir = raw_dir(m.root, s);
    if (!fs::is_directory(dir)) {
      missing.push_back(dir + " (subject directory)");
      continue;
    }
    for (Split sp : {Split::kTrain, Split::kTest})
      for (const char* f : {"eeg.bin", "labels.bin"}) {
        const auto p = fs::path(dir) / to_string(sp) / f;
        if (!fs::exists(p)) missing.push_back(p.string());
      }
  }
  if (!missing.empty()) {
    std::string msg = "missing raw inputs:";
    for (const auto& p : missing) msg += "\n  " + p;
    throw DataError(msg);
  }
  PrepareReport rep;
  const PreprocessOptions opt{m.pre_stimulus_ms, m.post_stimulus_ms};
  for (const auto& s : m.subjects)
    for (Split sp : {Split::kTrain, Split::kTest}) {
      const auto in_dir = fs::path(raw_dir(m.root, s)) / to_string(sp);
      const std::string in_eeg = (in_dir / "eeg.bin").string(), in_lab = (in_dir / "labels.bin").string();
      const bool average = sp == Split::kTrain && m.average_train_repetitions;
      const std::string stamp = hex64(hash_file(in_eeg, hash_file(in_lab))) + "-" +
                                detail::hash_string(std::to_string(m.pre_stimulus_ms) + "|" + std::to_string(m.post_stimulus_ms) +
                                                    "|" + std::to_string(m.sampling_rate_hz) + "|" + (average ? "avg" : "raw"));
      const std::vector<std::string> outputs{eeg_path(m.root, s, sp), labels_path(m.root, s, sp)};
      const std::string out_dir = split_dir(m.root, s, sp);
      if (detail::stamp_matches(out_dir, stamp, outputs)) {
        rep.skipped.insert(rep.skipped.end(), outputs.begin(), outputs.end());
        continue;
      }
      EEGTrialSet raw = load_trial_set(in_eeg, in_lab, s, sp, m.sampling_rate_hz);
      if (raw.n_electrodes() != m.n_electrodes)
        throw DataError("'" + in_eeg + "' has " + std::to_string(raw.n_electrodes()) + " electrodes, manifest says " +
                        std::to_string(m.n_electrodes));
      EEGTrialSet set = preprocess_trials(raw, opt);
      if (average) set = average_repetitions(set);
      save_trial_set(outputs[0], outputs[1], set);
      detail::write_stamp(out_dir, stamp);
      rep.written.insert(rep.written.end(), outputs.begin(), outputs.end());
    }
  return rep;
}

// ---------------------------------------------------------------- loading for experiments

struct DatasetSplits {
  EEGTrialSet train;
  EEGTrialSet val;
  EEGTrialSet test;
  EmbeddingMatrix train_images;  // row = train image id
  EmbeddingMatrix test_images;   // row = test image id
};

// Class sets of train/val and test must not intersect.
inline void check_zero_shot(const EEGTrialSet& train, const EEGTrialSet& test) {
  std::set<int> tr(train.labels.begin(), train.labels.end());
  std::vector<int> shared;
  for (int l : std::set<int>(test.labels.begin(), test.labels.end()))
    if (tr.count(l)) shared.push_back(l);
  if (!shared.empty())
    throw DataError("train and test share " + std::to_string(shared.size()) + " classes (first: " + std::to_string(shared.front()) +
                    "); zero-shot evaluation needs disjoint classes");
}

// Holds out round(fraction * images) images of every class (at least one when a class has two or
// more images and fraction > 0).
inline std::pair<EEGTrialSet, EEGTrialSet> split_validation(const EEGTrialSet& train, double fraction, std::uint64_t seed) {
  std::map<int, std::vector<int>> images_by_class;
  for (std::size_t i = 0; i < train.n_trials(); ++i) {
    auto& v = images_by_class[train.labels[i]];
    if (std::find(v.begin(), v.end(), train.image_ids[i]) == v.end()) v.push_back(train.image_ids[i]);
  }
  Rng rng = derive_rng(seed, "validation-split");
  std::set<int> held;
  for (auto& [cls, imgs] : images_by_class) {
    if (fraction <= 0 || imgs.size() < 2) continue;
    std::shuffle(imgs.begin(), imgs.end(), rng);
    std::size_t k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(imgs.size())));
    k = std::clamp<std::size_t>(k, 1, imgs.size() - 1);
    held.insert(imgs.begin(), imgs.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::vector<std::size_t> keep, val;
  for (std::size_t i = 0; i < train.n_trials(); ++i) (held.count(train.image_ids[i]) ? val : keep).push_back(i);
  EEGTrialSet a = train.subset(keep), b = train.subset(val);
  b.split = Split::kVal;
  return {a, b};
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const ExperimentConfig& c, const std::string& root, Split split,
                                                        const std::vector<std::string>& image_files = {}) {
  const std::size_t d = static_cast<std::size_t>(c.embedding_dim);
  const auto& kind = c.data.embedding_provider;
  if (kind == "precomputed_file") {
    const std::string path = embeddings_path(root, c.data.provider_name, split);
    if (!fs::exists(path))
      throw DataError("missing image embeddings '" + path + "'; run `neuroalign prepare` or `neuroalign embed` first");
    return std::make_unique<PrecomputedFileProvider>(path, d);
  }
  if (kind == "random_projection_stub") return std::make_unique<RandomProjectionStub>(d, c.data.provider_seed);
  if (kind == "external_encoder")
    return std::make_unique<ExternalEncoderProvider>(c.data.external_command, image_files, d,
                                                     embeddings_path(root, c.data.provider_name, split));
  throw DataError("unknown embedding provider '" + kind + "'");
}

inline EmbeddingMatrix image_table(EmbeddingProvider& p, const EEGTrialSet& set) {
  int max_id = -1;
  for (int id : set.image_ids) max_id = std::max(max_id, id);
  std::vector<int> ids(static_cast<std::size_t>(max_id + 1));
  std::iota(ids.begin(), ids.end(), 0);
  return p.get(ids);
}

// Loads one subject's preprocessed splits and image embeddings, and carves out the validation split.
inline DatasetSplits load_dataset(const ExperimentConfig& c) {
  const std::string root = resolve_data_root(c);
  std::optional<DatasetManifest> manifest;
  if (fs::exists(manifest_path(root))) manifest = load_manifest(manifest_path(root));
  const double fs_hz = manifest ? manifest->sampling_rate_hz : c.data.sampling_rate_hz;
  if (std::abs(fs_hz - c.data.sampling_rate_hz) > 1e-9)
    throw DataError("manifest sampling rate " + std::to_string(fs_hz) + " Hz differs from config " +
                    std::to_string(c.data.sampling_rate_hz) + " Hz");
  const std::string& subject = c.data.subject;
  if (!fs::is_directory(fs::path(root) / subject))
    throw DataError("subject '" + subject + "' not found under '" + root + "'; run `neuroalign prepare` first");
  DatasetSplits out;
  EEGTrialSet train = load_trial_set(eeg_path(root, subject, Split::kTrain), labels_path(root, subject, Split::kTrain), subject,
                                     Split::kTrain, fs_hz);
  out.test = load_trial_set(eeg_path(root, subject, Split::kTest), labels_path(root, subject, Split::kTest), subject,
                            Split::kTest, fs_hz);
  train.baseline_corrected = out.test.baseline_corrected = true;
  if (manifest) {
    for (const auto* set : {&train, &out.test}) {
      auto it = manifest->split_trials.find(to_string(set->split));
      if (it != manifest->split_trials.end() && it->second && it->second != set->n_trials())
        throw DataError("manifest declares " + std::to_string(it->second) + " " + to_string(set->split) + " trials, found " +
                        std::to_string(set->n_trials()));
    }
  }
  const double window_s = c.data.window_ms / 1000.0;
  train.validate(window_s);
  out.test.validate(window_s);
  if (train.n_electrodes() != static_cast<std::size_t>(c.n_electrodes))
    throw DataError("data has " + std::to_string(train.n_electrodes()) + " electrodes, config expects " +
                    std::to_string(c.n_electrodes));
  check_zero_shot(train, out.test);
  std::tie(out.train, out.val) = split_validation(train, c.data.val_fraction, static_cast<std::uint64_t>(c.seed));
  auto files = [&](Split s) {
    if (!manifest) return std::vector<std::string>{};
    auto it = manifest->image_files.find(to_string(s));
    return it == manifest->image_files.end() ? std::vector<std::string>{} : it->second;
  };
  auto train_provider = make_provider(c, root, Split::kTrain, files(Split::kTrain));
  auto test_provider = make_provider(c, root, Split::kTest, files(Split::kTest));
  out.train_images = image_table(*train_provider, train);
  out.test_images = image_table(*test_provider, out.test);
  return out;
}

// In-memory synthetic fixture with the same split structure as load_dataset.
inline DatasetSplits synthetic_splits(const ExperimentConfig& c) {
  SyntheticDataset ds = generate_synthetic(SyntheticSpec::from_config(c), c.synthetic.seed);
  DatasetSplits out;
  check_zero_shot(ds.train, ds.test);
  std::tie(out.train, out.val) = split_validation(ds.train, c.data.val_fraction, static_cast<std::uint64_t>(c.seed));
  out.test = std::move(ds.test);
  out.train_images = std::move(ds.train_images);
  out.test_images = std::move(ds.test_images);
  return out;
}

}  // namespace neuroalign::data
