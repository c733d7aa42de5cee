#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroalign/core/registry.hpp"

namespace neuroalign {

using json = nlohmann::json;

struct OptimizerConfig {
  double lr = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

struct LossConfig {
  double tau_scale_cap = 100.0;
  bool beta_trainable = true;
  std::optional<double> beta_min = 0.0;
  // "rowwise": mean over rows of cos(E_CS[i], I_CS[i]); "flattened": cos(vec E_CS, vec I_CS).
  std::string sk_mode = "rowwise";
  bool sk_include_diagonal = true;
};

struct EncoderConfig {
  int n_maps = 40;
  int temporal_kernel = 25;
  int pool_kernel = 5;
  int pool_stride = 5;
  double dropout = 0.5;
  double bn_momentum = 0.1;
  double ga_slope = 0.2;
  // "inner": a^T LeakyReLU([W n_i || W n_j]); "outer": LeakyReLU(a^T [W n_i || W n_j]).
  std::string ga_score = "inner";
};

struct DataConfig {
  std::string root;
  std::string subject = "sub-01";
  std::string embedding_provider = "precomputed_file";
  std::string provider_name = "default";
  std::uint64_t provider_seed = 0;
  std::string external_command;
  double val_fraction = 0.1;
  double sampling_rate_hz = 250.0;
  double window_ms = 1000.0;
  double pre_stimulus_ms = 200.0;
  bool average_test_repetitions = true;
};

struct EvalConfig {
  std::vector<int> top_k{1, 5};
  int n_candidates = 0;  // 0: taken from the candidate set at evaluation time
};

struct SyntheticConfig {
  int n_classes = 100;
  int n_test_classes = 20;
  int trials_per_class = 10;
  int test_trials_per_class = 10;
  int latent_dim = 8;
  double sigma_eeg = 0.1;
  double sigma_img = 0.05;
  std::uint64_t seed = 0;
};

struct BandConfig {
  std::string name;
  double lo_hz = 0.0;
  double hi_hz = 0.0;
};

struct InterpretConfig {
  std::string target_layer;  // empty: last convolutional layer before flattening
  double window_ms = 100.0;
  std::string montage;  // empty: built-in layout
  double wavelet_cycles = 7.0;
  std::vector<BandConfig> bands{{"theta", 4.0, 8.0}, {"alpha", 8.0, 13.0}, {"gamma", 30.0, 80.0}};
  int max_trials = 0;  // 0: all test trials
};

struct ExperimentConfig {
  std::string encoder_name = "SK-STConv";
  std::string loss_name;  // empty: the registry entry's loss
  int embedding_dim = 512;
  int n_electrodes = 64;
  int n_timepoints = 250;
  OptimizerConfig optimizer;
  int batch_size = 1000;
  int epochs = 200;
  std::int64_t seed = 0;
  std::vector<std::int64_t> seeds;  // multi-seed runs; empty: {seed}
  double tau_init = std::log(1.0 / 0.07);
  double beta_init = 1.0;
  int attention_heads = 5;
  std::string checkpoint_policy = "best_val";
  LossConfig loss;
  EncoderConfig encoder;
  DataConfig data;
  EvalConfig eval;
  SyntheticConfig synthetic;
  InterpretConfig interpret;

  EncoderKind encoder_kind() const { return resolve_model(encoder_name).eeg_encoder; }
  LossKind loss_kind() const {
    if (loss_name.empty()) return resolve_model(encoder_name).loss;
    return loss_from_string(loss_name).value();
  }
  std::vector<std::int64_t> run_seeds() const { return seeds.empty() ? std::vector<std::int64_t>{seed} : seeds; }
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::runtime_error(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errs) {
    std::string s = "invalid configuration:";
    for (const auto& e : errs) s += "\n  - " + e;
    return s;
  }
  std::vector<std::string> errors_;
};

// ---------------------------------------------------------------- json mapping

inline json to_json(const ExperimentConfig& c) {
  json bands = json::array();
  for (const auto& b : c.interpret.bands) bands.push_back({{"name", b.name}, {"lo_hz", b.lo_hz}, {"hi_hz", b.hi_hz}});
  return {
      {"encoder_name", c.encoder_name},
      {"loss_name", c.loss_name},
      {"embedding_dim", c.embedding_dim},
      {"n_electrodes", c.n_electrodes},
      {"n_timepoints", c.n_timepoints},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"weight_decay", c.optimizer.weight_decay},
        {"eps", c.optimizer.eps}}},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"seeds", c.seeds},
      {"tau_init", c.tau_init},
      {"beta_init", c.beta_init},
      {"attention_heads", c.attention_heads},
      {"checkpoint_policy", c.checkpoint_policy},
      {"loss",
       {{"tau_scale_cap", c.loss.tau_scale_cap},
        {"beta_trainable", c.loss.beta_trainable},
        {"beta_min", c.loss.beta_min ? json(*c.loss.beta_min) : json(nullptr)},
        {"sk_mode", c.loss.sk_mode},
        {"sk_include_diagonal", c.loss.sk_include_diagonal}}},
      {"encoder",
       {{"n_maps", c.encoder.n_maps},
        {"temporal_kernel", c.encoder.temporal_kernel},
        {"pool_kernel", c.encoder.pool_kernel},
        {"pool_stride", c.encoder.pool_stride},
        {"dropout", c.encoder.dropout},
        {"bn_momentum", c.encoder.bn_momentum},
        {"ga_slope", c.encoder.ga_slope},
        {"ga_score", c.encoder.ga_score}}},
      {"data",
       {{"root", c.data.root},
        {"subject", c.data.subject},
        {"embedding_provider", c.data.embedding_provider},
        {"provider_name", c.data.provider_name},
        {"provider_seed", c.data.provider_seed},
        {"external_command", c.data.external_command},
        {"val_fraction", c.data.val_fraction},
        {"sampling_rate_hz", c.data.sampling_rate_hz},
        {"window_ms", c.data.window_ms},
        {"pre_stimulus_ms", c.data.pre_stimulus_ms},
        {"average_test_repetitions", c.data.average_test_repetitions}}},
      {"eval", {{"top_k", c.eval.top_k}, {"n_candidates", c.eval.n_candidates}}},
      {"synthetic",
       {{"n_classes", c.synthetic.n_classes},
        {"n_test_classes", c.synthetic.n_test_classes},
        {"trials_per_class", c.synthetic.trials_per_class},
        {"test_trials_per_class", c.synthetic.test_trials_per_class},
        {"latent_dim", c.synthetic.latent_dim},
        {"sigma_eeg", c.synthetic.sigma_eeg},
        {"sigma_img", c.synthetic.sigma_img},
        {"seed", c.synthetic.seed}}},
      {"interpret",
       {{"target_layer", c.interpret.target_layer},
        {"window_ms", c.interpret.window_ms},
        {"montage", c.interpret.montage},
        {"wavelet_cycles", c.interpret.wavelet_cycles},
        {"bands", bands},
        {"max_trials", c.interpret.max_trials}}},
  };
}

namespace detail {

class JsonReader {
 public:
  JsonReader(const json& j, std::string prefix, std::vector<std::string>& errors)
      : j_(j), prefix_(std::move(prefix)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back((prefix_.empty() ? "config" : prefix_) + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(path(key) + " has the wrong type");
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    if (!j_.at(key).is_number()) {
      errors_.push_back(path(key) + " must be a number or null");
      return;
    }
    out = j_.at(key).get<double>();
  }

  JsonReader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    const json& sub = j_.is_object() && j_.contains(key) && !j_.at(key).is_null() ? j_.at(key) : empty;
    return JsonReader(sub, path(key), errors_);
  }

  void finish() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) errors_.push_back("unknown field '" + path(it.key().c_str()) + "'");
  }

  void mark(const char* key) { seen_.insert(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  bool has(const char* key) const { return j_.is_object() && j_.contains(key) && !j_.at(key).is_null(); }

 private:
  std::string path(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  const json& j_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

}  // namespace detail

// Reads every present field over the defaults; unknown or mistyped fields are collected into errors.
inline ExperimentConfig config_from_json(const json& j, std::vector<std::string>& errors) {
  ExperimentConfig c;
  detail::JsonReader r(j, "", errors);
  r.get("encoder_name", c.encoder_name);
  r.get("loss_name", c.loss_name);
  r.get("embedding_dim", c.embedding_dim);
  r.get("n_electrodes", c.n_electrodes);
  r.get("n_timepoints", c.n_timepoints);
  {
    auto o = r.child("optimizer");
    o.get("lr", c.optimizer.lr);
    o.get("beta1", c.optimizer.beta1);
    o.get("beta2", c.optimizer.beta2);
    o.get("weight_decay", c.optimizer.weight_decay);
    o.get("eps", c.optimizer.eps);
    o.finish();
  }
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("seed", c.seed);
  r.get("seeds", c.seeds);
  r.get("tau_init", c.tau_init);
  r.get("beta_init", c.beta_init);
  r.get("attention_heads", c.attention_heads);
  r.get("checkpoint_policy", c.checkpoint_policy);
  {
    auto l = r.child("loss");
    l.get("tau_scale_cap", c.loss.tau_scale_cap);
    l.get("beta_trainable", c.loss.beta_trainable);
    l.get_optional("beta_min", c.loss.beta_min);
    l.get("sk_mode", c.loss.sk_mode);
    l.get("sk_include_diagonal", c.loss.sk_include_diagonal);
    l.finish();
  }
  {
    auto e = r.child("encoder");
    e.get("n_maps", c.encoder.n_maps);
    e.get("temporal_kernel", c.encoder.temporal_kernel);
    e.get("pool_kernel", c.encoder.pool_kernel);
    e.get("pool_stride", c.encoder.pool_stride);
    e.get("dropout", c.encoder.dropout);
    e.get("bn_momentum", c.encoder.bn_momentum);
    e.get("ga_slope", c.encoder.ga_slope);
    e.get("ga_score", c.encoder.ga_score);
    e.finish();
  }
  {
    auto d = r.child("data");
    d.get("root", c.data.root);
    d.get("subject", c.data.subject);
    d.get("embedding_provider", c.data.embedding_provider);
    d.get("provider_name", c.data.provider_name);
    d.get("provider_seed", c.data.provider_seed);
    d.get("external_command", c.data.external_command);
    d.get("val_fraction", c.data.val_fraction);
    d.get("sampling_rate_hz", c.data.sampling_rate_hz);
    d.get("window_ms", c.data.window_ms);
    d.get("pre_stimulus_ms", c.data.pre_stimulus_ms);
    d.get("average_test_repetitions", c.data.average_test_repetitions);
    d.finish();
  }
  {
    auto e = r.child("eval");
    e.get("top_k", c.eval.top_k);
    e.get("n_candidates", c.eval.n_candidates);
    e.finish();
  }
  {
    auto s = r.child("synthetic");
    s.get("n_classes", c.synthetic.n_classes);
    s.get("n_test_classes", c.synthetic.n_test_classes);
    s.get("trials_per_class", c.synthetic.trials_per_class);
    s.get("test_trials_per_class", c.synthetic.test_trials_per_class);
    s.get("latent_dim", c.synthetic.latent_dim);
    s.get("sigma_eeg", c.synthetic.sigma_eeg);
    s.get("sigma_img", c.synthetic.sigma_img);
    s.get("seed", c.synthetic.seed);
    s.finish();
  }
  {
    auto i = r.child("interpret");
    i.get("target_layer", c.interpret.target_layer);
    i.get("window_ms", c.interpret.window_ms);
    i.get("montage", c.interpret.montage);
    i.get("wavelet_cycles", c.interpret.wavelet_cycles);
    i.get("max_trials", c.interpret.max_trials);
    i.mark("bands");
    if (i.has("bands")) {
      const json& bands = i.raw("bands");
      if (!bands.is_array()) {
        errors.push_back("interpret.bands must be an array");
      } else {
        c.interpret.bands.clear();
        for (const auto& b : bands) {
          if (!b.is_object() || !b.contains("name") || !b.contains("lo_hz") || !b.contains("hi_hz")) {
            errors.push_back("interpret.bands entries need name, lo_hz, hi_hz");
            continue;
          }
          c.interpret.bands.push_back({b["name"].get<std::string>(), b["lo_hz"].get<double>(), b["hi_hz"].get<double>()});
        }
      }
    }
    i.finish();
  }
  r.finish();
  return c;
}

inline std::vector<std::string> config_violations(const ExperimentConfig& c) {
  std::vector<std::string> errs;
  if (!find_model(c.encoder_name))
    errs.push_back("encoder_name '" + c.encoder_name + "' is not a registry key; valid keys: " + registry_keys());
  if (!c.loss_name.empty() && !loss_from_string(c.loss_name))
    errs.push_back("loss_name must be one of {infonce, sk_infonce}, got '" + c.loss_name + "'");
  if (c.embedding_dim <= 0) errs.push_back("embedding_dim must be positive");
  if (c.n_electrodes <= 0) errs.push_back("n_electrodes must be positive");
  if (c.n_timepoints <= 0) errs.push_back("n_timepoints must be positive");
  if (c.batch_size <= 0) errs.push_back("batch_size must be positive");
  if (c.epochs <= 0) errs.push_back("epochs must be positive");
  if (c.attention_heads <= 0) errs.push_back("attention_heads must be positive");
  if (c.optimizer.lr < 0) errs.push_back("optimizer.lr must be nonnegative");
  if (c.optimizer.beta1 < 0 || c.optimizer.beta1 >= 1) errs.push_back("optimizer.beta1 must lie in [0, 1)");
  if (c.optimizer.beta2 < 0 || c.optimizer.beta2 >= 1) errs.push_back("optimizer.beta2 must lie in [0, 1)");
  if (c.optimizer.weight_decay < 0) errs.push_back("optimizer.weight_decay must be nonnegative");
  if (c.optimizer.eps <= 0) errs.push_back("optimizer.eps must be positive");
  if (c.checkpoint_policy != "best_val") errs.push_back("checkpoint_policy must be 'best_val'");
  if (!(c.loss.tau_scale_cap > 0)) errs.push_back("loss.tau_scale_cap must be positive");
  if (c.loss.sk_mode != "rowwise" && c.loss.sk_mode != "flattened")
    errs.push_back("loss.sk_mode must be 'rowwise' or 'flattened'");
  if (c.loss.beta_min && c.beta_init < *c.loss.beta_min) errs.push_back("beta_init is below loss.beta_min");
  if (c.encoder.n_maps <= 0) errs.push_back("encoder.n_maps must be positive");
  if (c.encoder.temporal_kernel <= 0) errs.push_back("encoder.temporal_kernel must be positive");
  if (c.encoder.pool_kernel <= 0 || c.encoder.pool_stride <= 0) errs.push_back("encoder pooling must be positive");
  if (c.encoder.dropout < 0 || c.encoder.dropout >= 1) errs.push_back("encoder.dropout must lie in [0, 1)");
  if (c.encoder.ga_score != "inner" && c.encoder.ga_score != "outer")
    errs.push_back("encoder.ga_score must be 'inner' or 'outer'");
  if (c.n_timepoints > 0 && c.encoder.temporal_kernel > 0 && c.encoder.pool_kernel > 0 &&
      c.n_timepoints - c.encoder.temporal_kernel + 1 < c.encoder.pool_kernel)
    errs.push_back("n_timepoints too short for encoder.temporal_kernel + encoder.pool_kernel");
  if (c.data.val_fraction < 0 || c.data.val_fraction >= 1) errs.push_back("data.val_fraction must lie in [0, 1)");
  if (!(c.data.sampling_rate_hz > 0)) errs.push_back("data.sampling_rate_hz must be positive");
  if (c.data.pre_stimulus_ms < 0) errs.push_back("data.pre_stimulus_ms must be nonnegative");
  if (c.data.sampling_rate_hz > 0 && c.n_timepoints > 0 &&
      std::lround(c.data.sampling_rate_hz * c.data.window_ms / 1000.0) != c.n_timepoints)
    errs.push_back("n_timepoints must equal round(sampling_rate_hz * window_ms / 1000)");
  static const std::set<std::string> providers{"precomputed_file", "external_encoder", "random_projection_stub"};
  if (!providers.count(c.data.embedding_provider))
    errs.push_back("data.embedding_provider must be one of precomputed_file, external_encoder, random_projection_stub");
  if (c.eval.top_k.empty()) errs.push_back("eval.top_k must not be empty");
  for (int k : c.eval.top_k) {
    if (k < 1) errs.push_back("eval.top_k entries must be >= 1");
    if (c.eval.n_candidates > 0 && k > c.eval.n_candidates)
      errs.push_back("eval.top_k entry " + std::to_string(k) + " exceeds eval.n_candidates " +
                     std::to_string(c.eval.n_candidates));
  }
  if (c.eval.n_candidates < 0) errs.push_back("eval.n_candidates must be nonnegative");
  const auto& s = c.synthetic;
  if (s.n_test_classes < 2 || s.n_classes - s.n_test_classes < 2)
    errs.push_back("synthetic.n_classes must leave at least 2 train and 2 test classes");
  if (s.trials_per_class <= 0 || s.test_trials_per_class <= 0) errs.push_back("synthetic trial counts must be positive");
  if (s.latent_dim <= 0 || s.latent_dim > c.embedding_dim) errs.push_back("synthetic.latent_dim must lie in [1, embedding_dim]");
  if (s.sigma_eeg < 0 || s.sigma_img < 0) errs.push_back("synthetic noise levels must be nonnegative");
  if (!(c.interpret.window_ms > 0)) errs.push_back("interpret.window_ms must be positive");
  if (!(c.interpret.wavelet_cycles > 0)) errs.push_back("interpret.wavelet_cycles must be positive");
  for (const auto& b : c.interpret.bands)
    if (!(b.lo_hz > 0 && b.hi_hz > b.lo_hz)) errs.push_back("interpret band '" + b.name + "' has invalid edges");
  return errs;
}

// Fills every unset field with its default and checks internal consistency; throws ConfigError
// carrying the full list of violations.
inline ExperimentConfig validate_config(const json& j) {
  std::vector<std::string> errs;
  ExperimentConfig c = config_from_json(j, errs);
  for (auto& e : config_violations(c)) errs.push_back(std::move(e));
  if (!errs.empty()) throw ConfigError(std::move(errs));
  if (c.loss_name.empty()) c.loss_name = std::string(to_string(resolve_model(c.encoder_name).loss));
  c.loss_name = std::string(to_string(*loss_from_string(c.loss_name)));
  return c;
}

inline ExperimentConfig validate_config(const ExperimentConfig& c) { return validate_config(to_json(c)); }

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

// Applies "a.b.c=value" to a config document. The value is parsed as JSON when possible,
// otherwise taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError({"override '" + assignment + "' is not key=value"});
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    pointer += "/" + key.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  doc[json::json_pointer(pointer)] = value;
}

inline json load_config_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  json doc = json::parse(in, nullptr, false, true);
  if (doc.is_discarded()) throw ConfigError({"config file '" + path + "' is not valid JSON"});
  return doc;
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file '" + path + "'");
  out << to_json(c).dump(2) << '\n';
}

}  // namespace neuroalign
