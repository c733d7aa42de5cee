#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroalign/core/config.hpp"
#include "neuroalign/core/types.hpp"
#include "neuroalign/encoders/attention.hpp"
#include "neuroalign/encoders/graph_attention.hpp"
#include "neuroalign/losses/similarity.hpp"

namespace neuroalign::encoders {

// Everything that determines an encoder's parameter shapes and forward pass.
struct EncoderSpec {
  EncoderKind kind = EncoderKind::kSTConv;
  std::size_t n_electrodes = 64;
  std::size_t n_timepoints = 250;
  std::size_t n_maps = 40;
  std::size_t temporal_kernel = 25;
  std::size_t pool_kernel = 5;
  std::size_t pool_stride = 5;
  double dropout = 0.5;
  double bn_momentum = 0.1;
  std::size_t heads = 5;
  GraphAttentionOptions ga;

  static EncoderSpec from_config(const ExperimentConfig& c) {
    EncoderSpec s;
    s.kind = c.encoder_kind();
    s.n_electrodes = static_cast<std::size_t>(c.n_electrodes);
    s.n_timepoints = static_cast<std::size_t>(c.n_timepoints);
    s.n_maps = static_cast<std::size_t>(c.encoder.n_maps);
    s.temporal_kernel = static_cast<std::size_t>(c.encoder.temporal_kernel);
    s.pool_kernel = static_cast<std::size_t>(c.encoder.pool_kernel);
    s.pool_stride = static_cast<std::size_t>(c.encoder.pool_stride);
    s.dropout = c.encoder.dropout;
    s.bn_momentum = c.encoder.bn_momentum;
    s.heads = static_cast<std::size_t>(c.attention_heads);
    s.ga.leaky_slope = c.encoder.ga_slope;
    s.ga.score = ga_score_from_string(c.encoder.ga_score);
    return s;
  }

  bool has_ga() const { return uses_graph_attention(kind); }
  bool is_nervformer() const { return kind == EncoderKind::kNervFormer || kind == EncoderKind::kNervFormerGA; }
  bool is_stconv() const { return kind == EncoderKind::kSTConv || kind == EncoderKind::kSTConvGA; }

  std::size_t conv_length() const {
    if (temporal_kernel > n_timepoints) throw ShapeError("temporal kernel longer than the trial");
    return n_timepoints - temporal_kernel + 1;
  }
  std::size_t pooled_length() const {
    const std::size_t tc = conv_length();
    if (pool_kernel > tc) throw ShapeError("pooling kernel longer than the convolved trial");
    return (tc - pool_kernel) / pool_stride + 1;
  }
  // Flattened feature width; the fused variant carries both branches plus the attention output.
  std::size_t feature_dim() const { return (is_nervformer() ? 3 : 1) * n_maps * pooled_length(); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"kind", std::string(neuroalign::to_string(kind))},
                     {"n_electrodes", n_electrodes},
                     {"n_timepoints", n_timepoints},
                     {"n_maps", n_maps},
                     {"temporal_kernel", temporal_kernel},
                     {"pool_kernel", pool_kernel},
                     {"pool_stride", pool_stride},
                     {"dropout", dropout},
                     {"bn_momentum", bn_momentum},
                     {"heads", heads},
                     {"feature_dim", feature_dim()},
                     {"activation", "elu"},
                     {"normalization", "batchnorm"}};
    if (has_ga())
      j["graph_attention"] = {{"placement", "electrode_time_plane_before_first_conv"},
                              {"leaky_slope", ga.leaky_slope},
                              {"score", ga.score == GaScore::kInner ? "inner" : "outer"},
                              {"include_self", ga.include_self}};
    if (is_nervformer()) j["fusion"] = "cross_attention(query=STConv, key_value=TSConv) + concat(STConv, TSConv, fused)";
    if (kind == EncoderKind::kTSConvSA) j["self_attention"] = "post_pool_tokens, residual + layernorm, no positional encoding";
    return j;
  }
};

// One convolutional feature extractor. Temporal-first (TSConv) or spatial-first (STConv).
// (B, 1, E, T) -> (B, F, 1, T')
class ConvBranch {
 public:
  ConvBranch() = default;
  ConvBranch(nn::ParameterStore& store, const std::string& name, const EncoderSpec& s, bool spatial_first, Rng& rng)
      : name_(name), spatial_first_(spatial_first), spec_(s) {
    const std::size_t F = s.n_maps, E = s.n_electrodes, k = s.temporal_kernel;
    if (spatial_first) {
      first_ = nn::Conv2d(store, name + ".spatial_conv", 1, F, E, 1, rng);
      second_ = nn::Conv2d(store, name + ".temporal_conv", F, F, 1, k, rng);
    } else {
      first_ = nn::Conv2d(store, name + ".temporal_conv", 1, F, 1, k, rng);
      second_ = nn::Conv2d(store, name + ".spatial_conv", F, F, E, 1, rng);
    }
    bn1_ = nn::BatchNorm2d(store, name + ".bn1", F, s.bn_momentum);
    bn2_ = nn::BatchNorm2d(store, name + ".bn2", F, s.bn_momentum);
  }

  ag::Var operator()(const ag::Var& x, const nn::ForwardContext& ctx) const {
    ag::Var h = ag::elu(bn1_(first_(x), ctx.training));
    ctx.tap(first_layer(), h);
    h = ag::elu(bn2_(second_(h), ctx.training));
    ctx.tap(last_layer(), h);
    h = ag::avg_pool_time(h, spec_.pool_kernel, spec_.pool_stride);
    return ag::dropout(h, spec_.dropout, ctx.rng, ctx.training);
  }

  std::string first_layer() const { return name_ + (spatial_first_ ? ".spatial_conv" : ".temporal_conv"); }
  std::string last_layer() const { return name_ + (spatial_first_ ? ".temporal_conv" : ".spatial_conv"); }

 private:
  std::string name_;
  bool spatial_first_ = false;
  EncoderSpec spec_;
  nn::Conv2d first_, second_;
  nn::BatchNorm2d bn1_, bn2_;
};

// (B, F, 1, T') -> (B, T', F): one token per pooled time step.
inline ag::Var to_tokens(const ag::Var& maps) {
  const std::size_t B = maps.dim(0), F = maps.dim(1), L = maps.dim(3);
  return ag::permute(ag::reshape(maps, {B, F, L}), {0, 2, 1});
}

inline ag::Var flatten(const ag::Var& x) { return ag::reshape(x, {x.dim(0), x.size() / x.dim(0)}); }

// The EEG encoder zoo. Parameters live in the caller's store.
class EegEncoder {
 public:
  EegEncoder(nn::ParameterStore& store, const EncoderSpec& s, Rng& rng) : spec_(s) {
    if (s.has_ga()) ga_ = GraphAttention(store, "ga", s.n_timepoints, s.n_timepoints, rng, s.ga);
    switch (s.kind) {
      case EncoderKind::kTSConv:
      case EncoderKind::kTSConvGA:
        ts_ = ConvBranch(store, "ts", s, false, rng);
        break;
      case EncoderKind::kTSConvSA:
        ts_ = ConvBranch(store, "ts", s, false, rng);
        attn_ = AttentionBlock(store, "sa", s.n_maps, s.heads, rng);
        break;
      case EncoderKind::kSTConv:
      case EncoderKind::kSTConvGA:
        st_ = ConvBranch(store, "st", s, true, rng);
        break;
      case EncoderKind::kNervFormer:
      case EncoderKind::kNervFormerGA:
        st_ = ConvBranch(store, "st", s, true, rng);
        ts_ = ConvBranch(store, "ts", s, false, rng);
        attn_ = AttentionBlock(store, "fusion", s.n_maps, s.heads, rng);
        break;
    }
  }

  // (B, 1, E, T) -> (B, feature_dim)
  ag::Var operator()(const ag::Var& eeg, const nn::ForwardContext& ctx) {
    if (eeg.rank() != 4 || eeg.dim(1) != 1 || eeg.dim(2) != spec_.n_electrodes || eeg.dim(3) != spec_.n_timepoints) {
      throw ShapeError("encoder expects (B, 1, " + std::to_string(spec_.n_electrodes) + ", " +
                       std::to_string(spec_.n_timepoints) + "), got " + shape_str(eeg.shape()));
    }
    ctx.tap("input", eeg);
    ag::Var x = eeg;
    if (spec_.has_ga()) {
      x = ga_(x);
      ctx.tap("ga", x);
    }
    switch (spec_.kind) {
      case EncoderKind::kTSConv:
      case EncoderKind::kTSConvGA:
        return flatten(ts_(x, ctx));
      case EncoderKind::kTSConvSA: {
        ag::Var tokens = attn_(to_tokens(ts_(x, ctx)));
        ctx.tap("sa", tokens);
        return flatten(tokens);
      }
      case EncoderKind::kSTConv:
      case EncoderKind::kSTConvGA:
        return flatten(st_(x, ctx));
      case EncoderKind::kNervFormer:
      case EncoderKind::kNervFormerGA: {
        ag::Var st = st_(x, ctx);
        ag::Var ts = ts_(x, ctx);
        ag::Var fused = attn_(to_tokens(st), to_tokens(ts));
        ctx.tap("fusion", fused);
        return ag::concat({flatten(st), flatten(ts), flatten(fused)}, 1);
      }
    }
    throw std::logic_error("unhandled encoder kind");
  }

  // Last convolution before flattening; the TSConv branch stands in for the fused encoder
  // because its last conv keeps no electrode axis either way.
  std::string default_target_layer() const { return spec_.is_stconv() || spec_.is_nervformer() ? st_.last_layer() : ts_.last_layer(); }

  // Every tap name; "sa" and "fusion" are token sequences without an electrode/time plane.
  std::vector<std::string> layer_names() const {
    std::vector<std::string> names{"input"};
    if (spec_.has_ga()) names.push_back("ga");
    if (spec_.is_stconv() || spec_.is_nervformer()) {
      names.push_back(st_.first_layer());
      names.push_back(st_.last_layer());
    }
    if (!spec_.is_stconv()) {
      names.push_back(ts_.first_layer());
      names.push_back(ts_.last_layer());
    }
    if (spec_.kind == EncoderKind::kTSConvSA) names.push_back("sa");
    if (spec_.is_nervformer()) names.push_back("fusion");
    return names;
  }

  const EncoderSpec& spec() const { return spec_; }
  const GraphAttention& graph_attention_layer() const { return ga_; }
  const AttentionBlock& attention_block() const { return attn_; }

 private:
  EncoderSpec spec_;
  GraphAttention ga_;
  ConvBranch st_, ts_;
  AttentionBlock attn_;
};

// Linear projection to the joint space followed by L2 row normalization.
inline ag::Var project_and_normalize(const ag::Var& features, const nn::Linear& proj) {
  if (features.rank() != 2 || features.dim(1) != proj.in_features()) {
    throw ShapeError("projection expects " + std::to_string(proj.in_features()) + " features, got " +
                     shape_str(features.shape()));
  }
  return losses::row_normalize(proj(features));
}

// Encoder + projection head with its own parameter store. Not copyable: modules share parameter nodes.
class EegModel {
 public:
  EegModel(const EncoderSpec& spec, std::size_t embedding_dim, std::uint64_t seed) : spec_(spec), dim_(embedding_dim) {
    Rng rng = derive_rng(seed, "init");
    encoder_ = std::make_unique<EegEncoder>(store_, spec, rng);
    proj_ = nn::Linear(store_, "proj", spec.feature_dim(), embedding_dim, rng);
  }
  EegModel(const EegModel&) = delete;
  EegModel& operator=(const EegModel&) = delete;

  // (B, 1, E, T) -> unit-norm (B, d)
  ag::Var embed(const ag::Var& eeg, const nn::ForwardContext& ctx) { return project_and_normalize((*encoder_)(eeg, ctx), proj_); }

  // Inference-mode embeddings of every trial, in chunks to bound memory.
  EmbeddingMatrix embed_trials(const EEGTrialSet& trials, std::size_t chunk = 256) {
    const std::size_t n = trials.n_trials(), d = dim_;
    EmbeddingMatrix out{Tensor({n, d}), true};
    nn::ForwardContext ctx;
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t stop = std::min(n, start + chunk);
      std::vector<std::size_t> idx(stop - start);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
      ag::Var e = embed(ag::constant(batch_input(trials, idx)), ctx);
      std::copy(e.value().data(), e.value().data() + e.size(), out.values.data() + start * d);
    }
    return out;
  }

  // Trials at `idx` as a (B, 1, E, T) tensor.
  static Tensor batch_input(const EEGTrialSet& trials, const std::vector<std::size_t>& idx) {
    const std::size_t E = trials.n_electrodes(), T = trials.n_timepoints(), per = E * T;
    Tensor x({idx.size(), 1, E, T});
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(trials.data.data() + idx[k] * per, per, x.data() + k * per);
    return x;
  }

  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  EegEncoder& encoder() { return *encoder_; }
  const nn::Linear& projection() const { return proj_; }
  const EncoderSpec& spec() const { return spec_; }
  std::size_t embedding_dim() const { return dim_; }

 private:
  EncoderSpec spec_;
  std::size_t dim_;
  nn::ParameterStore store_;
  std::unique_ptr<EegEncoder> encoder_;
  nn::Linear proj_;
};

}  // namespace neuroalign::encoders
