#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroalign/core/config.hpp"
#include "neuroalign/data/array_io.hpp"
#include "neuroalign/encoders/encoder.hpp"
#include "neuroalign/losses/contrastive.hpp"

namespace neuroalign::training {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'N', 'A', 'C', 'K'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Self-describing snapshot: config, encoder description, scalar metadata and every tensor in float64.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ExperimentConfig config;
  int epoch = 0;
  double val_loss = std::numeric_limits<double>::infinity();
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor& at(const std::string& name) const {
    if (const Tensor* t = find(name)) return *t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
  }
};

inline Checkpoint snapshot(const ExperimentConfig& cfg, const encoders::EegModel& model, const losses::LossParams& lp, int epoch,
                           double val_loss) {
  Checkpoint c;
  c.config = cfg;
  c.epoch = epoch;
  c.val_loss = val_loss;
  for (const auto& [n, v] : model.parameters().parameters()) c.tensors.emplace_back(n, v.value());
  for (const auto& [n, b] : model.parameters().buffers()) c.tensors.emplace_back(n, *b);
  c.tensors.emplace_back("loss.tau", lp.tau.value());
  c.tensors.emplace_back("loss.beta", lp.beta.value());
  return c;
}

// Rebuilds the model described by the checkpoint's config and loads its tensors.
inline std::unique_ptr<encoders::EegModel> restore_model(const Checkpoint& c) {
  auto spec = encoders::EncoderSpec::from_config(c.config);
  auto model = std::make_unique<encoders::EegModel>(spec, static_cast<std::size_t>(c.config.embedding_dim),
                                                    static_cast<std::uint64_t>(c.config.seed));
  for (const auto& [n, v] : model->parameters().parameters()) {
    const Tensor& t = c.at(n);
    if (t.shape() != v.shape())
      throw CheckpointError("tensor '" + n + "' has shape " + shape_str(t.shape()) + ", model expects " + shape_str(v.shape()));
    ag::Var(v).mutable_value() = t;
  }
  for (const auto& [n, b] : model->parameters().buffers()) {
    const Tensor& t = c.at(n);
    if (t.shape() != b->shape()) throw CheckpointError("buffer '" + n + "' has the wrong shape");
    *b = t;
  }
  return model;
}

inline losses::LossParams restore_loss_params(const Checkpoint& c) {
  const auto& cfg = c.config;
  auto lp = losses::LossParams::create(c.at("loss.tau").item(), c.at("loss.beta").item(), cfg.loss.tau_scale_cap,
                                       cfg.loss.beta_trainable, cfg.loss.beta_min);
  return lp;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::json header{{"format_version", c.version},
                        {"config", to_json(c.config)},
                        {"encoder", encoders::EncoderSpec::from_config(c.config).to_json()},
                        {"epoch", c.epoch},
                        {"val_loss", c.val_loss},
                        {"metrics", c.metrics}};
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [n, t] : c.tensors) index.push_back({{"name", n}, {"shape", t.shape()}});
  header["tensors"] = index;
  const std::string text = header.dump();
  data::detail::atomic_write(path, [&](std::ofstream& out) {
    out.write(kCheckpointMagic, 4);
    const std::uint32_t v = c.version;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&v), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [n, t] : c.tensors)
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  });
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint '" + path + "'; run `neuroalign train` first");
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("'" + path + "' is not a checkpoint");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  auto header = nlohmann::json::parse(text, nullptr, false);
  if (!in || header.is_discarded()) throw CheckpointError("'" + path + "' has a corrupt header");
  Checkpoint c;
  c.version = version;
  c.config = validate_config(header.at("config"));
  c.epoch = header.at("epoch").get<int>();
  c.val_loss = header.at("val_loss").is_null() ? std::numeric_limits<double>::infinity() : header.at("val_loss").get<double>();
  c.metrics = header.value("metrics", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw CheckpointError("'" + path + "' is truncated");
    c.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

}  // namespace neuroalign::training
