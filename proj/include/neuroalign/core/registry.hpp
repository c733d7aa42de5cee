#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace neuroalign {

enum class EncoderKind { kTSConv, kTSConvSA, kTSConvGA, kSTConv, kSTConvGA, kNervFormer, kNervFormerGA };
enum class LossKind { kInfoNce, kSkInfoNce };

inline constexpr std::array<std::pair<EncoderKind, std::string_view>, 7> kEncoderNames{{
    {EncoderKind::kTSConv, "TSConv"},
    {EncoderKind::kTSConvSA, "TSConv-SA"},
    {EncoderKind::kTSConvGA, "TSConv-GA"},
    {EncoderKind::kSTConv, "STConv"},
    {EncoderKind::kSTConvGA, "STConv-GA"},
    {EncoderKind::kNervFormer, "NervFormer"},
    {EncoderKind::kNervFormerGA, "NervFormer-GA"},
}};

inline std::string_view to_string(EncoderKind k) {
  for (auto [kind, name] : kEncoderNames)
    if (kind == k) return name;
  return "?";
}

inline std::optional<EncoderKind> encoder_from_string(std::string_view s) {
  for (auto [kind, name] : kEncoderNames)
    if (name == s) return kind;
  return std::nullopt;
}

inline std::string_view to_string(LossKind k) { return k == LossKind::kInfoNce ? "infonce" : "sk_infonce"; }

inline std::optional<LossKind> loss_from_string(std::string_view s) {
  if (s == "infonce" || s == "InfoNCE") return LossKind::kInfoNce;
  if (s == "sk_infonce" || s == "SK-InfoNCE") return LossKind::kSkInfoNce;
  return std::nullopt;
}

inline bool uses_graph_attention(EncoderKind k) {
  return k == EncoderKind::kTSConvGA || k == EncoderKind::kSTConvGA || k == EncoderKind::kNervFormerGA;
}

struct ModelRegistryEntry {
  std::string_view name;
  EncoderKind eeg_encoder;
  LossKind loss;
};

// Named methods: temporal-spatial baselines, then the spatial-temporal family with and without
// the similarity-keeping term.
inline constexpr std::array<ModelRegistryEntry, 11> kModelRegistry{{
    {"TSConv", EncoderKind::kTSConv, LossKind::kInfoNce},
    {"TSConv-SA", EncoderKind::kTSConvSA, LossKind::kInfoNce},
    {"TSConv-GA", EncoderKind::kTSConvGA, LossKind::kInfoNce},
    {"STConv", EncoderKind::kSTConv, LossKind::kInfoNce},
    {"STConv-GA", EncoderKind::kSTConvGA, LossKind::kInfoNce},
    {"Nerv", EncoderKind::kNervFormer, LossKind::kInfoNce},
    {"Nerv-GA", EncoderKind::kNervFormerGA, LossKind::kInfoNce},
    {"SK-STConv", EncoderKind::kSTConv, LossKind::kSkInfoNce},
    {"SK-STConv-GA", EncoderKind::kSTConvGA, LossKind::kSkInfoNce},
    {"SK-Nerv", EncoderKind::kNervFormer, LossKind::kSkInfoNce},
    {"SK-Nerv-GA", EncoderKind::kNervFormerGA, LossKind::kSkInfoNce},
}};

class UnknownModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string registry_keys() {
  std::string keys;
  for (const auto& e : kModelRegistry) {
    if (!keys.empty()) keys += ", ";
    keys += e.name;
  }
  return keys;
}

inline const ModelRegistryEntry* find_model(std::string_view name) {
  for (const auto& e : kModelRegistry)
    if (e.name == name) return &e;
  return nullptr;
}

inline const ModelRegistryEntry& resolve_model(std::string_view name) {
  if (const auto* e = find_model(name)) return *e;
  throw UnknownModelError("unknown model '" + std::string(name) + "'; valid keys: " + registry_keys());
}

}  // namespace neuroalign
