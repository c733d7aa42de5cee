#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroalign/core/types.hpp"
#include "neuroalign/encoders/encoder.hpp"

namespace neuroalign::interpret {

class LayerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Nonnegative electrodes x time attribution.
struct SaliencyMap {
  Tensor values;  // (E, T)
  std::string layer;
  std::string scope;  // "trial:<i>" or "mean:<n>"
};

// Linear resampling of n samples onto m points, endpoints aligned.
inline std::vector<double> resample_linear(const double* src, std::size_t n, std::size_t m) {
  std::vector<double> out(m);
  if (n == 1) {
    std::fill(out.begin(), out.end(), src[0]);
    return out;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = m == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(m - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), n - 2);
    const double f = pos - static_cast<double>(lo);
    out[i] = src[lo] * (1.0 - f) + src[lo + 1] * f;
  }
  return out;
}

// Grad-CAM of one activation map: weights = per-channel mean gradient, cam = ReLU(sum_c w_c A_c),
// then nearest upsampling over height, linear over time, and absolute value.
//   activation, gradient: (C, H, W) for one trial.
inline Tensor grad_cam_map(const double* activation, const double* gradient, std::size_t C, std::size_t H, std::size_t W,
                           std::size_t E, std::size_t T) {
  std::vector<double> weights(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < H * W; ++k) weights[c] += gradient[c * H * W + k];
    weights[c] /= static_cast<double>(H * W);
  }
  std::vector<double> cam(H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < H * W; ++k) cam[k] += weights[c] * activation[c * H * W + k];
  for (double& v : cam) v = std::max(0.0, v);
  Tensor out({E, T});
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t h = H == E ? e : std::min(H - 1, e * H / E);
    const auto row = resample_linear(cam.data() + h * W, W, T);
    for (std::size_t t = 0; t < T; ++t) out[e * T + t] = std::abs(row[t]);
  }
  return out;
}

struct GradCamOptions {
  std::string target_layer;  // empty: the encoder's last convolution before flattening
  std::size_t batch = 32;
};

// One map per trial. The differentiated score is the cosine between the trial's EEG embedding and
// its paired image embedding (row image_ids[i] of `images`).
inline std::vector<SaliencyMap> grad_cam(encoders::EegModel& model, const EEGTrialSet& trials, const EmbeddingMatrix& images,
                                         const GradCamOptions& opt = {}) {
  const std::string layer = opt.target_layer.empty() ? model.encoder().default_target_layer() : opt.target_layer;
  const auto known = model.encoder().layer_names();
  if (std::find(known.begin(), known.end(), layer) == known.end()) {
    std::string list;
    for (const auto& n : known) list += (list.empty() ? "" : ", ") + n;
    throw LayerError("unknown Grad-CAM layer '" + layer + "'; layers: " + list);
  }
  const std::size_t E = trials.n_electrodes(), T = trials.n_timepoints(), d = images.dim();
  std::vector<SaliencyMap> out;
  for (std::size_t start = 0; start < trials.n_trials(); start += opt.batch) {
    const std::size_t stop = std::min(trials.n_trials(), start + opt.batch);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
    // The input needs a gradient so that an "input" tap receives one.
    ag::Var x(encoders::EegModel::batch_input(trials, idx), true);
    std::vector<std::pair<std::string, ag::Var>> taps;
    nn::ForwardContext ctx{false, nullptr, &taps};
    ag::Var emb = model.embed(x, ctx);
    const ag::Var* tap = nullptr;
    for (const auto& [n, v] : taps)
      if (n == layer) tap = &v;
    if (!tap) throw LayerError("layer '" + layer + "' was not reached in the forward pass");
    if (tap->rank() != 4) throw LayerError("layer '" + layer + "' has no spatial extent (shape " + shape_str(tap->shape()) + ")");
    Tensor target({idx.size(), d});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const int id = trials.image_ids[idx[k]];
      if (id < 0 || static_cast<std::size_t>(id) >= images.rows()) throw DataError("trial image id outside the embedding table");
      std::copy_n(images.values.data() + static_cast<std::size_t>(id) * d, d, target.data() + k * d);
    }
    // Trials are independent in inference mode, so one backward over the summed scores gives
    // every trial's own gradient.
    ag::Var score = ag::sum(losses::rowwise_cosine(emb, ag::constant(target)));
    score.backward();
    const Tensor A = tap->value();
    const Tensor G = tap->grad();
    const std::size_t C = A.dim(1), H = A.dim(2), W = A.dim(3), per = C * H * W;
    for (std::size_t k = 0; k < idx.size(); ++k)
      out.push_back({grad_cam_map(A.data() + k * per, G.data() + k * per, C, H, W, E, T), layer, "trial:" + std::to_string(idx[k])});
    model.parameters().zero_grad();
  }
  return out;
}

// Elementwise mean of equally shaped maps.
inline SaliencyMap aggregate_saliency(const std::vector<SaliencyMap>& maps, const std::string& scope = "") {
  if (maps.empty()) throw std::invalid_argument("aggregate_saliency needs at least one map");
  SaliencyMap out{Tensor(maps.front().values.shape(), 0.0), maps.front().layer,
                  scope.empty() ? "mean:" + std::to_string(maps.size()) : scope};
  for (const auto& m : maps) {
    if (m.values.shape() != out.values.shape()) throw ShapeError("aggregate_saliency: map shapes differ");
    for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] += m.values[i];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (double& v : out.values.storage()) v *= inv;
  return out;
}

}  // namespace neuroalign::interpret
