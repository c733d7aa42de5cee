#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "neuroalign/autograd/ops.hpp"
#include "neuroalign/random.hpp"

namespace neuroalign::nn {

// Ordered, named trainable parameters plus non-trainable buffers (e.g. running statistics).
class ParameterStore {
 public:
  ag::Var add(const std::string& name, Tensor init, bool trainable = true) {
    if (find(name)) throw std::logic_error("duplicate parameter '" + name + "'");
    ag::Var v(std::move(init), trainable);
    params_.emplace_back(name, v);
    return v;
  }

  std::shared_ptr<Tensor> add_buffer(const std::string& name, Tensor init) {
    for (auto& [n, b] : buffers_)
      if (n == name) throw std::logic_error("duplicate buffer '" + name + "'");
    auto b = std::make_shared<Tensor>(std::move(init));
    buffers_.emplace_back(name, b);
    return b;
  }

  const std::vector<std::pair<std::string, ag::Var>>& parameters() const { return params_; }
  const std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>& buffers() const { return buffers_; }

  const ag::Var* find(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return &v;
    return nullptr;
  }

  std::shared_ptr<Tensor> find_buffer(const std::string& name) const {
    for (const auto& [n, b] : buffers_)
      if (n == name) return b;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, v] : params_) v.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t c = 0;
    for (const auto& [n, v] : params_) c += v.size();
    return c;
  }

 private:
  std::vector<std::pair<std::string, ag::Var>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> buffers_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.storage()) v = uniform(rng, -bound, bound);
  return t;
}

// Glorot/Xavier uniform.
inline Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.storage()) v = uniform(rng, -bound, bound);
  return t;
}

// Mode and side channels shared by one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // dropout masks; required when training with dropout > 0
  std::vector<std::pair<std::string, ag::Var>>* taps = nullptr;

  void tap(const std::string& name, const ag::Var& v) const {
    if (taps) taps->emplace_back(name, v);
  }
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true)
      : in_(in), out_(out) {
    W_ = store.add(name + ".weight", uniform_fan_in({out, in}, in, rng));
    if (bias) b_ = store.add(name + ".bias", uniform_fan_in({out}, in, rng));
  }

  // x: (N, in) -> (N, out)
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, W_, b_); }

  // Applies over the last axis of any-rank input.
  ag::Var apply_last(const ag::Var& x) const {
    Shape s = x.shape();
    const std::size_t rows = x.size() / s.back();
    ag::Var y = ag::linear(ag::reshape(x, {rows, s.back()}), W_, b_);
    s.back() = out_;
    return ag::reshape(y, s);
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const ag::Var& weight() const { return W_; }
  const ag::Var& bias() const { return b_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  ag::Var W_, b_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kh,
         std::size_t kw, Rng& rng, bool bias = true) {
    const std::size_t fan_in = in_ch * kh * kw;
    W_ = store.add(name + ".weight", uniform_fan_in({out_ch, in_ch, kh, kw}, fan_in, rng));
    // Zero bias: a zero input maps to a zero output.
    if (bias) b_ = store.add(name + ".bias", Tensor({out_ch}, 0.0));
  }

  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, W_, b_); }
  const ag::Var& weight() const { return W_; }

 private:
  ag::Var W_, b_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore& store, const std::string& name, std::size_t channels, double momentum = 0.1)
      : momentum_(momentum) {
    gamma_ = store.add(name + ".weight", Tensor({channels}, 1.0));
    beta_ = store.add(name + ".bias", Tensor({channels}, 0.0));
    mean_ = store.add_buffer(name + ".running_mean", Tensor({channels}, 0.0));
    var_ = store.add_buffer(name + ".running_var", Tensor({channels}, 1.0));
  }

  ag::Var operator()(const ag::Var& x, bool training) const {
    ag::BatchNormState st{*mean_, *var_};
    ag::Var y = ag::batch_norm(x, gamma_, beta_, st, training, momentum_);
    if (training) {
      *mean_ = std::move(st.running_mean);
      *var_ = std::move(st.running_var);
    }
    return y;
  }

 private:
  double momentum_ = 0.1;
  ag::Var gamma_, beta_;
  std::shared_ptr<Tensor> mean_, var_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t d) {
    gamma_ = store.add(name + ".weight", Tensor({d}, 1.0));
    beta_ = store.add(name + ".bias", Tensor({d}, 0.0));
  }
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm_last(x, gamma_, beta_); }

 private:
  ag::Var gamma_, beta_;
};

}  // namespace neuroalign::nn
