#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "neuroalign/autograd/var.hpp"
#include "neuroalign/core/config.hpp"

namespace neuroalign::training {

// Adam with decoupled weight decay. Parameters without a gradient this step are left untouched.
class AdamW {
 public:
  struct Slot {
    std::string name;
    ag::Var param;
    bool decay = true;
    Tensor m, v;
  };

  explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void add(const std::string& name, const ag::Var& p, bool decay = true) {
    slots_.push_back({name, p, decay, Tensor(p.shape(), 0.0), Tensor(p.shape(), 0.0)});
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void step() {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, lr = cfg_.lr;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      Tensor& p = s.param.mutable_value();
      const Tensor& g = s.param.node()->grad;
      if (s.decay && cfg_.weight_decay > 0) {
        const double shrink = 1.0 - lr * cfg_.weight_decay;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] *= shrink;
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg_.eps);
      }
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

}  // namespace neuroalign::training
