#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "neuroalign/nn/parameters.hpp"

namespace neuroalign::encoders {

// Where the LeakyReLU sits in the pair score.
//   kInner: s_ij = a^T LeakyReLU([W n_i || W n_j])
//   kOuter: s_ij = LeakyReLU(a^T [W n_i || W n_j])
enum class GaScore { kInner, kOuter };

inline GaScore ga_score_from_string(const std::string& s) {
  if (s == "inner") return GaScore::kInner;
  if (s == "outer") return GaScore::kOuter;
  throw std::invalid_argument("unknown graph-attention score '" + s + "'");
}

struct GraphAttentionOptions {
  double leaky_slope = 0.2;
  GaScore score = GaScore::kInner;
  // Softmax over N_i u {i}. Turning this off is only useful for regression tests.
  bool include_self = true;
};

// Fully connected graph attention over the nodes (electrodes) of each batch item.
//   x: (B, E, d_in), W: (d_out, d_in), a: (2 d_out)
//   out_i = sum_j alpha_ij W n_j, alpha_ij = softmax_j(s_ij)
// When `alpha_out` is non-null it receives the (B, E, E) attention coefficients.
inline ag::Var graph_attention(const ag::Var& x, const ag::Var& W, const ag::Var& a, const GraphAttentionOptions& opt,
                               Tensor* alpha_out = nullptr) {
  if (x.rank() != 3) throw ShapeError("graph_attention: nodes must be (batch, electrodes, features), got " + shape_str(x.shape()));
  if (W.rank() != 2 || W.dim(1) != x.dim(2)) {
    throw ShapeError("graph_attention: W " + shape_str(W.shape()) + " does not accept node features of size " +
                     std::to_string(x.dim(2)));
  }
  const std::size_t B = x.dim(0), E = x.dim(1), Din = x.dim(2), Dout = W.dim(0);
  if (a.size() != 2 * Dout) {
    throw ShapeError("graph_attention: attention vector has size " + std::to_string(a.size()) + ", expected 2*d_out = " +
                     std::to_string(2 * Dout));
  }
  if (!opt.include_self && E < 2) throw ShapeError("graph_attention: excluding self leaves an empty neighbourhood");
  const double slope = opt.leaky_slope;
  const GaScore mode = opt.score;
  const bool self_loop = opt.include_self;
  auto lrelu = [slope](double v) { return v > 0 ? v : slope * v; };
  auto dlrelu = [slope](double v) { return v > 0 ? 1.0 : slope; };

  auto H = std::make_shared<Tensor>(Shape{B, E, Dout});
  auto alpha = std::make_shared<Tensor>(Shape{B, E, E});
  Tensor out({B, E, Dout});
  const double* av = a.value().data();
  std::vector<double> p(E), q(E);
  for (std::size_t b = 0; b < B; ++b) {
    auto Hb = ag::detail::mmap(*H, E, Dout, b * E * Dout);
    Hb.noalias() = ag::detail::cmap(x.value(), E, Din, b * E * Din) * ag::detail::cmap(W.value(), Dout, Din).transpose();
    for (std::size_t i = 0; i < E; ++i) {
      p[i] = q[i] = 0.0;
      for (std::size_t k = 0; k < Dout; ++k) {
        const double h = Hb(i, k);
        const double u = mode == GaScore::kInner ? lrelu(h) : h;
        p[i] += av[k] * u;
        q[i] += av[Dout + k] * u;
      }
    }
    double* al = alpha->data() + b * E * E;
    for (std::size_t i = 0; i < E; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < E; ++j) {
        if (!self_loop && j == i) continue;
        const double s = mode == GaScore::kInner ? p[i] + q[j] : lrelu(p[i] + q[j]);
        al[i * E + j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < E; ++j) {
        if (!self_loop && j == i) {
          al[i * E + j] = 0.0;
          continue;
        }
        z += (al[i * E + j] = std::exp(al[i * E + j] - mx));
      }
      for (std::size_t j = 0; j < E; ++j) al[i * E + j] /= z;
    }
    ag::detail::mmap(out, E, Dout, b * E * Dout).noalias() = ag::detail::cmap(*alpha, E, E, b * E * E) * Hb;
  }
  if (alpha_out) *alpha_out = *alpha;

  return ag::make_result(std::move(out), {x, W, a}, [=](ag::Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& Wv = self.parents[1]->value;
    const double* av = self.parents[2]->value.data();
    Tensor* gx = ag::parent_grad(self, 0);
    Tensor* gW = ag::parent_grad(self, 1);
    Tensor* ga = ag::parent_grad(self, 2);
    ag::RowMatrix dH(E, Dout), dalpha(E, E), ds(E, E);
    std::vector<double> dp(E), dq(E);
    for (std::size_t b = 0; b < B; ++b) {
      auto G = ag::detail::cmap(self.grad, E, Dout, b * E * Dout);
      auto Hb = ag::detail::cmap(*H, E, Dout, b * E * Dout);
      auto Ab = ag::detail::cmap(*alpha, E, E, b * E * E);
      dalpha.noalias() = G * Hb.transpose();
      dH.noalias() = Ab.transpose() * G;
      for (std::size_t i = 0; i < E; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < E; ++k) dot += Ab(i, k) * dalpha(i, k);
        for (std::size_t j = 0; j < E; ++j) ds(i, j) = Ab(i, j) * (dalpha(i, j) - dot);
      }
      std::fill(dp.begin(), dp.end(), 0.0);
      std::fill(dq.begin(), dq.end(), 0.0);
      if (mode == GaScore::kOuter) {
        // Recompute pre-activation scores for the LeakyReLU derivative.
        std::vector<double> pp(E, 0.0), qq(E, 0.0);
        for (std::size_t i = 0; i < E; ++i)
          for (std::size_t k = 0; k < Dout; ++k) {
            pp[i] += av[k] * Hb(i, k);
            qq[i] += av[Dout + k] * Hb(i, k);
          }
        for (std::size_t i = 0; i < E; ++i)
          for (std::size_t j = 0; j < E; ++j) {
            if (!self_loop && i == j) continue;
            const double de = ds(i, j) * dlrelu(pp[i] + qq[j]);
            dp[i] += de;
            dq[j] += de;
          }
      } else {
        for (std::size_t i = 0; i < E; ++i)
          for (std::size_t j = 0; j < E; ++j) {
            dp[i] += ds(i, j);
            dq[j] += ds(i, j);
          }
      }
      for (std::size_t i = 0; i < E; ++i)
        for (std::size_t k = 0; k < Dout; ++k) {
          const double h = Hb(i, k);
          const double u = mode == GaScore::kInner ? lrelu(h) : h;
          if (ga) {
            (*ga)[k] += dp[i] * u;
            (*ga)[Dout + k] += dq[i] * u;
          }
          const double du = dp[i] * av[k] + dq[i] * av[Dout + k];
          dH(i, k) += mode == GaScore::kInner ? du * dlrelu(h) : du;
        }
      if (gW) ag::detail::mmap(*gW, Dout, Din).noalias() += dH.transpose() * ag::detail::cmap(xv, E, Din, b * E * Din);
      if (gx) ag::detail::mmap(*gx, E, Din, b * E * Din).noalias() += dH * ag::detail::cmap(Wv, Dout, Din);
    }
  });
}

// Graph attention layer over electrodes: (B, 1, E, T) -> (B, 1, E, T_out).
class GraphAttention {
 public:
  GraphAttention() = default;
  GraphAttention(nn::ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng,
                 GraphAttentionOptions opt = {})
      : opt_(opt) {
    W_ = store.add(name + ".W", nn::glorot({d_out, d_in}, d_in, d_out, rng));
    a_ = store.add(name + ".a", nn::glorot({2 * d_out}, 2 * d_out, 1, rng));
  }

  ag::Var operator()(const ag::Var& eeg) {
    if (eeg.rank() != 4 || eeg.dim(1) != 1) throw ShapeError("GraphAttention: expected (B, 1, E, T), got " + shape_str(eeg.shape()));
    const std::size_t B = eeg.dim(0), E = eeg.dim(2), T = eeg.dim(3);
    ag::Var nodes = ag::reshape(eeg, {B, E, T});
    ag::Var y = graph_attention(nodes, W_, a_, opt_, &last_alpha_);
    return ag::reshape(y, {B, 1, E, W_.dim(0)});
  }

  const Tensor& last_attention() const { return last_alpha_; }
  const GraphAttentionOptions& options() const { return opt_; }

 private:
  GraphAttentionOptions opt_;
  ag::Var W_, a_;
  Tensor last_alpha_;
};

}  // namespace neuroalign::encoders
