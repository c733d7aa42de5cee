#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "neuroalign/autograd/ops.hpp"
#include "neuroalign/losses/similarity.hpp"

namespace neuroalign::losses {

// Learned log-temperature and similarity-keeping weight.
struct LossParams {
  ag::Var tau;   // scalar; logit scale is exp(tau)
  ag::Var beta;  // scalar
  double tau_scale_cap = 100.0;
  bool beta_trainable = true;
  std::optional<double> beta_min = 0.0;

  static LossParams create(double tau_init, double beta_init, double cap = 100.0, bool beta_trainable = true,
                           std::optional<double> beta_min = 0.0) {
    LossParams p;
    p.tau = ag::Var(Tensor::scalar(tau_init), true);
    p.beta = ag::Var(Tensor::scalar(beta_init), beta_trainable);
    p.tau_scale_cap = cap;
    p.beta_trainable = beta_trainable;
    p.beta_min = beta_min;
    p.enforce_constraints();
    return p;
  }

  double logit_scale() const { return std::exp(tau.item()); }

  // exp(tau) <= cap and beta >= beta_min.
  void enforce_constraints() {
    double& t = tau.mutable_value()[0];
    t = std::min(t, std::log(tau_scale_cap));
    if (beta_min) {
      double& b = beta.mutable_value()[0];
      b = std::max(b, *beta_min);
    }
  }
};

struct SkOptions {
  bool flattened = false;       // whole-matrix cosine instead of row-wise
  bool include_diagonal = true;  // keep the unit diagonal of each self-similarity row
};

struct InfoNceTerms {
  ag::Var loss_e;     // rows: each EEG embedding against all images
  ag::Var loss_i;     // columns: each image against all EEG embeddings
  ag::Var symmetric;  // (loss_e + loss_i) / 2
};

struct LossTerms {
  ag::Var total;
  ag::Var loss_e;
  ag::Var loss_i;
  ag::Var loss_sk;  // undefined for plain InfoNCE
};

// Per-step scalar record.
struct LossValue {
  double total = 0.0;
  double loss_e = 0.0;
  double loss_i = 0.0;
  double loss_sk = 0.0;
  double beta = 0.0;
  double tau = 0.0;
};

namespace detail {
inline void check_pair(const ag::Var& E_f, const ag::Var& I_f) {
  if (E_f.rank() != 2 || E_f.shape() != I_f.shape()) {
    throw ShapeError("contrastive loss: EEG and image batches differ, " + shape_str(E_f.shape()) + " vs " +
                     shape_str(I_f.shape()));
  }
  if (E_f.dim(0) < 2) throw std::invalid_argument("contrastive loss needs a batch of at least 2 pairs");
}
}  // namespace detail

// Symmetric InfoNCE over logits = (E_f . I_f^T) * exp(tau).
inline InfoNceTerms info_nce(const ag::Var& E_f, const ag::Var& I_f, const ag::Var& tau) {
  detail::check_pair(E_f, I_f);
  ag::Var logits = ag::mul_scalar(ag::matmul_nt(E_f, I_f), ag::exp(tau));
  InfoNceTerms t;
  t.loss_e = cross_entropy_diagonal(logits, SoftmaxAxis::kRows);
  t.loss_i = cross_entropy_diagonal(logits, SoftmaxAxis::kColumns);
  t.symmetric = ag::scale(ag::add(t.loss_e, t.loss_i), 0.5);
  return t;
}

// 1 - E[cos(CS(E_f, E_f), CS(I_f, I_f))]; lies in [0, 2].
inline ag::Var sk_loss(const ag::Var& E_f, const ag::Var& I_f, const SkOptions& opt = {}) {
  detail::check_pair(E_f, I_f);
  ag::Var e_cs = cosine_similarity_matrix(E_f, E_f);
  ag::Var i_cs = cosine_similarity_matrix(I_f, I_f);
  if (!opt.include_diagonal) {
    const std::size_t B = E_f.dim(0);
    Tensor mask({B, B}, 1.0);
    for (std::size_t i = 0; i < B; ++i) mask.at(i, i) = 0.0;
    e_cs = ag::mul(e_cs, ag::constant(mask));
    i_cs = ag::mul(i_cs, ag::constant(mask));
  }
  if (opt.flattened) {
    const std::size_t n = e_cs.size();
    e_cs = ag::reshape(e_cs, {1, n});
    i_cs = ag::reshape(i_cs, {1, n});
  }
  return ag::one_minus(ag::mean(rowwise_cosine(e_cs, i_cs)));
}

inline LossTerms sk_infonce(const ag::Var& E_f, const ag::Var& I_f, const LossParams& params, const SkOptions& opt = {}) {
  InfoNceTerms nce = info_nce(E_f, I_f, params.tau);
  ag::Var sk = sk_loss(E_f, I_f, opt);
  return {ag::add(nce.symmetric, ag::mul_scalar(sk, params.beta)), nce.loss_e, nce.loss_i, sk};
}

inline LossTerms plain_infonce(const ag::Var& E_f, const ag::Var& I_f, const LossParams& params) {
  InfoNceTerms nce = info_nce(E_f, I_f, params.tau);
  return {nce.symmetric, nce.loss_e, nce.loss_i, ag::Var()};
}

inline LossValue summarize(const LossTerms& t, const LossParams& p) {
  LossValue v;
  v.total = t.total.item();
  v.loss_e = t.loss_e.item();
  v.loss_i = t.loss_i.item();
  v.loss_sk = t.loss_sk.defined() ? t.loss_sk.item() : 0.0;
  v.beta = p.beta.item();
  v.tau = p.tau.item();
  return v;
}

}  // namespace neuroalign::losses
