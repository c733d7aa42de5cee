#pragma once

#include <cmath>
#include <string>

#include "neuroalign/nn/parameters.hpp"

namespace neuroalign::encoders {

// Scaled dot-product multi-head attention. No positional encoding.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(nn::ParameterStore& store, const std::string& name, std::size_t d, std::size_t heads, Rng& rng)
      : d_(d), heads_(heads) {
    if (heads == 0 || d % heads != 0) {
      throw ShapeError("attention: model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                       " heads");
    }
    q_ = nn::Linear(store, name + ".q", d, d, rng);
    k_ = nn::Linear(store, name + ".k", d, d, rng);
    v_ = nn::Linear(store, name + ".v", d, d, rng);
    o_ = nn::Linear(store, name + ".out", d, d, rng);
  }

  // query: (B, Lq, d), context: (B, Lk, d) -> (B, Lq, d)
  ag::Var operator()(const ag::Var& query, const ag::Var& context) {
    if (query.rank() != 3 || context.rank() != 3 || query.dim(2) != d_ || context.dim(2) != d_ ||
        query.dim(0) != context.dim(0)) {
      throw ShapeError("attention: expected (B, L, " + std::to_string(d_) + ") inputs, got " + shape_str(query.shape()) +
                       " and " + shape_str(context.shape()));
    }
    const std::size_t B = query.dim(0), Lq = query.dim(1), Lk = context.dim(1), dh = d_ / heads_;
    auto split = [&](const ag::Var& x, std::size_t L) {
      return ag::reshape(ag::permute(ag::reshape(x, {B, L, heads_, dh}), {0, 2, 1, 3}), {B * heads_, L, dh});
    };
    ag::Var Q = split(q_.apply_last(query), Lq);
    ag::Var K = split(k_.apply_last(context), Lk);
    ag::Var V = split(v_.apply_last(context), Lk);
    ag::Var A = ag::softmax_last(ag::scale(ag::bmm(Q, K, true), 1.0 / std::sqrt(static_cast<double>(dh))));
    last_weights_ = A.value();
    ag::Var ctx = ag::reshape(ag::permute(ag::reshape(ag::bmm(A, V), {B, heads_, Lq, dh}), {0, 2, 1, 3}), {B, Lq, d_});
    return o_.apply_last(ctx);
  }

  // (B * heads, Lq, Lk) weights of the most recent call.
  const Tensor& last_weights() const { return last_weights_; }
  std::size_t heads() const { return heads_; }

 private:
  std::size_t d_ = 0, heads_ = 1;
  nn::Linear q_, k_, v_, o_;
  Tensor last_weights_;
};

// LN(query + MHA(query, context)); self-attention when context is the query itself.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(nn::ParameterStore& store, const std::string& name, std::size_t d, std::size_t heads, Rng& rng)
      : mha_(store, name + ".mha", d, heads, rng), norm_(store, name + ".norm", d) {}

  ag::Var operator()(const ag::Var& x) { return (*this)(x, x); }
  ag::Var operator()(const ag::Var& query, const ag::Var& context) { return norm_(ag::add(query, mha_(query, context))); }

  const MultiHeadAttention& attention() const { return mha_; }

 private:
  MultiHeadAttention mha_;
  nn::LayerNorm norm_;
};

}  // namespace neuroalign::encoders
