#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "neuroalign/autograd/var.hpp"
#include "neuroalign/random.hpp"

namespace neuroalign::ag {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

inline ConstMatMap cmap(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return ConstMatMap(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatMap mmap(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatMap(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename F>
Var unary(const Var& a, F&& f, auto&& dfdx) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(std::move(out), {a}, [dfdx](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    const Tensor& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

}  // namespace detail

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (Tensor* g = parent_grad(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (Tensor* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (Tensor* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= c;
  return make_result(std::move(out), {a}, [c](Node& self) {
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * c;
  });
}

// a * s with s a one-element tensor.
inline Var mul_scalar(const Var& a, const Var& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  const double sv = s.value()[0];
  Tensor out = a.value();
  for (double& v : out.storage()) v *= sv;
  return make_result(std::move(out), {a, s}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const double sv = self.parents[1]->value[0];
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * sv;
    if (Tensor* g = parent_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += self.grad[i] * av[i];
      (*g)[0] += acc;
    }
  });
}

// 1 - a, elementwise.
inline Var one_minus(const Var& a) {
  return detail::unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var elu(const Var& a, double alpha = 1.0) {
  return detail::unary(
      a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

inline Var leaky_relu(const Var& a, double slope) {
  return detail::unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------- reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0))
      for (double& v : g->storage()) v += self.grad[0];
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  return scale(sum(a), 1.0 / n);
}

// Sum of a * w with w held constant.
inline Var weighted_sum(const Var& a, const Tensor& w) {
  if (w.shape() != a.shape()) throw ShapeError("weighted_sum: weight shape mismatch");
  return sum(mul(a, constant(w)));
}

// ---------------------------------------------------------------- shape ops

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

namespace detail {
inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// out[idx] = in[idx permuted]; returns for each flat out index the flat in index.
inline std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& perm) {
  const std::size_t r = in.size();
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[perm[i]];
  const auto in_st = strides_of(in);
  std::vector<std::size_t> map(shape_size(in));
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_st[perm[i]];
    map[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}
}  // namespace detail

inline Var permute(const Var& a, const std::vector<std::size_t>& perm) {
  const Shape& in = a.shape();
  if (perm.size() != in.size()) throw ShapeError("permute: rank mismatch");
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out_shape[i] = in.at(perm[i]);
  auto map = std::make_shared<std::vector<std::size_t>>(detail::permutation_map(in, perm));
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[(*map)[i]];
  return make_result(std::move(out), {a}, [map](Node& self) {
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[(*map)[i]] += self.grad[i];
  });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != shape[i]) throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(shape));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  shape[axis] = total;
  Tensor out(shape);
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * w, w, out.data() + o * total * inner + off);
    widths.push_back(w);
    off += w;
  }
  return make_result(std::move(out), parts, [widths, outer, total, inner](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Tensor* g = parent_grad(self, k))
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[k]; ++j) (*g)[o * widths[k] + j] += self.grad[o * total * inner + off + j];
      off += widths[k];
    }
  });
}

// ---------------------------------------------------------------- linear algebra

// (m x k) . (k x n)
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  detail::mmap(out, m, n).noalias() = detail::cmap(a.value(), m, k) * detail::cmap(b.value(), k, n);
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    auto G = detail::cmap(self.grad, m, n);
    if (Tensor* g = parent_grad(self, 0))
      detail::mmap(*g, m, k).noalias() += G * detail::cmap(self.parents[1]->value, k, n).transpose();
    if (Tensor* g = parent_grad(self, 1))
      detail::mmap(*g, k, n).noalias() += detail::cmap(self.parents[0]->value, m, k).transpose() * G;
  });
}

// (m x k) . (n x k)^T
inline Var matmul_nt(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ShapeError("matmul_nt: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor out({m, n});
  detail::mmap(out, m, n).noalias() = detail::cmap(a.value(), m, k) * detail::cmap(b.value(), n, k).transpose();
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    auto G = detail::cmap(self.grad, m, n);
    if (Tensor* g = parent_grad(self, 0)) detail::mmap(*g, m, k).noalias() += G * detail::cmap(self.parents[1]->value, n, k);
    if (Tensor* g = parent_grad(self, 1))
      detail::mmap(*g, n, k).noalias() += G.transpose() * detail::cmap(self.parents[0]->value, m, k);
  });
}

inline Var transpose(const Var& a) {
  detail::require_rank(a, 2, "transpose");
  return permute(a, {1, 0});
}

// Batched (N x m x k) . (N x k x n), or (N x m x k) . (N x n x k)^T when trans_b.
inline Var bmm(const Var& a, const Var& b, bool trans_b = false) {
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  const std::size_t N = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != N || (trans_b ? b.dim(2) : b.dim(1)) != k) {
    throw ShapeError("bmm: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor out({N, m, n});
  for (std::size_t i = 0; i < N; ++i) {
    auto A = detail::cmap(a.value(), m, k, i * m * k);
    auto O = detail::mmap(out, m, n, i * m * n);
    if (trans_b)
      O.noalias() = A * detail::cmap(b.value(), n, k, i * n * k).transpose();
    else
      O.noalias() = A * detail::cmap(b.value(), k, n, i * k * n);
  }
  return make_result(std::move(out), {a, b}, [N, m, k, n, trans_b](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    Tensor* gb = parent_grad(self, 1);
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    for (std::size_t i = 0; i < N; ++i) {
      auto G = detail::cmap(self.grad, m, n, i * m * n);
      if (trans_b) {
        if (ga) detail::mmap(*ga, m, k, i * m * k).noalias() += G * detail::cmap(bv, n, k, i * n * k);
        if (gb) detail::mmap(*gb, n, k, i * n * k).noalias() += G.transpose() * detail::cmap(av, m, k, i * m * k);
      } else {
        if (ga) detail::mmap(*ga, m, k, i * m * k).noalias() += G * detail::cmap(bv, k, n, i * k * n).transpose();
        if (gb) detail::mmap(*gb, k, n, i * k * n).noalias() += detail::cmap(av, m, k, i * m * k).transpose() * G;
      }
    }
  });
}

// x (N x in) . W^T (out x in) + b (out). Pass an undefined Var for no bias.
inline Var linear(const Var& x, const Var& W, const Var& b) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(W, 2, "linear");
  const std::size_t N = x.dim(0), in = x.dim(1), out_dim = W.dim(0);
  if (W.dim(1) != in) {
    throw ShapeError("linear: input has " + std::to_string(in) + " features, weight expects " + std::to_string(W.dim(1)));
  }
  const bool has_bias = b.defined();
  if (has_bias && b.size() != out_dim) throw ShapeError("linear: bias size mismatch");
  Tensor out({N, out_dim});
  auto O = detail::mmap(out, N, out_dim);
  O.noalias() = detail::cmap(x.value(), N, in) * detail::cmap(W.value(), out_dim, in).transpose();
  if (has_bias)
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < out_dim; ++c) O(r, c) += b.value()[c];
  std::vector<Var> inputs{x, W};
  if (has_bias) inputs.push_back(b);
  return make_result(std::move(out), inputs, [N, in, out_dim, has_bias](Node& self) {
    auto G = detail::cmap(self.grad, N, out_dim);
    if (Tensor* g = parent_grad(self, 0))
      detail::mmap(*g, N, in).noalias() += G * detail::cmap(self.parents[1]->value, out_dim, in);
    if (Tensor* g = parent_grad(self, 1))
      detail::mmap(*g, out_dim, in).noalias() += G.transpose() * detail::cmap(self.parents[0]->value, N, in);
    if (has_bias)
      if (Tensor* g = parent_grad(self, 2))
        for (std::size_t r = 0; r < N; ++r)
          for (std::size_t c = 0; c < out_dim; ++c) (*g)[c] += G(r, c);
  });
}

// ---------------------------------------------------------------- normalization / attention primitives

inline Var softmax_last(const Var& a) {
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double* y = out.data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  return make_result(std::move(out), {a}, [rows, d](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* gy = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) (*g)[r * d + j] += y[j] * (gy[j] - dot);
    }
  });
}

inline Var layer_norm_last(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) throw ShapeError("layer_norm: affine size mismatch");
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  auto xhat = std::make_shared<Tensor>(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [rows, d, xhat, inv_std](Node& self) {
    const Tensor& gam = self.parents[1]->value;
    Tensor* gx = parent_grad(self, 0);
    Tensor* gg = parent_grad(self, 1);
    Tensor* gb = parent_grad(self, 2);
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double gy = self.grad[r * d + j];
        const double h = (*xhat)[r * d + j];
        if (gg) (*gg)[j] += gy * h;
        if (gb) (*gb)[j] += gy;
        dh[j] = gy * gam[j];
        s1 += dh[j];
        s2 += dh[j] * h;
      }
      if (gx) {
        const double dd = static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j)
          (*gx)[r * d + j] += (*inv_std)[r] / dd * (dd * dh[j] - s1 - (*xhat)[r * d + j] * s2);
      }
    }
  });
}

// ---------------------------------------------------------------- convolutional stack

// Valid 2-D cross-correlation, stride 1: x (B, Cin, H, W), w (Cout, Cin, kh, kw), b (Cout) or undefined.
inline Var conv2d(const Var& x, const Var& w, const Var& b) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Ci) {
    throw ShapeError("conv2d: input has " + std::to_string(Ci) + " channels, kernel expects " + std::to_string(w.dim(1)));
  }
  if (kh > H || kw > W) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " larger than input " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  const bool has_bias = b.defined();
  const std::size_t Ho = H - kh + 1, Wo = W - kw + 1, K = Ci * kh * kw, P = Ho * Wo;

  auto im2col = [=](const double* xn, RowMatrix& cols) {
    cols.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    for (std::size_t c = 0; c < Ci; ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          double* row = cols.data() + ((c * kh + i) * kw + j) * P;
          for (std::size_t oh = 0; oh < Ho; ++oh)
            std::copy_n(xn + (c * H + oh + i) * W + j, Wo, row + oh * Wo);
        }
  };

  Tensor out({B, Co, Ho, Wo});
  RowMatrix cols;
  auto Wm = detail::cmap(w.value(), Co, K);
  for (std::size_t n = 0; n < B; ++n) {
    im2col(x.value().data() + n * Ci * H * W, cols);
    auto O = detail::mmap(out, Co, P, n * Co * P);
    O.noalias() = Wm * cols;
    if (has_bias)
      for (std::size_t c = 0; c < Co; ++c) O.row(static_cast<Eigen::Index>(c)).array() += b.value()[c];
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result(std::move(out), inputs, [=](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* gw = parent_grad(self, 1);
    Tensor* gb = has_bias ? parent_grad(self, 2) : nullptr;
    const Tensor& xv = self.parents[0]->value;
    auto Wm = detail::cmap(self.parents[1]->value, Co, K);
    RowMatrix cols, dcols;
    for (std::size_t n = 0; n < B; ++n) {
      auto G = detail::cmap(self.grad, Co, P, n * Co * P);
      if (gw) {
        im2col(xv.data() + n * Ci * H * W, cols);
        detail::mmap(*gw, Co, K).noalias() += G * cols.transpose();
      }
      if (gb)
        for (std::size_t c = 0; c < Co; ++c) (*gb)[c] += G.row(static_cast<Eigen::Index>(c)).sum();
      if (gx) {
        dcols.noalias() = Wm.transpose() * G;
        double* gxn = gx->data() + n * Ci * H * W;
        for (std::size_t c = 0; c < Ci; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const double* row = dcols.data() + ((c * kh + i) * kw + j) * P;
              for (std::size_t oh = 0; oh < Ho; ++oh) {
                double* dst = gxn + (c * H + oh + i) * W + j;
                const double* src = row + oh * Wo;
                for (std::size_t ow = 0; ow < Wo; ++ow) dst[ow] += src[ow];
              }
            }
      }
    }
  });
}

// Average pooling along the last axis of a (B, C, H, W) tensor.
inline Var avg_pool_time(const Var& x, std::size_t kernel, std::size_t stride) {
  detail::require_rank(x, 4, "avg_pool_time");
  const std::size_t W = x.dim(3);
  if (kernel == 0 || stride == 0 || kernel > W) throw ShapeError("avg_pool_time: kernel larger than input");
  const std::size_t Wo = (W - kernel) / stride + 1;
  const std::size_t rows = x.size() / W;
  Shape shape = x.shape();
  shape[3] = Wo;
  Tensor out(shape);
  const double inv = 1.0 / static_cast<double>(kernel);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < Wo; ++o) {
      double s = 0.0;
      for (std::size_t k = 0; k < kernel; ++k) s += x.value()[r * W + o * stride + k];
      out[r * Wo + o] = s * inv;
    }
  return make_result(std::move(out), {x}, [=](Node& self) {
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < Wo; ++o)
          for (std::size_t k = 0; k < kernel; ++k) (*g)[r * W + o * stride + k] += self.grad[r * Wo + o] * inv;
  });
}

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

// Per-channel normalization of (B, C, H, W). Training mode uses batch statistics and updates
// the running estimates; inference mode uses the running estimates.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
                      double momentum = 0.1, double eps = 1e-5) {
  detail::require_rank(x, 4, "batch_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C) throw ShapeError("batch_norm: affine size mismatch");
  const std::size_t count = B * HW;
  std::vector<double> mu(C), inv_std(C);
  const Tensor& xv = x.value();
  for (std::size_t c = 0; c < C; ++c) {
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < HW; ++i) s += xv[(n * C + c) * HW + i];
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = xv[(n * C + c) * HW + i] - m;
          v += d * d;
        }
      const double biased = v / static_cast<double>(count);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : biased;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(biased + eps);
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * m;
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
    } else {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }
  Tensor out(x.shape());
  auto xhat = std::make_shared<Tensor>(x.shape());
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (n * C + c) * HW + i;
        const double h = (xv[idx] - mu[c]) * inv_std[c];
        (*xhat)[idx] = h;
        out[idx] = h * gamma.value()[c] + beta.value()[c];
      }
  return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
    const Tensor& gam = self.parents[1]->value;
    Tensor* gx = parent_grad(self, 0);
    Tensor* gg = parent_grad(self, 1);
    Tensor* gb = parent_grad(self, 2);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_h = 0.0;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t idx = (n * C + c) * HW + i;
          sum_dy += self.grad[idx];
          sum_dy_h += self.grad[idx] * (*xhat)[idx];
        }
      if (gg) (*gg)[c] += sum_dy_h;
      if (gb) (*gb)[c] += sum_dy;
      if (!gx) continue;
      const double k = gam[c] * inv_std[c];
      const double cnt = static_cast<double>(count);
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t idx = (n * C + c) * HW + i;
          if (training)
            (*gx)[idx] += k / cnt * (cnt * self.grad[idx] - sum_dy - (*xhat)[idx] * sum_dy_h);
          else
            (*gx)[idx] += k * self.grad[idx];
        }
    }
  });
}

inline Var dropout(const Var& x, double p, Rng* rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  if (!rng) throw std::invalid_argument("dropout: training mode requires an rng");
  auto mask = std::make_shared<Tensor>(x.shape());
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (double& m : mask->storage()) m = keep(*rng) ? s : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return make_result(std::move(out), {x}, [mask](Node& self) {
    if (Tensor* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (*mask)[i];
  });
}

}  // namespace neuroalign::ag
