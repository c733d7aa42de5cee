#pragma once

#include <cmath>
#include <vector>

#include "neuroalign/autograd/ops.hpp"
#include "neuroalign/core/types.hpp"

namespace neuroalign::losses {

inline constexpr double kCosineEps = 1e-12;

namespace detail {
inline std::vector<double> row_norms(const Tensor& t, std::size_t rows, std::size_t cols) {
  std::vector<double> n(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += t[i * cols + j] * t[i * cols + j];
    n[i] = std::sqrt(s);
  }
  return n;
}
}  // namespace detail

// S[i][j] = <A_i, B_j> / (|A_i| |B_j| + eps).
inline ag::Var cosine_similarity_matrix(const ag::Var& A, const ag::Var& B, double eps = kCosineEps) {
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1)) {
    throw ShapeError("cosine_similarity_matrix: dimension mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  const std::size_t n = A.dim(0), m = B.dim(0), d = A.dim(1);
  const auto na = detail::row_norms(A.value(), n, d);
  const auto nb = detail::row_norms(B.value(), m, d);
  Tensor dots({n, m});
  ag::detail::mmap(dots, n, m).noalias() = ag::detail::cmap(A.value(), n, d) * ag::detail::cmap(B.value(), m, d).transpose();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = dots[i * m + j] / (na[i] * nb[j] + eps);
  return ag::make_result(std::move(out), {A, B}, [=](ag::Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    // dS_ij/dA_i = B_j / D_ij - N_ij |B_j| A_i / (|A_i| D_ij^2), D_ij = |A_i||B_j| + eps.
    Tensor coef_b({n, m}), coef_self_a(Shape{n}, 0.0), coef_self_b(Shape{m}, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double D = na[i] * nb[j] + eps;
        const double g = self.grad[i * m + j];
        coef_b[i * m + j] = g / D;
        const double t = g * dots[i * m + j] / (D * D);
        if (na[i] > 0) coef_self_a[i] += t * nb[j] / na[i];
        if (nb[j] > 0) coef_self_b[j] += t * na[i] / nb[j];
      }
    if (Tensor* ga = ag::parent_grad(self, 0)) {
      auto G = ag::detail::mmap(*ga, n, d);
      G.noalias() += ag::detail::cmap(coef_b, n, m) * ag::detail::cmap(bv, m, d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) (*ga)[i * d + k] -= coef_self_a[i] * av[i * d + k];
    }
    if (Tensor* gb = ag::parent_grad(self, 1)) {
      auto G = ag::detail::mmap(*gb, m, d);
      G.noalias() += ag::detail::cmap(coef_b, n, m).transpose() * ag::detail::cmap(av, n, d);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < d; ++k) (*gb)[j * d + k] -= coef_self_b[j] * bv[j * d + k];
    }
  });
}

inline SimilarityMatrix cosine_similarity_matrix(const EmbeddingMatrix& A, const EmbeddingMatrix& B) {
  return {cosine_similarity_matrix(ag::constant(A.values), ag::constant(B.values)).value()};
}

// c_i = <X_i, Y_i> / (|X_i| |Y_i| + eps) for matching rows of two (n, m) matrices.
inline ag::Var rowwise_cosine(const ag::Var& X, const ag::Var& Y, double eps = kCosineEps) {
  if (X.rank() != 2 || X.shape() != Y.shape()) {
    throw ShapeError("rowwise_cosine: shape mismatch " + shape_str(X.shape()) + " vs " + shape_str(Y.shape()));
  }
  const std::size_t n = X.dim(0), m = X.dim(1);
  const auto nx = detail::row_norms(X.value(), n, m);
  const auto ny = detail::row_norms(Y.value(), n, m);
  std::vector<double> dots(n, 0.0);
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) dots[i] += X.value()[i * m + j] * Y.value()[i * m + j];
    out[i] = dots[i] / (nx[i] * ny[i] + eps);
  }
  return ag::make_result(std::move(out), {X, Y}, [=](ag::Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& yv = self.parents[1]->value;
    Tensor* gx = ag::parent_grad(self, 0);
    Tensor* gy = ag::parent_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double D = nx[i] * ny[i] + eps;
      const double g = self.grad[i];
      const double t = g * dots[i] / (D * D);
      const double sx = nx[i] > 0 ? t * ny[i] / nx[i] : 0.0;
      const double sy = ny[i] > 0 ? t * nx[i] / ny[i] : 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (gx) (*gx)[i * m + j] += g / D * yv[i * m + j] - sx * xv[i * m + j];
        if (gy) (*gy)[i * m + j] += g / D * xv[i * m + j] - sy * yv[i * m + j];
      }
    }
  });
}

// x / (|x| + eps) per row.
inline ag::Var row_normalize(const ag::Var& x, double eps = kCosineEps) {
  if (x.rank() != 2) throw ShapeError("row_normalize: expected a matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  const auto norms = detail::row_norms(x.value(), n, d);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = x.value()[i * d + k] / (norms[i] + eps);
  return ag::make_result(std::move(out), {x}, [=](ag::Node& self) {
    Tensor* g = ag::parent_grad(self, 0);
    if (!g) return;
    const Tensor& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = norms[i] + eps;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += xv[i * d + k] * self.grad[i * d + k];
      const double c = norms[i] > 0 ? dot / (s * s * norms[i]) : 0.0;
      for (std::size_t k = 0; k < d; ++k) (*g)[i * d + k] += self.grad[i * d + k] / s - c * xv[i * d + k];
    }
  });
}

enum class SoftmaxAxis { kRows, kColumns };

// Mean cross-entropy of a square logit matrix with target = own index. kRows normalizes each row
// over its columns; kColumns normalizes each column over its rows.
inline ag::Var cross_entropy_diagonal(const ag::Var& logits, SoftmaxAxis axis) {
  if (logits.rank() != 2 || logits.dim(0) != logits.dim(1)) {
    throw ShapeError("cross_entropy_diagonal: logits must be square, got " + shape_str(logits.shape()));
  }
  const std::size_t B = logits.dim(0);
  const bool rows = axis == SoftmaxAxis::kRows;
  const Tensor& L = logits.value();
  auto at = [B, rows](std::size_t line, std::size_t k) { return rows ? line * B + k : k * B + line; };
  auto probs = std::make_shared<Tensor>(Shape{B, B});
  double total = 0.0;
  for (std::size_t line = 0; line < B; ++line) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < B; ++k) mx = std::max(mx, L[at(line, k)]);
    double z = 0.0;
    for (std::size_t k = 0; k < B; ++k) z += std::exp(L[at(line, k)] - mx);
    const double lse = mx + std::log(z);
    total += lse - L[at(line, line)];
    for (std::size_t k = 0; k < B; ++k) (*probs)[at(line, k)] = std::exp(L[at(line, k)] - lse);
  }
  return ag::make_result(Tensor::scalar(total / static_cast<double>(B)), {logits}, [=](ag::Node& self) {
    Tensor* g = ag::parent_grad(self, 0);
    if (!g) return;
    const double s = self.grad[0] / static_cast<double>(B);
    for (std::size_t line = 0; line < B; ++line)
      for (std::size_t k = 0; k < B; ++k)
        (*g)[at(line, k)] += s * ((*probs)[at(line, k)] - (k == line ? 1.0 : 0.0));
  });
}

}  // namespace neuroalign::losses
