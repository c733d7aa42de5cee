#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "neuroalign/losses/contrastive.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace neuroalign;
using testutil::gradient_error;
using testutil::random_tensor;

namespace {

ag::Var rows_var(const oracle::Rows& r, bool grad = false) {
  Tensor t({r.size(), r.front().size()});
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) t.at(i, j) = r[i][j];
  return ag::Var(std::move(t), grad);
}

oracle::Rows to_rows(const Tensor& t) {
  oracle::Rows r(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) r[i][j] = t.at(i, j);
  return r;
}

Tensor unit_rows(Shape s, std::uint64_t seed) {
  Tensor t = random_tensor(std::move(s), seed);
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    double n = 0;
    for (std::size_t j = 0; j < t.dim(1); ++j) n += t.at(i, j) * t.at(i, j);
    for (std::size_t j = 0; j < t.dim(1); ++j) t.at(i, j) /= std::sqrt(n);
  }
  return t;
}

losses::LossParams params(double tau, double beta) { return losses::LossParams::create(tau, beta, 100.0, true, std::nullopt); }

}  // namespace

TEST(CosineSimilarity, IdentityRows) {
  ag::Var a = rows_var({{1, 0}, {0, 1}});
  Tensor cs = losses::cosine_similarity_matrix(a, a).value();
  // The 1e-12 guard in the denominator keeps the diagonal a hair under 1.
  EXPECT_NEAR(cs.at(0, 0), 1.0, 1e-11);
  EXPECT_EQ(cs.at(0, 1), 0.0);
  EXPECT_NEAR(cs.at(1, 1), 1.0, 1e-11);
}

TEST(CosineSimilarity, HalfAngle) {
  const double r = 1 / std::sqrt(2.0);
  Tensor cs = losses::cosine_similarity_matrix(rows_var({{1, 0}}), rows_var({{r, r}})).value();
  EXPECT_NEAR(cs[0], 0.70711, 1e-5);
  EXPECT_NEAR(cs[0], oracle::cosine({1, 0}, {r, r}), 1e-12);
}

TEST(CosineSimilarity, SelfDiagonalIsOne) {
  ag::Var a(unit_rows({6, 5}, 1));
  Tensor cs = losses::cosine_similarity_matrix(a, a).value();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(cs.at(i, i), 1.0, 1e-6);
}

TEST(CosineSimilarity, MatchesLoopOracleAndRejectsDimMismatch) {
  Tensor a = random_tensor({3, 4}, 2), b = random_tensor({5, 4}, 3);
  Tensor cs = losses::cosine_similarity_matrix(ag::constant(a), ag::constant(b)).value();
  auto ref = oracle::cosine_matrix(to_rows(a), to_rows(b));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(cs.at(i, j), ref[i][j], 1e-12);
  EXPECT_THROW(losses::cosine_similarity_matrix(ag::constant(a), ag::constant(Tensor({2, 3}))), ShapeError);
}

TEST(RowNormalize, ThreeFourFive) {
  Tensor y = losses::row_normalize(rows_var({{3, 4}})).value();
  EXPECT_NEAR(y[0], 0.6, 1e-12);
  EXPECT_NEAR(y[1], 0.8, 1e-12);
}

TEST(RowNormalize, ZeroRowStaysZero) {
  Tensor y = losses::row_normalize(rows_var({{0, 0}, {1, 1}})).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_TRUE(y.all_finite());
  EmbeddingMatrix m{y, true};
  EXPECT_TRUE(m.check_normalized());
}

TEST(InfoNce, UniformLogitsGiveLogB) {
  for (std::size_t B : {2u, 3u, 8u, 17u}) {
    oracle::Rows r(B, {0.6, 0.8});
    auto t = losses::info_nce(rows_var(r), rows_var(r), ag::constant(Tensor::scalar(0.7)));
    EXPECT_NEAR(t.symmetric.item(), std::log(static_cast<double>(B)), 1e-9) << B;
  }
  oracle::Rows r(2, {1, 0});
  EXPECT_NEAR(losses::info_nce(rows_var(r), rows_var(r), ag::constant(Tensor::scalar(0))).symmetric.item(), 0.69315, 1e-5);
}

TEST(InfoNce, IdentityFixture) {
  const oracle::Rows id{{1, 0}, {0, 1}};
  // Oracle first: the loop implementation must give the closed form.
  ASSERT_NEAR(oracle::info_nce(id, id, 1.0), std::log(1 + std::exp(-1.0)), 1e-12);
  auto t = losses::info_nce(rows_var(id), rows_var(id), ag::constant(Tensor::scalar(0.0)));
  EXPECT_NEAR(t.symmetric.item(), std::log(1 + std::exp(-1.0)), 1e-9);
  EXPECT_NEAR(t.symmetric.item(), 0.31326, 1e-5);
}

TEST(InfoNce, LargerScaleLowersAlignedLoss) {
  const oracle::Rows id{{1, 0}, {0, 1}};
  const double at1 = losses::info_nce(rows_var(id), rows_var(id), ag::constant(Tensor::scalar(0.0))).symmetric.item();
  const double at10 = losses::info_nce(rows_var(id), rows_var(id), ag::constant(Tensor::scalar(std::log(10.0)))).symmetric.item();
  EXPECT_NEAR(at10, oracle::info_nce(id, id, 10.0), 1e-12);
  EXPECT_LT(at10, at1);
}

TEST(InfoNce, MatchesLoopOracleOnRandomBatches) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tensor e = unit_rows({6, 5}, 10 + s), i = unit_rows({6, 5}, 30 + s);
    const double tau = 0.3 * static_cast<double>(s);
    auto t = losses::info_nce(ag::constant(e), ag::constant(i), ag::constant(Tensor::scalar(tau)));
    EXPECT_NEAR(t.symmetric.item(), oracle::info_nce(to_rows(e), to_rows(i), std::exp(tau)), 1e-10);
  }
}

TEST(InfoNce, RejectsSingletonBatch) {
  oracle::Rows r{{1, 0}};
  EXPECT_THROW(losses::info_nce(rows_var(r), rows_var(r), ag::constant(Tensor::scalar(0))), std::invalid_argument);
}

TEST(SkLoss, IdenticalBatchesGiveZero) {
  Tensor e = random_tensor({7, 4}, 4);
  EXPECT_NEAR(losses::sk_loss(ag::constant(e), ag::constant(e)).item(), 0.0, 1e-12);
}

TEST(SkLoss, HandFixture) {
  const oracle::Rows E{{1, 0}, {0, 1}}, I{{1, 0}, {1, 0}};
  ASSERT_NEAR(oracle::sk_loss(E, I), 1 - 1 / std::sqrt(2.0), 1e-12);
  const double v = losses::sk_loss(rows_var(E), rows_var(I)).item();
  EXPECT_NEAR(v, 1 - 1 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(v, 0.29289, 1e-5);
}

TEST(SkLoss, BoundedOnRandomBatches) {
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 2 + trial % 9, d = 1 + trial % 6;
    Tensor e = random_tensor({B, d}, 1000 + trial), i = random_tensor({B, d}, 5000 + trial);
    const double v = losses::sk_loss(ag::constant(e), ag::constant(i)).item();
    EXPECT_GE(v, -1e-12);
    EXPECT_LE(v, 2.0 + 1e-12);
    EXPECT_NEAR(v, oracle::sk_loss(to_rows(e), to_rows(i)), 1e-10);
  }
}

TEST(SkLoss, FlattenedAndNoDiagonalVariants) {
  Tensor e = random_tensor({4, 3}, 6), i = random_tensor({4, 3}, 7);
  auto ce = oracle::cosine_matrix(to_rows(e), to_rows(e)), ci = oracle::cosine_matrix(to_rows(i), to_rows(i));
  std::vector<double> fe, fi;
  double rows_nodiag = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    fe.insert(fe.end(), ce[r].begin(), ce[r].end());
    fi.insert(fi.end(), ci[r].begin(), ci[r].end());
    auto a = ce[r], b = ci[r];
    a[r] = b[r] = 0;
    rows_nodiag += oracle::cosine(a, b);
  }
  EXPECT_NEAR(losses::sk_loss(ag::constant(e), ag::constant(i), {true, true}).item(), 1 - oracle::cosine(fe, fi), 1e-10);
  EXPECT_NEAR(losses::sk_loss(ag::constant(e), ag::constant(i), {false, false}).item(), 1 - rows_nodiag / 4, 1e-10);
}

TEST(SkInfoNce, BetaZeroIsBitwiseInfoNce) {
  for (std::size_t B : {2u, 8u, 32u})
    for (std::size_t d : {4u, 64u}) {
      Tensor e = unit_rows({B, d}, B * 100 + d), i = unit_rows({B, d}, B * 1000 + d);
      auto p = params(0.4, 0.0);
      const double total = losses::sk_infonce(ag::constant(e), ag::constant(i), p).total.item();
      const double plain = losses::info_nce(ag::constant(e), ag::constant(i), p.tau).symmetric.item();
      EXPECT_EQ(std::memcmp(&total, &plain, sizeof(double)), 0) << B << "x" << d;
    }
}

TEST(SkInfoNce, CombinedFixture) {
  // Rows of E and I meet only on their own index, so the logits are the identity (InfoNCE part
  // ln(1 + e^-1)), while the off-diagonal self-similarities are -c and +c with c = sqrt(2) - 1,
  // which makes every row cosine 1/sqrt(2).
  const double c = std::sqrt(2.0) - 1, a = std::sqrt(c / (1 - c));
  const oracle::Rows E{{1, 0, a, 0}, {0, 1, -a, 0}}, I{{1, 0, 0, a}, {0, 1, 0, a}};
  ASSERT_NEAR(oracle::info_nce(E, I, 1.0), std::log(1 + std::exp(-1.0)), 1e-12);
  ASSERT_NEAR(oracle::sk_loss(E, I), 1 - 1 / std::sqrt(2.0), 1e-12);
  auto t = losses::sk_infonce(rows_var(E), rows_var(I), params(0.0, 1.0));
  EXPECT_NEAR(t.total.item(), 0.60615, 1e-5);
  EXPECT_NEAR(t.total.item(), std::log(1 + std::exp(-1.0)) + 1 - 1 / std::sqrt(2.0), 1e-9);
}

TEST(SkInfoNce, IdentityRowsSkVanishes) {
  const oracle::Rows id{{1, 0}, {0, 1}};
  auto p = params(0.0, 1.0);
  auto t = losses::sk_infonce(rows_var(id), rows_var(id), p);
  EXPECT_NEAR(t.total.item(), losses::info_nce(rows_var(id), rows_var(id), p.tau).symmetric.item(), 1e-9);
}

TEST(SkInfoNce, TotalDecomposes) {
  Tensor e = unit_rows({5, 6}, 8), i = unit_rows({5, 6}, 9);
  auto p = params(1.1, 0.7);
  auto v = losses::summarize(losses::sk_infonce(ag::constant(e), ag::constant(i), p), p);
  EXPECT_NEAR(v.total, (v.loss_e + v.loss_i) / 2 + v.beta * v.loss_sk, 1e-9);
  EXPECT_DOUBLE_EQ(v.beta, 0.7);
  EXPECT_DOUBLE_EQ(v.tau, 1.1);
}

TEST(SkInfoNce, BatchPermutationInvariance) {
  Tensor e = unit_rows({6, 4}, 10), i = unit_rows({6, 4}, 11);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor pe({6, 4}), pi({6, 4});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 4; ++j) {
      pe.at(r, j) = e.at(perm[r], j);
      pi.at(r, j) = i.at(perm[r], j);
    }
  auto p = params(0.5, 0.9);
  auto a = losses::sk_infonce(ag::constant(e), ag::constant(i), p), b = losses::sk_infonce(ag::constant(pe), ag::constant(pi), p);
  EXPECT_NEAR(a.total.item(), b.total.item(), 1e-9);
  EXPECT_NEAR(a.loss_sk.item(), b.loss_sk.item(), 1e-9);
  EXPECT_NEAR(a.loss_e.item(), b.loss_e.item(), 1e-9);
}

TEST(SkInfoNce, GradientCheck) {
  ag::Var e(random_tensor({4, 8}, 12), true);
  Tensor i = unit_rows({4, 8}, 13);
  auto p = params(0.8, 0.6);
  auto f = [&] { return losses::sk_infonce(losses::row_normalize(e), ag::constant(i), p).total; };
  EXPECT_LT(gradient_error(f, e), 1e-5);
  EXPECT_LT(gradient_error(f, p.tau), 1e-5);
  EXPECT_LT(gradient_error(f, p.beta), 1e-5);
  auto g = [&] { return losses::sk_infonce(e, ag::constant(i), p, {true, false}).total; };
  EXPECT_LT(gradient_error(g, e), 1e-5);
}

TEST(SkInfoNce, ImageSideGetsNoGradient) {
  ag::Var e(unit_rows({3, 4}, 14), true);
  ag::Var i = ag::constant(unit_rows({3, 4}, 15));
  losses::sk_infonce(e, i, params(0.1, 1.0)).total.backward();
  EXPECT_FALSE(i.has_grad());
  EXPECT_TRUE(e.has_grad());
}

TEST(LossParams, TemperatureInitAndCap) {
  auto p = losses::LossParams::create(std::log(1 / 0.07), 1.0);
  EXPECT_NEAR(p.logit_scale(), 14.2857, 1e-4);
  p.tau.mutable_value()[0] = 10.0;
  p.beta.mutable_value()[0] = -3.0;
  p.enforce_constraints();
  EXPECT_NEAR(p.logit_scale(), 100.0, 1e-9);
  EXPECT_EQ(p.beta.item(), 0.0);
}
