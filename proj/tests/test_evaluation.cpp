#include <gtest/gtest.h>

#include "neuroalign/evaluation/retrieval.hpp"
#include "neuroalign/evaluation/wilcoxon.hpp"
#include "neuroalign/experiment.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace neuroalign;
using namespace neuroalign::evaluation;
using testutil::random_tensor;

namespace {

EmbeddingMatrix rows(const Tensor& t) { return EmbeddingMatrix{t, false}; }

RetrievalResult with_truth_at(std::size_t rank, std::size_t n) {
  RetrievalResult r;
  r.n_candidates = n;
  r.ranking.resize(n);
  std::iota(r.ranking.begin(), r.ranking.end(), 0);
  r.ground_truth = static_cast<int>(rank);
  return r;
}

AccuracyReport report(const std::string& method, const std::string& subject, double top1, double top5, std::int64_t seed = 0) {
  AccuracyReport r;
  r.method = method;
  r.subject_id = subject;
  r.n_candidates = 200;
  r.n_trials = 200;
  r.mean = {{1, top1}, {5, top5}};
  r.std = {{1, 0.0}, {5, 0.0}};
  r.per_seed = {{1, {top1}}, {5, {top5}}};
  r.seeds = {seed};
  return r;
}

}  // namespace

TEST(Retrieval, ExactMatchRanksFirst) {
  Tensor c = random_tensor({6, 5}, 1);
  for (int j = 0; j < 6; ++j) {
    std::vector<double> q(c.data() + j * 5, c.data() + j * 5 + 5);
    EXPECT_EQ(zero_shot_rank(q, rows(c), j).truth_rank(), 0u);
  }
}

TEST(Retrieval, TiesKeepCandidateOrder) {
  // Query orthogonal to every candidate: all scores 0.
  Tensor c({4, 3}, std::vector<double>{0, 1, 0, 0, 0, 1, 0, 2, 0, 0, 0, 3});
  auto r = zero_shot_rank(std::vector<double>{1, 0, 0}, rows(c), 2);
  EXPECT_EQ(r.ranking, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(r.truth_rank(), 2u);
}

TEST(Retrieval, RankingMatchesArgsortOfCosines) {
  Tensor c = random_tensor({50, 8}, 2), q = random_tensor({8}, 3);
  oracle::Rows cand(50);
  for (std::size_t j = 0; j < 50; ++j) cand[j].assign(c.data() + j * 8, c.data() + j * 8 + 8);
  std::vector<double> query(q.data(), q.data() + 8);
  std::vector<int> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  std::sort(expect.begin(), expect.end(), [&](int a, int b) { return oracle::cosine(query, cand[a]) > oracle::cosine(query, cand[b]); });
  EXPECT_EQ(zero_shot_rank(query, rows(c), 0).ranking, expect);
}

TEST(Retrieval, ScaleInvariant) {
  Tensor c = random_tensor({20, 6}, 4), q = random_tensor({6}, 5);
  Tensor c2 = c;
  for (std::size_t j = 0; j < 20; ++j)
    for (std::size_t k = 0; k < 6; ++k) c2.at(j, k) *= 0.5 + static_cast<double>(j);
  std::vector<double> query(q.data(), q.data() + 6), query2 = query;
  for (double& v : query2) v *= 7.0;
  EXPECT_EQ(zero_shot_rank(query, rows(c), 0).ranking, zero_shot_rank(query2, rows(c2), 0).ranking);
}

TEST(Retrieval, DimensionMismatchThrows) {
  EXPECT_THROW(zero_shot_rank(std::vector<double>{1, 0}, rows(random_tensor({3, 4}, 6)), 0), ShapeError);
}

TEST(TopK, KnownRanks) {
  std::vector<RetrievalResult> res;
  for (std::size_t r : {0u, 1u, 4u, 9u}) res.push_back(with_truth_at(r, 20));
  EXPECT_DOUBLE_EQ(topk_accuracy(res, 1), 25.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(res, 5), 75.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(res, 10), 100.0);
  EXPECT_THROW(topk_accuracy(res, 0), std::out_of_range);
  EXPECT_THROW(topk_accuracy(res, 21), std::out_of_range);
  EXPECT_THROW(topk_accuracy({}, 1), std::invalid_argument);
}

TEST(TopK, PerfectEmbeddingsScoreHundred) {
  Tensor c = random_tensor({30, 10}, 7);
  std::vector<RetrievalResult> res;
  for (int j = 0; j < 30; ++j) res.push_back(zero_shot_rank(c.data() + j * 10, rows(c), j));
  EXPECT_DOUBLE_EQ(topk_accuracy(res, 1), 100.0);
}

TEST(TopK, MonotoneInKAndMatchesOracle) {
  Tensor c = random_tensor({40, 6}, 8), q = random_tensor({300, 6}, 9);
  std::vector<RetrievalResult> res;
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < 300; ++i) {
    res.push_back(zero_shot_rank(q.data() + i * 6, rows(c), static_cast<int>(i % 40)));
    ranks.push_back(res.back().truth_rank());
  }
  double prev = 0.0;
  for (std::size_t k = 1; k <= 40; ++k) {
    const double v = topk_accuracy(res, k);
    EXPECT_GE(v, prev);
    EXPECT_DOUBLE_EQ(v, oracle::topk(ranks, k));
    prev = v;
  }
  EXPECT_DOUBLE_EQ(prev, 100.0);
}

TEST(TopK, RandomEmbeddingsSitAtChance) {
  const std::size_t N = 20, n = 4000;
  Tensor c = random_tensor({N, 16}, 10), q = random_tensor({n, 16}, 11);
  std::vector<RetrievalResult> res;
  for (std::size_t i = 0; i < n; ++i) res.push_back(zero_shot_rank(q.data() + i * 16, rows(c), static_cast<int>(i % N)));
  for (std::size_t k : {1u, 5u}) {
    const double p = static_cast<double>(k) / N, sigma = 100.0 * std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(topk_accuracy(res, k), 100.0 * p, 3 * sigma) << "k = " << k;
  }
}

TEST(Aggregate, MeanAndPopulationStd) {
  auto a = aggregate_seeds({report("m", "s", 10, 50, 0), report("m", "s", 20, 60, 1)});
  EXPECT_DOUBLE_EQ(a.top1(), 15.0);
  EXPECT_DOUBLE_EQ(a.std.at(1), 5.0);
  EXPECT_EQ(a.seeds, (std::vector<std::int64_t>{0, 1}));
  auto same = aggregate_seeds({report("m", "s", 33, 70), report("m", "s", 33, 70), report("m", "s", 33, 70)});
  EXPECT_DOUBLE_EQ(same.top1(), 33.0);
  EXPECT_DOUBLE_EQ(same.std.at(1), 0.0);
}

TEST(Aggregate, StdMatchesTwoPassOracle) {
  std::vector<double> v{12.5, 14.0, 9.5, 17.0, 11.0};
  std::vector<AccuracyReport> reps;
  for (std::size_t i = 0; i < v.size(); ++i) reps.push_back(report("m", "s", v[i], 50, static_cast<std::int64_t>(i)));
  double m = 0, ss = 0;
  for (double x : v) m += x / 5;
  for (double x : v) ss += (x - m) * (x - m);
  auto a = aggregate_seeds(reps);
  EXPECT_NEAR(a.top1(), m, 1e-12);
  EXPECT_NEAR(a.std.at(1), std::sqrt(ss / 5), 1e-12);
  EXPECT_EQ(a.per_seed.at(1), v);
}

TEST(Aggregate, RejectsMixedReports) {
  EXPECT_THROW(aggregate_seeds({report("a", "s", 1, 2), report("b", "s", 1, 2)}), std::invalid_argument);
  EXPECT_THROW(aggregate_seeds({}), std::invalid_argument);
}

TEST(Report, JsonRoundTrip) {
  auto a = aggregate_seeds({report("m", "sub-03", 10, 50, 0), report("m", "sub-03", 20, 60, 4)});
  auto b = AccuracyReport::from_json(a.to_json());
  EXPECT_EQ(b.to_json(), a.to_json());
  EXPECT_DOUBLE_EQ(b.top5(), 55.0);
  EXPECT_THROW(b.top(10), std::out_of_range);
}

TEST(Report, TableHasOneRowPerSubjectAndAverage) {
  auto t = render_table({report("A", "sub-01", 10, 40), report("B", "sub-01", 20, 50), report("A", "sub-02", 30, 60),
                         report("B", "sub-02", 40, 70)});
  EXPECT_NE(t.find("| Subject | A top-1 | A top-5 | B top-1 | B top-5 |"), std::string::npos) << t;
  EXPECT_NE(t.find("| sub-01 | 10.0 | 40.0 | 20.0 | 50.0 |"), std::string::npos) << t;
  EXPECT_NE(t.find("| Ave | 20.0 | 50.0 | 30.0 | 60.0 |"), std::string::npos) << t;
  auto seeded = render_table({aggregate_seeds({report("A", "s", 10, 40), report("A", "s", 20, 50)})});
  EXPECT_NE(seeded.find("15.0 ± 5.0"), std::string::npos) << seeded;
}

TEST(Wilcoxon, AllTiedIsDegenerate) {
  std::vector<double> a{1, 2, 3, 4};
  auto r = wilcoxon_signed_rank(a, a);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.n_used, 0u);
}

TEST(Wilcoxon, SixConsistentWinsGiveExactP) {
  std::vector<double> a{5, 6, 7, 8, 9, 10}, b{4.9, 5.8, 6.7, 7.6, 8.5, 9.4};
  auto r = wilcoxon_signed_rank(a, b);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(r.w_plus, 21.0);
  EXPECT_DOUBLE_EQ(r.p_value, 0.03125);  // 2 / 2^6
  std::vector<double> d;
  for (std::size_t i = 0; i < 6; ++i) d.push_back(a[i] - b[i]);
  EXPECT_DOUBLE_EQ(r.p_value, oracle::wilcoxon_exact_p(d));
}

TEST(Wilcoxon, ExactMatchesEnumerationOnRandomPairs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = random_tensor({2, 10}, 100 + seed);
    std::vector<double> a(x.data(), x.data() + 10), b(x.data() + 10, x.data() + 20), d;
    for (std::size_t i = 0; i < 10; ++i) d.push_back(a[i] - b[i]);
    EXPECT_NEAR(wilcoxon_signed_rank(a, b).p_value, oracle::wilcoxon_exact_p(d), 1e-12) << seed;
  }
}

TEST(Wilcoxon, NormalApproximationTracksEnumeration) {
  Tensor x = random_tensor({2, 16}, 7);
  std::vector<double> a(x.data(), x.data() + 16), b(x.data() + 16, x.data() + 32), d;
  for (std::size_t i = 0; i < 16; ++i) d.push_back(a[i] - b[i] + 0.3);
  for (std::size_t i = 0; i < 16; ++i) a[i] += 0.3;
  auto r = wilcoxon_signed_rank(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_NEAR(r.p_value, oracle::wilcoxon_exact_p(d), 0.01);
}

TEST(Wilcoxon, SwappingSamplesKeepsP) {
  Tensor x = random_tensor({2, 8}, 12);
  std::vector<double> a(x.data(), x.data() + 8), b(x.data() + 8, x.data() + 16);
  auto ab = wilcoxon_signed_rank(a, b), ba = wilcoxon_signed_rank(b, a);
  EXPECT_DOUBLE_EQ(ab.p_value, ba.p_value);
  EXPECT_DOUBLE_EQ(ab.w_plus, ba.w_minus);
  EXPECT_THROW(wilcoxon_signed_rank(a, {1.0}), std::invalid_argument);
}

TEST(Evaluate, DeterministicAndNearChanceWhenUntrained) {
  ExperimentConfig cfg;
  cfg.embedding_dim = 16;
  cfg.n_electrodes = 8;
  cfg.n_timepoints = 32;
  cfg.encoder.n_maps = 4;
  cfg.encoder.temporal_kernel = 5;
  cfg.encoder.pool_kernel = 2;
  cfg.encoder.pool_stride = 2;
  cfg.synthetic.n_classes = 60;
  cfg.synthetic.n_test_classes = 40;
  cfg.synthetic.latent_dim = 4;
  auto splits = data::synthetic_splits(cfg);
  encoders::EegModel model(encoders::EncoderSpec::from_config(cfg), 16, 0);
  EvalOptions opt;
  auto a = evaluate_model(model, splits.test, splits.test_images, opt);
  auto b = evaluate_model(model, splits.test, splits.test_images, opt);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.n_trials, 40u);  // repetitions averaged to one trial per image
  EXPECT_EQ(a.n_candidates, 40u);
  // Across 20 independent initializations the mean top-5 stays within 3 sigma of 12.5 %.
  std::vector<double> top5;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    encoders::EegModel m(encoders::EncoderSpec::from_config(cfg), 16, seed);
    top5.push_back(evaluate_model(m, splits.test, splits.test_images, opt).top5());
  }
  const double mean = std::accumulate(top5.begin(), top5.end(), 0.0) / 20;
  const double sigma = 100.0 * std::sqrt(0.125 * 0.875 / (40.0 * 20.0));
  EXPECT_NEAR(mean, 12.5, 3 * sigma);
}

TEST(Evaluate, CandidateOutsideTableIsAnError) {
  ExperimentConfig cfg;
  cfg.embedding_dim = 16;
  cfg.n_electrodes = 8;
  cfg.n_timepoints = 32;
  cfg.encoder.n_maps = 4;
  cfg.encoder.pool_kernel = 2;
  cfg.encoder.pool_stride = 2;
  cfg.encoder.temporal_kernel = 5;
  cfg.synthetic.n_classes = 10;
  cfg.synthetic.n_test_classes = 4;
  cfg.synthetic.latent_dim = 4;
  auto splits = data::synthetic_splits(cfg);
  encoders::EegModel model(encoders::EncoderSpec::from_config(cfg), 16, 0);
  EmbeddingMatrix short_table{Tensor({2, 16}, 1.0), false};
  EXPECT_THROW(evaluate_model(model, splits.test, short_table, {}), DataError);
}
