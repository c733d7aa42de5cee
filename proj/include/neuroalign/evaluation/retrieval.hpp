#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroalign/core/types.hpp"
#include "neuroalign/data/preprocess.hpp"
#include "neuroalign/training/checkpoint.hpp"

namespace neuroalign::evaluation {

struct RetrievalResult {
  std::vector<int> ranking;  // candidate indices, best first
  int ground_truth = -1;
  std::size_t n_candidates = 0;

  // Position of the ground truth in the ranking.
  std::size_t truth_rank() const {
    for (std::size_t r = 0; r < ranking.size(); ++r)
      if (ranking[r] == ground_truth) return r;
    throw std::logic_error("ground truth missing from ranking");
  }
};

// Candidates by descending cosine similarity; equal scores keep ascending candidate order.
inline RetrievalResult rank_scores(const std::vector<double>& scores, int ground_truth) {
  if (scores.empty()) throw std::invalid_argument("zero-shot ranking needs at least one candidate");
  RetrievalResult r;
  r.n_candidates = scores.size();
  r.ground_truth = ground_truth;
  r.ranking.resize(scores.size());
  std::iota(r.ranking.begin(), r.ranking.end(), 0);
  std::stable_sort(r.ranking.begin(), r.ranking.end(), [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  return r;
}

inline RetrievalResult zero_shot_rank(const double* eeg, const EmbeddingMatrix& candidates, int ground_truth = -1) {
  const std::size_t N = candidates.values.rank() == 2 ? candidates.rows() : 0;
  if (N < 1) throw std::invalid_argument("zero-shot ranking needs at least one candidate");
  const std::size_t d = candidates.dim();
  double ne = 0.0;
  for (std::size_t k = 0; k < d; ++k) ne += eeg[k] * eeg[k];
  ne = std::sqrt(ne);
  std::vector<double> scores(N);
  for (std::size_t j = 0; j < N; ++j) {
    const double* c = candidates.values.data() + j * d;
    double dot = 0.0, nc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      dot += eeg[k] * c[k];
      nc += c[k] * c[k];
    }
    scores[j] = dot / (ne * std::sqrt(nc) + 1e-12);
  }
  return rank_scores(scores, ground_truth);
}

inline RetrievalResult zero_shot_rank(const std::vector<double>& eeg, const EmbeddingMatrix& candidates, int ground_truth = -1) {
  if (eeg.size() != candidates.dim())
    throw ShapeError("EEG embedding has dimension " + std::to_string(eeg.size()) + ", candidates " + std::to_string(candidates.dim()));
  return zero_shot_rank(eeg.data(), candidates, ground_truth);
}

// Percentage of results whose ground truth is among the first k candidates.
inline double topk_accuracy(const std::vector<RetrievalResult>& results, std::size_t k) {
  if (results.empty()) throw std::invalid_argument("top-k accuracy of an empty result list");
  std::size_t hits = 0;
  for (const auto& r : results) {
    if (k < 1 || k > r.n_candidates)
      throw std::out_of_range("k = " + std::to_string(k) + " outside [1, " + std::to_string(r.n_candidates) + "]");
    if (r.truth_rank() < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

struct AccuracyReport {
  std::string method;
  std::string subject_id;
  std::size_t n_candidates = 0;
  std::size_t n_trials = 0;
  std::map<int, double> mean;                      // k -> percentage
  std::map<int, double> std;                       // k -> spread across seeds
  std::map<int, std::vector<double>> per_seed;     // k -> one value per seed
  std::vector<std::int64_t> seeds;

  double top(int k) const {
    auto it = mean.find(k);
    if (it == mean.end()) throw std::out_of_range("report has no top-" + std::to_string(k));
    return it->second;
  }
  double top1() const { return top(1); }
  double top5() const { return top(5); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"method", method}, {"subject_id", subject_id}, {"n_candidates", n_candidates}, {"n_trials", n_trials},
                     {"seeds", seeds}};
    for (const auto& [k, v] : mean) {
      const std::string key = "top" + std::to_string(k);
      j[key] = v;
      j[key + "_std"] = std.count(k) ? std.at(k) : 0.0;
      j[key + "_per_seed"] = per_seed.count(k) ? per_seed.at(k) : std::vector<double>{};
    }
    return j;
  }

  static AccuracyReport from_json(const nlohmann::json& j) {
    AccuracyReport r;
    r.method = j.value("method", "");
    r.subject_id = j.value("subject_id", "");
    r.n_candidates = j.value("n_candidates", std::size_t{0});
    r.n_trials = j.value("n_trials", std::size_t{0});
    r.seeds = j.value("seeds", std::vector<std::int64_t>{});
    for (const auto& [key, v] : j.items()) {
      if (key.rfind("top", 0) != 0 || key.find('_') != std::string::npos) continue;
      const int k = std::stoi(key.substr(3));
      r.mean[k] = v.get<double>();
      r.std[k] = j.value(key + "_std", 0.0);
      r.per_seed[k] = j.value(key + "_per_seed", std::vector<double>{});
    }
    return r;
  }
};

// Mean and population standard deviation across seeds.
inline AccuracyReport aggregate_seeds(const std::vector<AccuracyReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_seeds needs at least one report");
  AccuracyReport out;
  out.method = reports.front().method;
  out.subject_id = reports.front().subject_id;
  out.n_candidates = reports.front().n_candidates;
  out.n_trials = reports.front().n_trials;
  for (const auto& r : reports) {
    if (r.method != out.method || r.subject_id != out.subject_id)
      throw std::invalid_argument("aggregate_seeds mixes methods or subjects");
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    for (const auto& [k, v] : r.mean) out.per_seed[k].push_back(v);
  }
  for (const auto& [k, vals] : out.per_seed) {
    if (vals.size() != reports.size()) throw std::invalid_argument("reports disagree on the top-k set");
    double m = 0.0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - m) * (v - m);
    out.mean[k] = m;
    out.std[k] = std::sqrt(var / static_cast<double>(vals.size()));
  }
  return out;
}

struct EvalOptions {
  std::vector<int> top_k{1, 5};
  bool average_repetitions = true;  // average test repetitions per image before ranking
  std::string method;
};

// Embeds every test trial and ranks it against all candidates; row j of `candidates` is test image j.
inline std::vector<RetrievalResult> retrieve(encoders::EegModel& model, const EEGTrialSet& test, const EmbeddingMatrix& candidates) {
  std::map<int, int> label_of_image;
  for (std::size_t i = 0; i < test.n_trials(); ++i) {
    const int id = test.image_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= candidates.rows())
      throw DataError("test trial " + std::to_string(i) + " refers to image " + std::to_string(id) + " but only " +
                      std::to_string(candidates.rows()) + " candidates exist");
    auto [it, fresh] = label_of_image.emplace(id, test.labels[i]);
    if (!fresh && it->second != test.labels[i])
      throw DataError("test image " + std::to_string(id) + " appears under two labels");
  }
  EmbeddingMatrix emb = model.embed_trials(test);
  std::vector<RetrievalResult> out;
  out.reserve(test.n_trials());
  for (std::size_t i = 0; i < test.n_trials(); ++i)
    out.push_back(zero_shot_rank(emb.values.data() + i * emb.dim(), candidates, test.image_ids[i]));
  return out;
}

inline AccuracyReport evaluate_model(encoders::EegModel& model, const EEGTrialSet& test, const EmbeddingMatrix& candidates,
                                     const EvalOptions& opt, std::int64_t seed = 0) {
  const EEGTrialSet set = opt.average_repetitions && !test.repetitions_averaged ? data::average_repetitions(test) : test;
  const auto results = retrieve(model, set, candidates);
  AccuracyReport r;
  r.method = opt.method;
  r.subject_id = test.subject_id;
  r.n_candidates = candidates.rows();
  r.n_trials = results.size();
  r.seeds = {seed};
  for (int k : opt.top_k) {
    const double v = topk_accuracy(results, static_cast<std::size_t>(k));
    r.mean[k] = v;
    r.std[k] = 0.0;
    r.per_seed[k] = {v};
  }
  return r;
}

inline AccuracyReport evaluate_checkpoint(const training::Checkpoint& ckpt, const EEGTrialSet& test,
                                          const EmbeddingMatrix& candidates, EvalOptions opt) {
  auto model = training::restore_model(ckpt);
  if (opt.method.empty()) opt.method = ckpt.config.encoder_name;
  return evaluate_model(*model, test, candidates, opt, ckpt.config.seed);
}

// Table-style grid: one row per subject, a top-1 and top-5 column per method, plus the average.
inline std::string render_table(const std::vector<AccuracyReport>& reports, const std::vector<int>& ks = {1, 5}) {
  std::vector<std::string> methods, subjects;
  std::map<std::pair<std::string, std::string>, const AccuracyReport*> cell;
  for (const auto& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(subjects.begin(), subjects.end(), r.subject_id) == subjects.end()) subjects.push_back(r.subject_id);
    cell[{r.subject_id, r.method}] = &r;
  }
  std::ostringstream os;
  os << "| Subject |";
  for (const auto& m : methods)
    for (int k : ks) os << ' ' << m << " top-" << k << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < methods.size() * ks.size(); ++i) os << "---|";
  os << '\n';
  auto fmt = [](double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << v;
    return s.str();
  };
  std::map<std::pair<std::string, int>, std::vector<double>> column;
  for (const auto& s : subjects) {
    os << "| " << s << " |";
    for (const auto& m : methods)
      for (int k : ks) {
        auto it = cell.find({s, m});
        if (it == cell.end() || !it->second->mean.count(k)) {
          os << " - |";
          continue;
        }
        const AccuracyReport& r = *it->second;
        column[{m, k}].push_back(r.mean.at(k));
        os << ' ' << fmt(r.mean.at(k));
        if (r.per_seed.count(k) && r.per_seed.at(k).size() > 1) os << " ± " << fmt(r.std.at(k));
        os << " |";
      }
    os << '\n';
  }
  if (subjects.size() > 1) {
    os << "| Ave |";
    for (const auto& m : methods)
      for (int k : ks) {
        const auto& v = column[{m, k}];
        if (v.empty()) {
          os << " - |";
          continue;
        }
        os << ' ' << fmt(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size())) << " |";
      }
    os << '\n';
  }
  return os.str();
}

}  // namespace neuroalign::evaluation
