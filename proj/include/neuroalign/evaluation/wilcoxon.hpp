#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace neuroalign::evaluation {

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;     // rank sum of positive a - b
  double w_minus = 0.0;
  double p_value = 1.0;    // two-sided
  std::size_t n_used = 0;  // pairs left after dropping zero differences
  bool exact = false;
  bool degenerate = false;  // every pair tied

  nlohmann::json to_json() const {
    return {{"statistic", statistic}, {"w_plus", w_plus},   {"w_minus", w_minus},      {"p_value", p_value},
            {"n_used", n_used},       {"exact", exact},     {"degenerate", degenerate}};
  }
};

inline constexpr std::size_t kWilcoxonExactMax = 12;

// Paired two-sided signed-rank test. Zero differences are dropped; tied magnitudes get midranks.
// Exact enumeration of all 2^n sign patterns for n <= 12, otherwise the normal approximation
// with continuity and tie corrections.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: samples must be paired (equal lengths)");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) diff.push_back(a[i] - b[i]);
  WilcoxonResult r;
  r.n_used = diff.size();
  if (diff.empty()) {
    r.degenerate = true;
    r.p_value = 1.0;
    return r;
  }
  const std::size_t n = diff.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return std::abs(diff[x]) < std::abs(diff[y]); });
  std::vector<double> rank(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diff[idx[j + 1]]) == std::abs(diff[idx[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  for (std::size_t i = 0; i < n; ++i) (diff[i] > 0 ? r.w_plus : r.w_minus) += rank[i];
  r.statistic = std::min(r.w_plus, r.w_minus);

  if (n <= kWilcoxonExactMax) {
    r.exact = true;
    // Doubled ranks are integers even with midranks.
    std::vector<long> r2(n);
    long total = 0;
    for (std::size_t i = 0; i < n; ++i) total += r2[i] = std::lround(2.0 * rank[i]);
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      for (long s = total; s >= r2[i]; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r2[i])];
    const long obs = std::lround(2.0 * r.w_plus);
    double lo = 0.0, hi = 0.0;
    for (long s = 0; s <= total; ++s) {
      if (s <= obs) lo += count[static_cast<std::size_t>(s)];
      if (s >= obs) hi += count[static_cast<std::size_t>(s)];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    r.p_value = std::min(1.0, 2.0 * std::min(lo, hi) / all);
    return r;
  }
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

}  // namespace neuroalign::evaluation
