#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuroalign/core/types.hpp"

namespace neuroalign::data {

inline std::size_t ms_to_samples(double ms, double fs) { return static_cast<std::size_t>(std::lround(ms * fs / 1000.0)); }

struct PreprocessOptions {
  double pre_stimulus_ms = 200.0;
  double window_ms = 1000.0;  // kept segment after onset
};

// Per trial and channel: subtract the pre-stimulus mean, then keep [onset, onset + window).
// The raw trial must start pre_stimulus_ms before onset.
inline EEGTrialSet preprocess_trials(const EEGTrialSet& raw, const PreprocessOptions& opt) {
  if (raw.data.rank() != 3) throw DataError("raw EEG must be (trials, electrodes, time), got " + shape_str(raw.data.shape()));
  if (raw.repetitions_averaged) throw DataError("baseline correction must run before repetition averaging");
  const double fs = raw.sampling_rate_hz;
  const std::size_t pre = ms_to_samples(opt.pre_stimulus_ms, fs);
  const std::size_t keep = ms_to_samples(opt.window_ms, fs);
  if (pre == 0) throw DataError("pre-stimulus window is empty; the baseline is undefined");
  const std::size_t n = raw.n_trials(), E = raw.n_electrodes(), T = raw.n_timepoints();
  if (pre + keep > T) {
    throw DataError("raw trials have " + std::to_string(T) + " samples, need " + std::to_string(pre) + " pre-stimulus + " +
                    std::to_string(keep) + " post-stimulus");
  }
  if (!raw.data.all_finite()) throw DataError("raw EEG for '" + raw.subject_id + "' contains NaN or Inf");
  EEGTrialSet out;
  out.labels = raw.labels;
  out.image_ids = raw.image_ids;
  out.subject_id = raw.subject_id;
  out.sampling_rate_hz = fs;
  out.split = raw.split;
  out.baseline_corrected = true;
  out.data = Tensor({n, E, keep});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < E; ++e) {
      const double* src = raw.data.data() + (i * E + e) * T;
      double base = 0.0;
      for (std::size_t t = 0; t < pre; ++t) base += src[t];
      base /= static_cast<double>(pre);
      double* dst = out.data.data() + (i * E + e) * keep;
      for (std::size_t t = 0; t < keep; ++t) dst[t] = src[pre + t] - base;
    }
  return out;
}

// One trial per image id (ascending), the mean over its repetitions. When `expected_ids` is
// given, every listed id must have at least one repetition.
inline EEGTrialSet average_repetitions(const EEGTrialSet& trials, const std::optional<std::vector<int>>& expected_ids = std::nullopt) {
  if (!trials.baseline_corrected) throw DataError("repetition averaging requires baseline-corrected trials");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < trials.n_trials(); ++i) groups[trials.image_ids[i]].push_back(i);
  if (expected_ids) {
    std::vector<int> missing;
    for (int id : *expected_ids)
      if (!groups.count(id)) missing.push_back(id);
    if (!missing.empty()) {
      std::string list;
      for (int id : missing) list += (list.empty() ? "" : ", ") + std::to_string(id);
      throw DataError("no repetitions for image ids: " + list);
    }
  }
  const std::size_t E = trials.n_electrodes(), T = trials.n_timepoints(), per = E * T;
  EEGTrialSet out;
  out.subject_id = trials.subject_id;
  out.sampling_rate_hz = trials.sampling_rate_hz;
  out.split = trials.split;
  out.baseline_corrected = true;
  out.repetitions_averaged = true;
  out.data = Tensor({groups.size(), E, T});
  std::size_t row = 0;
  for (const auto& [id, members] : groups) {
    const int label = trials.labels[members.front()];
    double* dst = out.data.data() + row * per;
    for (std::size_t m : members) {
      if (trials.labels[m] != label) throw DataError("image id " + std::to_string(id) + " carries conflicting labels");
      const double* src = trials.data.data() + m * per;
      for (std::size_t k = 0; k < per; ++k) dst[k] += src[k];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t k = 0; k < per; ++k) dst[k] *= inv;
    out.labels.push_back(label);
    out.image_ids.push_back(id);
    ++row;
  }
  return out;
}

}  // namespace neuroalign::data
