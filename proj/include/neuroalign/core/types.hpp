#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroalign/tensor.hpp"

namespace neuroalign {

enum class Split { kTrain, kVal, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Preprocessed EEG trials of one subject: data is (n_trials, n_electrodes, n_timepoints) in microvolts.
// image_ids index rows of the split's image-embedding matrix.
struct EEGTrialSet {
  Tensor data;
  std::vector<int> labels;
  std::vector<int> image_ids;
  std::string subject_id;
  double sampling_rate_hz = 250.0;
  Split split = Split::kTrain;
  // Processing history; repetition averaging must follow baseline correction.
  bool baseline_corrected = false;
  bool repetitions_averaged = false;

  std::size_t n_trials() const { return data.rank() == 3 ? data.dim(0) : 0; }
  std::size_t n_electrodes() const { return data.dim(1); }
  std::size_t n_timepoints() const { return data.dim(2); }

  void validate(std::optional<double> window_seconds = std::nullopt) const {
    if (data.rank() != 3) throw DataError("EEG data must be (trials, electrodes, time), got " + shape_str(data.shape()));
    if (!data.all_finite()) throw DataError("EEG data for '" + subject_id + "' contains NaN or Inf");
    if (labels.size() != n_trials() || image_ids.size() != n_trials())
      throw DataError("labels/image_ids length does not match the trial count");
    if (!(sampling_rate_hz > 0)) throw DataError("sampling_rate_hz must be positive");
    if (window_seconds && static_cast<long>(n_timepoints()) != std::lround(sampling_rate_hz * *window_seconds))
      throw DataError("n_timepoints " + std::to_string(n_timepoints()) + " does not match " +
                      std::to_string(sampling_rate_hz) + " Hz x " + std::to_string(*window_seconds) + " s");
  }

  // Trials at the given indices, in order.
  EEGTrialSet subset(const std::vector<std::size_t>& idx) const {
    EEGTrialSet out;
    out.subject_id = subject_id;
    out.sampling_rate_hz = sampling_rate_hz;
    out.split = split;
    out.baseline_corrected = baseline_corrected;
    out.repetitions_averaged = repetitions_averaged;
    const std::size_t per = n_electrodes() * n_timepoints();
    out.data = Tensor({idx.size(), n_electrodes(), n_timepoints()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(data.data() + idx[k] * per, per, out.data.data() + k * per);
      out.labels.push_back(labels[idx[k]]);
      out.image_ids.push_back(image_ids[idx[k]]);
    }
    return out;
  }
};

// Rows of d-dimensional embeddings.
struct EmbeddingMatrix {
  Tensor values;  // (n, d)
  bool normalized = false;

  std::size_t rows() const { return values.dim(0); }
  std::size_t dim() const { return values.dim(1); }

  // Normalized rows must have unit norm; exact-zero rows are exempt.
  bool check_normalized(double tol = 1e-6) const {
    for (std::size_t i = 0; i < rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim(); ++j) s += values.at(i, j) * values.at(i, j);
      if (s == 0.0) continue;
      if (std::abs(std::sqrt(s) - 1.0) > tol) return false;
    }
    return true;
  }
};

struct SimilarityMatrix {
  Tensor values;  // (n, m)
};

}  // namespace neuroalign
