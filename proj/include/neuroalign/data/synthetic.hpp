#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroalign/core/config.hpp"
#include "neuroalign/core/types.hpp"
#include "neuroalign/data/embeddings.hpp"
#include "neuroalign/random.hpp"

namespace neuroalign::data {

// Desk-scale stand-in for an EEG/image corpus with a known generative model.
struct SyntheticSpec {
  std::size_t n_classes = 100;
  std::size_t n_test_classes = 20;
  std::size_t trials_per_class = 10;       // train: one image (and one trial) each
  std::size_t test_trials_per_class = 10;  // test: one image, this many repetitions
  std::size_t latent_dim = 8;
  std::size_t n_electrodes = 64;
  std::size_t n_timepoints = 250;
  std::size_t embedding_dim = 512;
  double sampling_rate_hz = 250.0;
  double sigma_eeg = 0.1;
  double sigma_img = 0.05;

  static SyntheticSpec from_config(const ExperimentConfig& c) {
    SyntheticSpec s;
    s.n_classes = static_cast<std::size_t>(c.synthetic.n_classes);
    s.n_test_classes = static_cast<std::size_t>(c.synthetic.n_test_classes);
    s.trials_per_class = static_cast<std::size_t>(c.synthetic.trials_per_class);
    s.test_trials_per_class = static_cast<std::size_t>(c.synthetic.test_trials_per_class);
    s.latent_dim = static_cast<std::size_t>(c.synthetic.latent_dim);
    s.n_electrodes = static_cast<std::size_t>(c.n_electrodes);
    s.n_timepoints = static_cast<std::size_t>(c.n_timepoints);
    s.embedding_dim = static_cast<std::size_t>(c.embedding_dim);
    s.sampling_rate_hz = c.data.sampling_rate_hz;
    s.sigma_eeg = c.synthetic.sigma_eeg;
    s.sigma_img = c.synthetic.sigma_img;
    return s;
  }

  nlohmann::json to_json() const {
    return {{"n_classes", n_classes},         {"n_test_classes", n_test_classes},
            {"trials_per_class", trials_per_class}, {"test_trials_per_class", test_trials_per_class},
            {"latent_dim", latent_dim},       {"n_electrodes", n_electrodes},
            {"n_timepoints", n_timepoints},   {"embedding_dim", embedding_dim},
            {"sampling_rate_hz", sampling_rate_hz}, {"sigma_eeg", sigma_eeg},
            {"sigma_img", sigma_img}};
  }
};

struct SyntheticDataset {
  EEGTrialSet train;
  EEGTrialSet test;
  EmbeddingMatrix train_images;  // row = train image id
  EmbeddingMatrix test_images;   // row = test image id (one per test class)
  std::vector<int> train_classes;
  std::vector<int> test_classes;
  // Generative model, exposed for oracles.
  Tensor mixing;     // (E, L)
  Tensor envelopes;  // (L, T)
  Tensor latents;    // (n_classes, L), unit rows
};

namespace detail {

inline std::vector<double> unit_gaussian(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) {
    x = gaussian(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

}  // namespace detail

// Noise-free class signal: x(e, t) = sum_j A[e, j] z[j] g_j(t).
inline void synthetic_signal(const Tensor& A, const Tensor& g, const double* z, double* out) {
  const std::size_t E = A.dim(0), L = A.dim(1), T = g.dim(1);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) s += A[e * L + j] * z[j] * g[j * T + t];
      out[e * T + t] = s;
    }
}

inline SyntheticDataset generate_synthetic(const SyntheticSpec& s, std::uint64_t seed) {
  if (s.n_test_classes < 2 || s.n_classes < s.n_test_classes + 2)
    throw DataError("synthetic data needs at least 2 train and 2 test classes, got " + std::to_string(s.n_classes) +
                    " classes with " + std::to_string(s.n_test_classes) + " held out");
  if (s.latent_dim == 0 || s.latent_dim > s.embedding_dim)
    throw DataError("synthetic latent_dim must lie in [1, embedding_dim]");
  if (s.trials_per_class == 0 || s.test_trials_per_class == 0) throw DataError("synthetic trial counts must be positive");
  const std::size_t C = s.n_classes, L = s.latent_dim, E = s.n_electrodes, T = s.n_timepoints, d = s.embedding_dim;

  SyntheticDataset out;
  out.latents = Tensor({C, L});
  {
    Rng rng = derive_rng(seed, "synthetic-latents");
    for (std::size_t k = 0; k < C; ++k) {
      auto z = detail::unit_gaussian(rng, L);
      std::copy(z.begin(), z.end(), out.latents.data() + k * L);
    }
  }
  out.mixing = Tensor({E, L});
  {
    Rng rng = derive_rng(seed, "synthetic-mixing");
    for (double& v : out.mixing.storage()) v = gaussian(rng);
  }
  // Gaussian bumps times a cosine carrier, in units of the window length.
  out.envelopes = Tensor({L, T});
  {
    Rng rng = derive_rng(seed, "synthetic-envelopes");
    for (std::size_t j = 0; j < L; ++j) {
      const double centre = uniform(rng, 0.15, 0.85), width = uniform(rng, 0.06, 0.15);
      const double cycles = uniform(rng, 1.0, 6.0), phase = uniform(rng, 0.0, 2.0 * M_PI);
      for (std::size_t t = 0; t < T; ++t) {
        const double u = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
        const double bump = std::exp(-0.5 * (u - centre) * (u - centre) / (width * width));
        out.envelopes[j * T + t] = bump * std::cos(2.0 * M_PI * cycles * u + phase);
      }
    }
  }

  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  {
    Rng rng = derive_rng(seed, "synthetic-split");
    std::shuffle(order.begin(), order.end(), rng);
  }
  out.test_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s.n_test_classes));
  out.train_classes.assign(order.begin() + static_cast<std::ptrdiff_t>(s.n_test_classes), order.end());
  std::sort(out.test_classes.begin(), out.test_classes.end());
  std::sort(out.train_classes.begin(), out.train_classes.end());

  Rng img_rng = derive_rng(seed, "synthetic-images");
  auto image_row = [&](int cls, double* dst) {
    for (std::size_t k = 0; k < d; ++k) dst[k] = (k < L ? out.latents[static_cast<std::size_t>(cls) * L + k] : 0.0) + s.sigma_img * gaussian(img_rng);
    double n = 0.0;
    for (std::size_t k = 0; k < d; ++k) n += dst[k] * dst[k];
    n = std::sqrt(n) + 1e-12;
    for (std::size_t k = 0; k < d; ++k) dst[k] /= n;
  };

  std::vector<double> clean(E * T);
  auto fill_split = [&](EEGTrialSet& set, const std::vector<int>& classes, std::size_t per_class, bool one_image_per_class,
                        EmbeddingMatrix& images, Split split, const char* stream) {
    Rng rng = derive_rng(seed, stream);
    const std::size_t n = classes.size() * per_class;
    const std::size_t n_images = one_image_per_class ? classes.size() : n;
    set.data = Tensor({n, E, T});
    set.subject_id = "synthetic";
    set.sampling_rate_hz = s.sampling_rate_hz;
    set.split = split;
    set.baseline_corrected = true;
    images = EmbeddingMatrix{Tensor({n_images, d}), true};
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
      const int cls = classes[ci];
      synthetic_signal(out.mixing, out.envelopes, out.latents.data() + static_cast<std::size_t>(cls) * L, clean.data());
      if (one_image_per_class) image_row(cls, images.values.data() + ci * d);
      for (std::size_t r = 0; r < per_class; ++r, ++row) {
        double* dst = set.data.data() + row * E * T;
        for (std::size_t k = 0; k < E * T; ++k) dst[k] = clean[k] + s.sigma_eeg * gaussian(rng);
        const int image = static_cast<int>(one_image_per_class ? ci : row);
        if (!one_image_per_class) image_row(cls, images.values.data() + row * d);
        set.labels.push_back(cls);
        set.image_ids.push_back(image);
      }
    }
  };
  fill_split(out.train, out.train_classes, s.trials_per_class, false, out.train_images, Split::kTrain, "synthetic-eeg-train");
  fill_split(out.test, out.test_classes, s.test_trials_per_class, true, out.test_images, Split::kTest, "synthetic-eeg-test");
  return out;
}

}  // namespace neuroalign::data
