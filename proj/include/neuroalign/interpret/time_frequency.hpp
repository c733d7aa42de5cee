#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "neuroalign/core/config.hpp"
#include "neuroalign/interpret/montage.hpp"
#include "neuroalign/interpret/png.hpp"
#include "neuroalign/tensor.hpp"

namespace neuroalign::interpret {

struct Band {
  std::string name;
  double lo_hz = 0.0;
  double hi_hz = 0.0;
};

inline std::vector<Band> default_bands() { return {{"theta", 4.0, 8.0}, {"alpha", 8.0, 13.0}, {"gamma", 30.0, 80.0}}; }

inline std::vector<Band> bands_from_config(const InterpretConfig& c) {
  std::vector<Band> out;
  for (const auto& b : c.bands) out.push_back({b.name, b.lo_hz, b.hi_hz});
  return out;
}

struct TimeFrequencyMap {
  std::vector<std::string> bands;
  std::vector<std::string> groups;  // "all" first, then any montage groups
  Tensor power;                     // (groups, bands, T)
  Tensor channel_power;             // (E, bands, T)
};

// Complex Morlet transform at one frequency. Near the edges the Gaussian is truncated and
// renormalized, so a unit sinusoid at f keeps amplitude ~1 everywhere.
inline std::vector<double> morlet_power(const double* x, std::size_t T, double f, double fs, double cycles) {
  const double sigma = cycles / (2.0 * M_PI * f) * fs;  // samples
  const long half = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> g(static_cast<std::size_t>(2 * half + 1));
  std::vector<std::complex<double>> carrier(g.size());
  for (long k = -half; k <= half; ++k) {
    const auto i = static_cast<std::size_t>(k + half);
    g[i] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    carrier[i] = std::polar(1.0, -2.0 * M_PI * f * static_cast<double>(k) / fs);
  }
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::complex<double> acc = 0.0;
    double wsum = 0.0;
    for (long k = -half; k <= half; ++k) {
      const long s = static_cast<long>(t) + k;
      if (s < 0 || s >= static_cast<long>(T)) continue;
      const auto i = static_cast<std::size_t>(k + half);
      acc += x[s] * g[i] * carrier[i];
      wsum += g[i];
    }
    const std::complex<double> amp = 2.0 * acc / wsum;
    out[t] = std::norm(amp);
  }
  return out;
}

// Frequencies sampled inside a band: midpoints of ~1 Hz cells (at least 4).
inline std::vector<double> band_frequencies(const Band& b) {
  const std::size_t n = std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(b.hi_hz - b.lo_hz)));
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = b.lo_hz + (static_cast<double>(i) + 0.5) * (b.hi_hz - b.lo_hz) / static_cast<double>(n);
  return f;
}

// Band-averaged Morlet power per channel and time point, plus means over the montage's groups.
inline TimeFrequencyMap time_frequency_map(const Tensor& signal, const std::vector<Band>& bands, double fs, double cycles = 7.0,
                                           const Montage* montage = nullptr) {
  if (signal.rank() != 2) throw ShapeError("time_frequency_map expects an (E, T) array");
  const double nyquist = fs / 2.0;
  for (const auto& b : bands) {
    if (!(b.lo_hz > 0 && b.hi_hz > b.lo_hz)) throw std::invalid_argument("band '" + b.name + "' has invalid edges");
    if (b.hi_hz > nyquist)
      throw std::invalid_argument("band '" + b.name + "' reaches " + std::to_string(b.hi_hz) + " Hz, above the Nyquist frequency " +
                                  std::to_string(nyquist) + " Hz");
  }
  const std::size_t E = signal.dim(0), T = signal.dim(1), nb = bands.size();
  TimeFrequencyMap out;
  out.channel_power = Tensor({E, nb, T});
  for (std::size_t bi = 0; bi < nb; ++bi) {
    out.bands.push_back(bands[bi].name);
    const auto freqs = band_frequencies(bands[bi]);
    for (std::size_t e = 0; e < E; ++e) {
      double* dst = out.channel_power.data() + (e * nb + bi) * T;
      for (double f : freqs) {
        const auto p = morlet_power(signal.data() + e * T, T, f, fs, cycles);
        for (std::size_t t = 0; t < T; ++t) dst[t] += p[t] / static_cast<double>(freqs.size());
      }
    }
  }
  std::vector<std::vector<std::size_t>> members{{}};
  out.groups.push_back("all");
  for (std::size_t e = 0; e < E; ++e) members[0].push_back(e);
  if (montage) {
    montage->check(E);
    for (const auto& [name, _] : montage->groups) {
      auto idx = montage->group_indices(name);
      if (idx.empty()) continue;
      out.groups.push_back(name);
      members.push_back(std::move(idx));
    }
  }
  out.power = Tensor({members.size(), nb, T});
  for (std::size_t g = 0; g < members.size(); ++g)
    for (std::size_t e : members[g])
      for (std::size_t k = 0; k < nb * T; ++k)
        out.power[g * nb * T + k] += out.channel_power[e * nb * T + k] / static_cast<double>(members[g].size());
  return out;
}

// Mean power per band over time for one group row.
inline std::vector<double> band_means(const TimeFrequencyMap& m, std::size_t group = 0) {
  const std::size_t nb = m.bands.size(), T = m.power.dim(2);
  std::vector<double> out(nb, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t t = 0; t < T; ++t) out[b] += m.power[(group * nb + b) * T + t];
    out[b] /= static_cast<double>(T);
  }
  return out;
}

// One band x time heatmap per group, stacked vertically; each band row is normalized on its own.
inline void render_time_frequency(const std::string& path, const TimeFrequencyMap& m, std::size_t cell_w = 3, std::size_t cell_h = 24) {
  const std::size_t G = m.groups.size(), nb = m.bands.size(), T = m.power.dim(2), gap = 6;
  Image img(T * cell_w, G * nb * cell_h + (G - 1) * gap);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t b = 0; b < nb; ++b) {
      const double* row = m.power.data() + (g * nb + b) * T;
      const double hi = *std::max_element(row, row + T);
      std::vector<double> v(row, row + T);
      img.blit(render_heatmap(v, 1, T, cell_w, cell_h, 0.0, hi), 0, g * (nb * cell_h + gap) + b * cell_h);
    }
  write_png(path, img);
}

}  // namespace neuroalign::interpret
