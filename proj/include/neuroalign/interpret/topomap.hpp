#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "neuroalign/core/log.hpp"
#include "neuroalign/interpret/montage.hpp"
#include "neuroalign/interpret/png.hpp"
#include "neuroalign/interpret/saliency.hpp"

namespace neuroalign::interpret {

struct TopomapWindows {
  std::size_t window_samples = 0;
  std::size_t dropped_samples = 0;  // trailing samples that do not fill a window
  double window_ms = 0.0;
  Tensor values;  // (n_windows, E): mean saliency per electrode and window

  std::size_t n_windows() const { return values.rank() == 2 ? values.dim(0) : 0; }
};

// Splits the time axis into consecutive windows of round(window_ms * fs / 1000) samples.
inline TopomapWindows topomap_windows(const SaliencyMap& map, double sampling_rate_hz, double window_ms, const Montage& montage) {
  if (map.values.rank() != 2) throw ShapeError("topomap_windows expects an (E, T) map");
  const std::size_t E = map.values.dim(0), T = map.values.dim(1);
  montage.check(E);
  const std::size_t w = static_cast<std::size_t>(std::lround(window_ms * sampling_rate_hz / 1000.0));
  if (w == 0 || w > T)
    throw std::invalid_argument("window of " + std::to_string(window_ms) + " ms does not fit a map of " + std::to_string(T) + " samples");
  TopomapWindows out;
  out.window_samples = w;
  out.window_ms = window_ms;
  const std::size_t n = T / w;
  out.dropped_samples = T - n * w;
  if (out.dropped_samples)
    log_warning("topomap: dropping the last " + std::to_string(out.dropped_samples) + " samples that do not fill a " +
                std::to_string(window_ms) + " ms window");
  out.values = Tensor({n, E});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t e = 0; e < E; ++e) {
      double s = 0.0;
      for (std::size_t t = k * w; t < (k + 1) * w; ++t) s += map.values[e * T + t];
      out.values[k * E + e] = s / static_cast<double>(w);
    }
  return out;
}

// Inverse-distance-weighted scalp image of per-electrode values on a size x size grid.
inline Image render_scalp(const double* values, const Montage& m, std::size_t size, double lo, double hi) {
  Image img(size, size);
  const double span = hi > lo ? hi - lo : 1.0;
  const double half = 0.5 * static_cast<double>(size - 1);
  for (std::size_t py = 0; py < size; ++py)
    for (std::size_t px = 0; px < size; ++px) {
      const double x = (static_cast<double>(px) - half) / half, y = (half - static_cast<double>(py)) / half;
      if (x * x + y * y > 1.0) continue;
      double num = 0.0, den = 0.0;
      bool exact = false;
      for (std::size_t e = 0; e < m.size(); ++e) {
        const double dx = x - m.xy[e].first, dy = y - m.xy[e].second, d2 = dx * dx + dy * dy;
        if (d2 < 1e-12) {
          num = values[e];
          den = 1.0;
          exact = true;
          break;
        }
        num += values[e] / d2;
        den += 1.0 / d2;
      }
      img.set(px, py, colormap(((exact ? num : num / den) - lo) / span));
    }
  for (const auto& [ex, ey] : m.xy) {
    const auto cx = static_cast<std::size_t>(std::lround(ex * half + half)), cy = static_cast<std::size_t>(std::lround(half - ey * half));
    for (int d = -1; d <= 1; ++d) {
      img.set(cx + static_cast<std::size_t>(d), cy, {0, 0, 0});
      img.set(cx, cy + static_cast<std::size_t>(d), {0, 0, 0});
    }
  }
  return img;
}

// All windows side by side on a shared color scale.
inline void render_topomaps(const std::string& path, const TopomapWindows& tw, const Montage& m, std::size_t size = 96) {
  const std::size_t n = tw.n_windows(), E = m.size();
  if (n == 0) throw std::invalid_argument("no topomap windows to render");
  const auto [lo_it, hi_it] = std::minmax_element(tw.values.data(), tw.values.data() + tw.values.size());
  const std::size_t gap = 4;
  Image strip(n * size + (n - 1) * gap, size);
  for (std::size_t k = 0; k < n; ++k) strip.blit(render_scalp(tw.values.data() + k * E, m, size, *lo_it, *hi_it), k * (size + gap), 0);
  write_png(path, strip);
}

}  // namespace neuroalign::interpret
