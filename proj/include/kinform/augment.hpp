#pragma once

// Pixel augmentation: gamma, scale about the centre (crop or zero-pad back to
// the input size), horizontal flip and integer jitter, applied together as
// one nearest-neighbour resampling.

#include <algorithm>
#include <array>
#include <cmath>

#include "kinform/dataset.hpp"
#include "kinform/rng.hpp"

namespace kinform {

struct AugmentParams {
  double gamma = 1.0;
  double scale = 1.0;
  bool flip = false;
  int dx = 0;
  int dy = 0;
};

struct AugmentConfig {
  double gamma_min = 0.75;
  double gamma_max = 1.33;
  std::array<double, 3> scales = {0.5, 1.0, 2.0};
  double flip_probability = 0.5;
  int max_jitter = 2;
};

/// Gamma is log-uniform in [gamma_min, gamma_max].
inline AugmentParams sample_augment(Rng& rng, const AugmentConfig& cfg = {}) {
  AugmentParams p;
  p.gamma = std::exp(uniform(rng, std::log(cfg.gamma_min), std::log(cfg.gamma_max)));
  p.scale = cfg.scales[uniform_index(rng, cfg.scales.size())];
  p.flip = uniform01(rng) < cfg.flip_probability;
  p.dx = static_cast<int>(uniform_int(rng, -cfg.max_jitter, cfg.max_jitter));
  p.dy = static_cast<int>(uniform_int(rng, -cfg.max_jitter, cfg.max_jitter));
  return p;
}

/// Source coordinate for output coordinate `o` along an axis of length n.
inline long augment_source(long o, long n, double scale, int shift, bool flip) {
  const long moved = (flip ? n - 1 - o : o) - shift;
  const double c = 0.5 * static_cast<double>(n - 1);
  return std::lround(std::floor((static_cast<double>(moved) - c) / scale + c + 0.5));
}

inline PixelImage apply_augment(const PixelImage& img, const AugmentParams& p) {
  const long W = img.width, H = img.height;
  PixelImage out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.assign(img.pixels.size(), 0);
  std::array<std::uint8_t, 256> lut;
  for (int v = 0; v < 256; ++v) {
    lut[v] = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * std::pow(v / 255.0, p.gamma)), 0L, 255L));
  }
  for (long y = 0; y < H; ++y) {
    const long sy = augment_source(y, H, p.scale, p.dy, false);
    if (sy < 0 || sy >= H) continue;
    for (long x = 0; x < W; ++x) {
      const long sx = augment_source(x, W, p.scale, p.dx, p.flip);
      if (sx < 0 || sx >= W) continue;
      for (int c = 0; c < 3; ++c) out.pixels[(y * W + x) * 3 + c] = lut[img.pixels[(sy * W + sx) * 3 + c]];
    }
  }
  return out;
}

inline PixelImage augment(const PixelImage& img, Rng& rng, const AugmentConfig& cfg = {}) {
  return apply_augment(img, sample_augment(rng, cfg));
}

}  // namespace kinform
