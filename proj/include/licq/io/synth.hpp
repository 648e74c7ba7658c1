#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/rng.hpp"
#include "licq/core/tensor.hpp"

namespace licq {

struct SynthSpec {
  std::size_t count = 32;
  std::size_t size = 32;
  std::uint64_t seed = 7;
};

/// Smooth random images: per channel, the sum of 8 plane waves with random
/// frequency (up to 1/4 cycle per pixel), orientation, phase and amplitude,
/// then min-max normalised to [0, 1]. A constant channel maps to 1/2.
template <typename T>
std::vector<Tensor<T>> synth_dataset(const SynthSpec& spec) {
  if (spec.count > 0 && spec.size == 0) throw ConfigError("synthetic.size must be > 0");
  constexpr int kWaves = 8;
  Rng rng(spec.seed);
  const std::size_t S = spec.size;
  std::vector<Tensor<T>> images;
  images.reserve(spec.count);
  for (std::size_t n = 0; n < spec.count; ++n) {
    std::vector<T> data(3 * S * S);
    for (std::size_t c = 0; c < 3; ++c) {
      double fx[kWaves], fy[kWaves], phase[kWaves], amp[kWaves];
      for (int k = 0; k < kWaves; ++k) {
        const double f = rng.uniform(0.0, 0.25);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        fx[k] = f * std::cos(angle);
        fy[k] = f * std::sin(angle);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        amp[k] = rng.uniform(0.2, 1.0);
      }
      std::vector<double> plane(S * S, 0.0);
      for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
          double v = 0.0;
          for (int k = 0; k < kWaves; ++k) {
            v += amp[k] * std::sin(2.0 * std::numbers::pi * (fx[k] * double(x) + fy[k] * double(y)) + phase[k]);
          }
          plane[y * S + x] = v;
        }
      }
      const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
      const double range = *hi - *lo;
      for (std::size_t i = 0; i < S * S; ++i) {
        const double v = range > 0.0 ? (plane[i] - *lo) / range : 0.5;
        data[c * S * S + i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
    }
    images.emplace_back(Shape{3, S, S}, std::move(data));
  }
  return images;
}

}  // namespace licq
