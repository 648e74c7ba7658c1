#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/tensor.hpp"

namespace licq {

// Returned for a perfect reconstruction. Never enters a curve fit.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

inline bool is_psnr_sentinel(double v) { return std::isinf(v) && v > 0; }

template <typename T>
double mse(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ModelError("mse: size mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw ModelError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse_value, double peak = 255.0) {
  if (mse_value <= 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(peak * peak / mse_value);
}

/// 10 log10(peak^2 / MSE) over values already on the peak scale.
template <typename T>
double psnr(std::span<const T> x, std::span<const T> y, double peak = 255.0) {
  return psnr_from_mse(mse(x, y), peak);
}

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 255.0) {
  if (x.shape() != y.shape()) {
    throw ModelError("psnr: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  return psnr(x.values(), y.values(), peak);
}

/// PSNR of images stored in [0, 1], measured at 255 peak with the
/// reconstruction clamped to the valid pixel range.
template <typename T>
double psnr_unit_range(const Tensor<T>& x, const Tensor<T>& x_hat) {
  if (x.shape() != x_hat.shape()) {
    throw ModelError("psnr: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  }
  const auto a = x.values();
  const auto b = x_hat.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = 255.0 * (static_cast<double>(a[i]) - std::clamp(static_cast<double>(b[i]), 0.0, 1.0));
    acc += d * d;
  }
  return psnr_from_mse(acc / static_cast<double>(a.size()));
}

struct RDPoint {
  double bpp = 0.0;
  double psnr = 0.0;
};

/// At least four points, strictly increasing in both bpp and PSNR once
/// sorted by bpp.
class RDCurve {
 public:
  explicit RDCurve(std::vector<RDPoint> points) : points_(std::move(points)) {
    if (points_.size() < 4) throw ModelError("rd curve: need at least 4 points, got " + std::to_string(points_.size()));
    std::sort(points_.begin(), points_.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& p = points_[i];
      if (!(p.bpp > 0.0) || !std::isfinite(p.bpp) || !std::isfinite(p.psnr)) {
        throw ModelError("rd curve: point " + std::to_string(i) + " needs finite bpp > 0 and finite PSNR");
      }
      if (i > 0 && !(p.bpp > points_[i - 1].bpp && p.psnr > points_[i - 1].psnr)) {
        throw ModelError("rd curve: points must increase strictly in both bpp and PSNR");
      }
    }
  }

  const std::vector<RDPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  double min_psnr() const { return points_.front().psnr; }
  double max_psnr() const { return points_.back().psnr; }

 private:
  std::vector<RDPoint> points_;
};

}  // namespace licq
