#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "licq/core/error.hpp"
#include "licq/metrics/psnr.hpp"

namespace licq {

inline constexpr double kMinPsnrOverlap = 1.0;

/// log10(bpp) as a cubic in PSNR, fitted by least squares. PSNR is centred
/// and scaled before the fit for conditioning.
struct LogRateFit {
  double center = 0.0;
  double scale = 1.0;
  std::array<double, 4> coef{};  // in the normalised variable t

  double operator()(double psnr) const {
    const double t = (psnr - center) / scale;
    return coef[0] + t * (coef[1] + t * (coef[2] + t * coef[3]));
  }

  // Integral over psnr from lo to hi.
  double integral(double lo, double hi) const {
    auto prim = [&](double p) {
      const double t = (p - center) / scale;
      return scale * t * (coef[0] + t * (coef[1] / 2 + t * (coef[2] / 3 + t * coef[3] / 4)));
    };
    return prim(hi) - prim(lo);
  }
};

inline LogRateFit fit_log_rate(const RDCurve& c) {
  const auto& pts = c.points();
  LogRateFit f;
  f.center = 0.5 * (c.min_psnr() + c.max_psnr());
  f.scale = std::max(0.5 * (c.max_psnr() - c.min_psnr()), 1e-9);
  Eigen::MatrixXd A(pts.size(), 4);
  Eigen::VectorXd y(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double t = (pts[i].psnr - f.center) / f.scale;
    A(i, 0) = 1.0;
    A(i, 1) = t;
    A(i, 2) = t * t;
    A(i, 3) = t * t * t;
    y(i) = std::log10(pts[i].bpp);
  }
  const Eigen::VectorXd x = A.colPivHouseholderQr().solve(y);
  for (int k = 0; k < 4; ++k) f.coef[k] = x(k);
  return f;
}

/// Average rate difference of `test` against `reference` at equal PSNR, in
/// percent; positive means the test curve needs more rate.
inline double bd_rate(const RDCurve& reference, const RDCurve& test) {
  const double lo = std::max(reference.min_psnr(), test.min_psnr());
  const double hi = std::min(reference.max_psnr(), test.max_psnr());
  if (!(hi - lo >= kMinPsnrOverlap)) {
    throw ModelError("bd_rate: curves overlap by " + std::to_string(std::max(0.0, hi - lo)) +
                     " dB in PSNR; at least 1 dB is required");
  }
  const auto fr = fit_log_rate(reference);
  const auto ft = fit_log_rate(test);
  const double avg = (ft.integral(lo, hi) - fr.integral(lo, hi)) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

}  // namespace licq
