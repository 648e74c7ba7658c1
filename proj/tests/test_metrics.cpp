#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "licq/codec/model.hpp"
#include "licq/codec/train.hpp"
#include "licq/core/rng.hpp"
#include "licq/draq/calibrate.hpp"
#include "licq/io/synth.hpp"
#include "licq/metrics/bd_rate.hpp"
#include "licq/metrics/msqe_table.hpp"
#include "licq/metrics/psnr.hpp"

using namespace licq;

namespace {

// log10(bpp) = c0 + c1 (p - 30) + c2 (p - 30)^2, sampled at the given PSNRs.
struct LogRate {
  double c0, c1, c2;
  double operator()(double p) const { return c0 + c1 * (p - 30.0) + c2 * (p - 30.0) * (p - 30.0); }
};

RDCurve sample(const LogRate& f, const std::vector<double>& psnrs, double rate_factor = 1.0) {
  std::vector<RDPoint> pts;
  for (double p : psnrs) pts.push_back({rate_factor * std::pow(10.0, f(p)), p});
  return RDCurve(pts);
}

// Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson slopes).
struct Pchip {
  std::vector<double> x, y, d;

  explicit Pchip(const RDCurve& c) {
    for (const auto& p : c.points()) {
      x.push_back(p.psnr);
      y.push_back(std::log10(p.bpp));
    }
    const std::size_t n = x.size();
    std::vector<double> h(n - 1), s(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x[i + 1] - x[i];
      s[i] = (y[i + 1] - y[i]) / h[i];
    }
    d.assign(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (s[i - 1] * s[i] <= 0) continue;
      const double w1 = 2 * h[i] + h[i - 1], w2 = h[i] + 2 * h[i - 1];
      d[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
    }
    auto end = [](double h0, double h1, double s0, double s1) {
      double v = ((2 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
      if (v * s0 <= 0) return 0.0;
      if (s0 * s1 <= 0 && std::abs(v) > 3 * std::abs(s0)) return 3 * s0;
      return v;
    };
    d[0] = end(h[0], h[1], s[0], s[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
  }

  double operator()(double p) const {
    std::size_t i = 0;
    while (i + 2 < x.size() && p > x[i + 1]) ++i;
    const double hh = x[i + 1] - x[i], t = (p - x[i]) / hh;
    const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
    const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
    return h00 * y[i] + h10 * hh * d[i] + h01 * y[i + 1] + h11 * hh * d[i + 1];
  }
};

// BD-rate from PCHIP interpolants integrated with composite Simpson.
double bd_rate_pchip(const RDCurve& ref, const RDCurve& test) {
  const Pchip a(ref), b(test);
  const double lo = std::max(ref.min_psnr(), test.min_psnr()), hi = std::min(ref.max_psnr(), test.max_psnr());
  const int n = 20000;
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double p = lo + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * (b(p) - a(p));
  }
  const double avg = acc * h / 3.0 / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

const std::vector<double> kPsnrs{28.0, 30.0, 32.0, 34.0, 36.0};

}  // namespace

TEST(Psnr, Examples) {
  const std::vector<double> a{0.0, 10.0, 20.0, 30.0};
  std::vector<double> b = a;
  EXPECT_TRUE(is_psnr_sentinel(psnr<double>(a, b)));
  for (auto& v : b) v += 1.0;
  EXPECT_NEAR(psnr<double>(a, b), 48.1308, 1e-3);
  EXPECT_NEAR(psnr_from_mse(255.0 * 255.0), 0.0, 1e-12);
  EXPECT_THROW(psnr<double>(a, std::vector<double>{1.0}), ModelError);
}

TEST(Psnr, Symmetric) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(64), b(64);
    for (auto& v : a) v = rng.uniform(0, 255);
    for (auto& v : b) v = rng.uniform(0, 255);
    EXPECT_EQ(psnr<double>(a, b), psnr<double>(b, a));
  }
}

TEST(Psnr, UnitRangeClampsReconstruction) {
  Tensor<double> x({1, 2}, {0.0, 1.0});
  Tensor<double> y({1, 2}, {-0.5, 1.5});
  EXPECT_TRUE(is_psnr_sentinel(psnr_unit_range(x, y)));
}

TEST(RDCurveTest, Validation) {
  EXPECT_THROW(RDCurve({{0.1, 30}, {0.2, 31}, {0.3, 32}}), ModelError);
  EXPECT_THROW(RDCurve({{0.1, 30}, {0.2, 31}, {0.3, 30.5}, {0.4, 33}}), ModelError);
  EXPECT_THROW(RDCurve({{0.0, 30}, {0.2, 31}, {0.3, 32}, {0.4, 33}}), ModelError);
  EXPECT_THROW(RDCurve({{0.1, 30}, {0.2, kPsnrInfinity}, {0.3, 32}, {0.4, 33}}), ModelError);
  const RDCurve c({{0.4, 33}, {0.1, 30}, {0.3, 32}, {0.2, 31}});
  EXPECT_EQ(c.points().front().bpp, 0.1);
}

TEST(BdRate, IdenticalCurvesGiveZero) {
  const auto c = sample({-0.5, 0.08, 0.002}, kPsnrs);
  EXPECT_EQ(bd_rate(c, c), 0.0);
}

TEST(BdRate, ConstantRateFactor) {
  for (const LogRate f : {LogRate{-0.5, 0.08, 0.0}, LogRate{-0.7, 0.1, 0.003}}) {
    const auto ref = sample(f, kPsnrs);
    EXPECT_NEAR(bd_rate(ref, sample(f, kPsnrs, 1.10)), 10.0, 0.05);
    EXPECT_NEAR(bd_rate(ref, sample(f, kPsnrs, 0.80)), -20.0, 0.05);
  }
}

TEST(BdRate, Antisymmetric) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const LogRate fa{rng.uniform(-1, 0), rng.uniform(0.05, 0.12), rng.uniform(0, 0.003)};
    const LogRate fb{rng.uniform(-1, 0), rng.uniform(0.05, 0.12), rng.uniform(0, 0.003)};
    const auto a = sample(fa, kPsnrs), b = sample(fb, {29.0, 31.0, 33.0, 35.0, 37.0});
    const double r = bd_rate(a, b);
    EXPECT_NEAR(bd_rate(b, a), (1.0 / (1.0 + r / 100.0) - 1.0) * 100.0, 0.1);
  }
}

TEST(BdRate, MatchesPchipOracle) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const LogRate fa{rng.uniform(-1, 0), rng.uniform(0.05, 0.12), rng.uniform(0, 0.002)};
    const LogRate fb{rng.uniform(-1, 0), rng.uniform(0.05, 0.12), rng.uniform(0, 0.002)};
    std::vector<double> pa, pb;
    double p = rng.uniform(26, 28);
    for (int i = 0; i < 6; ++i) pa.push_back(p += rng.uniform(1.0, 2.5));
    p = rng.uniform(26, 28);
    for (int i = 0; i < 6; ++i) pb.push_back(p += rng.uniform(1.0, 2.5));
    const auto a = sample(fa, pa), b = sample(fb, pb);
    EXPECT_NEAR(bd_rate(a, b), bd_rate_pchip(a, b), 0.1) << "pair " << t;
  }
}

TEST(BdRate, InsufficientOverlapThrows) {
  const auto a = sample({-0.5, 0.08, 0}, {20.0, 21.0, 22.0, 23.0});
  const auto b = sample({-0.5, 0.08, 0}, {22.5, 24.0, 25.0, 26.0});
  EXPECT_THROW(bd_rate(a, b), ModelError);
}

TEST(Msqe, SixteenBitsIsTiny) {
  ModelConfig c;
  c.N = 8;
  c.M = 8;
  c.activation = Activation::gdn;
  auto m = build_model<float>(c);
  const auto calib = raster_crops(synth_dataset<float>({4, 16, 5}), 4, 16);
  m.apply_bits(std::vector<int>(m.conv_indices().size(), 16));
  calibrate(m, calib, std::numeric_limits<double>::infinity());
  m.quantized = true;
  const auto rows = msqe_table(m, calib);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) {
    EXPECT_LT(r.weight_msqe, 1e-6) << r.id;
    EXPECT_LT(r.activation_msqe, 1e-6) << r.id;
  }
  EXPECT_THROW(msqe_table(m, Tensor<float>()), DataError);
  m.quantized = false;
  EXPECT_THROW(msqe_table(m, calib), ModelError);
}
