#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "licq/core/ops.hpp"
#include "licq/core/rng.hpp"
#include "licq/quant/quantizer.hpp"

using namespace licq;

namespace {

QuantSpec random_spec(Rng& rng) {
  const int bits = 2 + static_cast<int>(rng.below(15));
  const bool is_signed = rng.below(2) == 0;
  const double hi = std::exp(rng.uniform(-6.0, 4.0));
  return is_signed ? make_spec(-hi * rng.uniform(0.1, 1.0), hi, bits, Signedness::signed_int)
                   : make_spec(0.0, hi, bits, Signedness::unsigned_int);
}

}  // namespace

TEST(MakeSpec, Examples) {
  EXPECT_NEAR(make_spec(0.0, 2.55, 8, Signedness::unsigned_int).scale(), 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(make_spec(-1.0, 1.0, 8, Signedness::signed_int).scale(), 1.0 / 127.0);
  EXPECT_EQ(make_spec(0.0, 0.0, 8, Signedness::signed_int).scale(), kScaleFloor);
  EXPECT_THROW(make_spec(-0.5, 1.0, 8, Signedness::unsigned_int), ModelError);
  EXPECT_THROW(make_spec(0.0, 1.0, 1, Signedness::signed_int), ModelError);
  EXPECT_THROW(make_spec(0.0, 1.0, 17, Signedness::signed_int), ModelError);
}

TEST(MakeSpec, IntegerRangeAndClipBounds) {
  auto s = make_spec(-3.0, 1.0, 4, Signedness::signed_int);
  EXPECT_EQ(s.qmin(), -8);
  EXPECT_EQ(s.qmax(), 7);
  EXPECT_DOUBLE_EQ(s.clip_hi(), s.scale() * 7);
  EXPECT_DOUBLE_EQ(s.clip_lo(), s.scale() * -8);
  auto u = make_spec(0.0, 1.0, 4, Signedness::unsigned_int);
  EXPECT_EQ(u.qmin(), 0);
  EXPECT_EQ(u.qmax(), 15);
}

TEST(RoundHalfEven, Ties) {
  EXPECT_EQ(round_half_even(2.5), 2.0);
  EXPECT_EQ(round_half_even(3.5), 4.0);
  EXPECT_EQ(round_half_even(-2.5), -2.0);
  EXPECT_EQ(round_half_even(-0.5), -0.0);
  EXPECT_EQ(round_half_even(2.4999), 2.0);
}

TEST(Quantize, Examples) {
  QuantSpec s{8, Signedness::signed_int, Granularity::per_tensor(), {0.1}};
  EXPECT_EQ(quantize(Tensor<double>::scalar(0.0), s).values[0], 0);
  EXPECT_EQ(quantize(Tensor<double>::scalar(12.7), s).values[0], 127);
  EXPECT_EQ(quantize(Tensor<double>::scalar(100.0), s).values[0], 127);
  // 0.25 / 0.1 is 2.4999999999999996 in binary; the exact tie is 2.5.
  EXPECT_EQ(quantize_value(2.5, 1.0, -128, 127), 2);
  EXPECT_EQ(quantize(Tensor<double>::scalar(0.25), s).values[0], 2);
}

TEST(Dequantize, Examples) {
  QuantSpec s{8, Signedness::signed_int, Granularity::per_tensor(), {0.1}};
  IntTensor q{{2}, {0, 5}};
  auto x = dequantize<double>(q, s);
  EXPECT_EQ(x[0], 0.0);
  EXPECT_NEAR(x[1], 0.5, 1e-15);
}

TEST(FakeQuant, InsideRangeIsOnGridWithUnitGradient) {
  auto s = make_spec(-1.0, 1.0, 8, Signedness::signed_int);
  Tensor<double> x({3}, std::vector<double>{-0.3, 0.1, 0.77}, true);
  auto y = fake_quant(x, s);
  for (std::size_t i = 0; i < 3; ++i) {
    const double k = y[i] / s.scale();
    EXPECT_NEAR(k, std::round(k), 1e-9);
  }
  backward(sum(y));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(FakeQuant, AboveRangeClampsWithZeroGradient) {
  auto s = make_spec(-1.0, 1.0, 8, Signedness::signed_int);
  Tensor<double> x({1}, s.clip_hi() + 1.0, true);
  auto y = fake_quant(x, s);
  EXPECT_DOUBLE_EQ(y[0], s.clip_hi());
  backward(sum(y));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(FakeQuant, SixteenBitsIsNearIdentity) {
  Rng rng(4);
  auto s = make_spec(-10.0, 10.0, 16, Signedness::signed_int);
  std::vector<double> v(1000);
  for (auto& x : v) x = rng.uniform(-10.0, 10.0);
  Tensor<double> x({1000}, v);
  auto y = fake_quant(x, s);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(y[i] - v[i]), s.scale() / 2 + 1e-15);
}

TEST(Msqe, Examples) {
  auto s = make_spec(0.0, 1.0, 8, Signedness::unsigned_int);
  std::vector<double> grid{0.0, 3 * s.scale(), 100 * s.scale()};
  EXPECT_EQ(msqe(Tensor<double>({3}, grid), s), 0.0);

  Rng rng(8);
  std::vector<double> u(200000);
  for (auto& x : u) x = rng.uniform();
  const double expected = s.scale() * s.scale() / 12.0;
  EXPECT_NEAR(msqe(Tensor<double>({u.size()}, u), s), expected, 0.1 * expected);
}

TEST(Msqe, ClippingBeatsMinMaxOnHeavyTails) {
  Rng rng(2024);
  std::vector<double> v(100000);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = i % 1000 == 0 ? (i % 2000 == 0 ? 50.0 : -50.0) : rng.normal();
  }
  double mu = 0.0, var = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  for (double x : v) var += (x - mu) * (x - mu);
  const double sigma = std::sqrt(var / static_cast<double>(v.size()));
  const auto minmax = make_spec(-50.0, 50.0, 8, Signedness::signed_int);
  const auto clipped = make_spec(mu - 4 * sigma, mu + 4 * sigma, 8, Signedness::signed_int);
  // Over the bulk of the distribution the clipped grid is far finer.
  std::vector<double> bulk;
  for (double e : v) {
    if (std::abs(e) < 50.0) bulk.push_back(e);
  }
  Tensor<double> xb({bulk.size()}, bulk);
  EXPECT_LT(msqe(xb, clipped), msqe(xb, minmax) / 10.0);
  // Averaged over every element, the saturated +-50 samples dominate at 8
  // bits: (50 - 4 sigma)^2 * 1e-3 is about 1.8, against scale^2 / 12 = 0.013.
  Tensor<double> x({v.size()}, v);
  EXPECT_GT(msqe(x, clipped), msqe(x, minmax));
}

// Property sweeps, 1000 random cases each.

TEST(QuantizerProperties, Monotonicity) {
  Rng rng(1);
  for (int c = 0; c < 1000; ++c) {
    const auto s = random_spec(rng);
    const double span = s.clip_hi() - s.clip_lo();
    double a = rng.uniform(s.clip_lo() - span, s.clip_hi() + span);
    double b = rng.uniform(s.clip_lo() - span, s.clip_hi() + span);
    if (a > b) std::swap(a, b);
    const auto q = quantize(Tensor<double>({2}, std::vector<double>{a, b}), s);
    ASSERT_LE(q.values[0], q.values[1]) << "case " << c;
  }
}

TEST(QuantizerProperties, Idempotence) {
  Rng rng(2);
  for (int c = 0; c < 1000; ++c) {
    const auto s = random_spec(rng);
    std::vector<float> v(16);
    for (auto& x : v) x = static_cast<float>(rng.uniform(s.clip_lo() * 1.5, s.clip_hi() * 1.5));
    const auto once = fake_quant(Tensor<float>({16}, v), s);
    const auto twice = fake_quant(once, s);
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(once[i], twice[i]) << "case " << c;
  }
}

TEST(QuantizerProperties, GridMembership) {
  Rng rng(3);
  for (int c = 0; c < 1000; ++c) {
    const auto s = random_spec(rng);
    std::vector<float> v(16);
    for (auto& x : v) x = static_cast<float>(rng.uniform(s.clip_lo() * 1.5, s.clip_hi() * 1.5));
    const auto y = fake_quant(Tensor<float>({16}, v), s);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double k = static_cast<double>(y[i]) / s.scale();
      const double ulp = std::abs(std::nextafter(y[i], INFINITY) - y[i]) / s.scale();
      ASSERT_LE(std::abs(k - std::round(k)), std::max(ulp, 1e-12)) << "case " << c;
    }
  }
}

TEST(QuantizerProperties, RoundTripBound) {
  Rng rng(4);
  for (int c = 0; c < 1000; ++c) {
    const auto s = random_spec(rng);
    const double span = s.clip_hi() - s.clip_lo();
    const double x = rng.uniform(s.clip_lo() - span, s.clip_hi() + span);
    const auto q = quantize(Tensor<double>::scalar(x), s);
    const double xh = dequantize<double>(q, s)[0];
    const double clamped = std::clamp(x, s.clip_lo(), s.clip_hi());
    ASSERT_LE(std::abs(xh - clamped), s.scale() / 2 * (1 + 1e-12)) << "case " << c;
  }
}

TEST(QuantizerProperties, ClippedSteMaskIsIndicator) {
  Rng rng(5);
  for (int c = 0; c < 1000; ++c) {
    const auto s = random_spec(rng);
    std::vector<double> v(8);
    for (auto& x : v) x = rng.uniform(s.clip_lo() * 2 - 1e-3, s.clip_hi() * 2 + 1e-3);
    v[0] = s.clip_lo();  // boundaries are inside
    v[1] = s.clip_hi();
    Tensor<double> x({8}, v, true);
    backward(sum(fake_quant(x, s)));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double indicator = (v[i] >= s.clip_lo() && v[i] <= s.clip_hi()) ? 1.0 : 0.0;
      ASSERT_EQ(x.grad()[i], indicator) << "case " << c << " element " << i;
    }
  }
}

TEST(QuantizerProperties, PerChannelMatchesPerTensorOnSharedRange) {
  Rng rng(6);
  for (int c = 0; c < 200; ++c) {
    const int bits = 2 + static_cast<int>(rng.below(15));
    const double hi = rng.uniform(0.1, 5.0);
    const auto pt = make_spec(-hi, hi, bits, Signedness::signed_int);
    std::vector<double> lo3(3, -hi), hi3(3, hi);
    const auto pc = make_per_channel_spec(lo3, hi3, bits, Signedness::signed_int, 1);
    std::vector<double> v(2 * 3 * 4);
    for (auto& x : v) x = rng.uniform(-2 * hi, 2 * hi);
    Tensor<double> x({2, 3, 4}, v);
    const auto a = fake_quant(x, pt), b = fake_quant(x, pc);
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(a[i], b[i]);
  }
}

TEST(WeightSpec, PerOutputChannel) {
  Tensor<double> w({2, 1, 1, 2}, std::vector<double>{0.5, -1.0, 0.1, 0.2});
  const auto s = weight_spec(w, 8, 0);
  EXPECT_DOUBLE_EQ(s.scale(0), 1.0 / 127);
  EXPECT_DOUBLE_EQ(s.scale(1), 0.2 / 127);
}

TEST(SnapToGrid, IdentityGradient) {
  Tensor<double> x({3}, std::vector<double>{0.26, -0.74, 1.01}, true);
  auto y = snap_to_grid(x, {0.5});
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], -0.5);
  EXPECT_EQ(y[2], 1.0);
  backward(sum(y));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  auto z = snap_to_grid(Tensor<double>({1}, 0.01), {0.5}, true);
  EXPECT_EQ(z[0], 0.5);
}
