#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "licq/codec/entropy.hpp"
#include "licq/codec/forward.hpp"
#include "licq/codec/int_infer.hpp"
#include "licq/codec/model.hpp"
#include "licq/codec/train.hpp"
#include "licq/core/gradcheck.hpp"
#include "licq/draq/calibrate.hpp"
#include "licq/io/synth.hpp"

using namespace licq;

namespace {

ModelConfig small_config(Activation act, std::size_t n = 4, std::size_t m = 4) {
  ModelConfig c;
  c.N = n;
  c.M = m;
  c.depth = 2;
  c.activation = act;
  return c;
}

std::vector<Tensor<float>> images(std::size_t count = 6, std::size_t size = 16) {
  return synth_dataset<float>({count, size, 21});
}

Tensor<double> batch_of(const Tensor<float>& img) {
  return img.cast<double>().reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
}

// Random-init model quantized at `bits` with ranges calibrated on the synthetic crops.
ModelGraph<float> quantized_model(Activation act, int bits, double k) {
  auto m = build_model<float>(small_config(act, 8, 8));
  m.apply_bits(std::vector<int>(m.conv_indices().size(), bits));
  calibrate(m, raster_crops(images(), 8, 16), k);
  m.quantized = true;
  return m;
}

}  // namespace

TEST(Model, ParameterCountHandComputed) {
  // conv 3->4, conv 4->4, tconv 4->4, tconv 4->3 with 4x4 kernels, plus 4 log-scales.
  const std::size_t convs = (3 * 4 * 16 + 4) + (4 * 4 * 16 + 4) + (4 * 4 * 16 + 4) + (4 * 3 * 16 + 3);
  EXPECT_EQ(build_model<float>(small_config(Activation::relu)).parameter_count(), convs + 4);
  // Each of the two GDN layers adds C + C^2.
  EXPECT_EQ(build_model<float>(small_config(Activation::gdn)).parameter_count(), convs + 4 + 2 * (4 + 16));
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (auto act : {Activation::relu, Activation::gdn}) {
    for (int depth : {2, 3, 4}) {
      for (bool slim : {false, true}) {
        if (slim && act != Activation::gdn) continue;
        ModelConfig c = small_config(act, 8, 12);
        c.depth = depth;
        c.slim = slim;
        EXPECT_EQ(build_model<float>(c).parameter_count(), expected_parameter_count(c));
      }
    }
  }
}

TEST(Model, BadConfigsRejected) {
  auto c = small_config(Activation::relu);
  c.slim = true;
  EXPECT_THROW(build_model<float>(c), ConfigError);
  c = small_config(Activation::relu);
  c.depth = 5;
  EXPECT_THROW(build_model<float>(c), ConfigError);
}

TEST(Model, ForwardShapes) {
  const auto m = build_model<float>(small_config(Activation::gdn));
  Tensor<float> x({2, 3, 16, 16}, 0.5f);
  const auto fw = forward(m, x);
  EXPECT_EQ(fw.y.shape(), (Shape{2, 4, 4, 4}));
  EXPECT_EQ(fw.x_hat.shape(), x.shape());
  EXPECT_THROW(forward(m, Tensor<float>({1, 1, 16, 16}, 0.0f)), ModelError);
}

TEST(Latent, EvalRoundsHalfToEven) {
  Tensor<double> y({6}, {1.4, 2.5, -2.5, 3.5, 0.5, -0.6});
  const auto q = latent_quantize_eval(y);
  const double want[] = {1.0, 2.0, -2.0, 4.0, 0.0, -1.0};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(q[i], want[i]);
}

TEST(Latent, TrainingNoiseIsUnbiasedUniform) {
  Rng rng(17);
  const std::size_t n = 100000;
  Tensor<double> y({n}, 0.25);
  const auto q = latent_quantize_train(y, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = q[i] - 0.25;
    ASSERT_GE(d, -0.5);
    ASSERT_LE(d, 0.5);
    mean += d;
  }
  mean /= static_cast<double>(n);
  EXPECT_LE(std::abs(mean), 3.0 / std::sqrt(12.0 * static_cast<double>(n)));
}

TEST(Rate, NarrowPriorAtZeroIsFree) {
  Tensor<double> y({1, 1, 1, 1}, 0.0);
  const auto proxy = EntropyProxy<double>::init(1, 0.1);
  EXPECT_LE(rate_estimate(y, proxy), 1e-4);
}

TEST(Rate, UnitPriorAtZero) {
  Tensor<double> y({1, 1, 1, 1}, 0.0);
  const auto proxy = EntropyProxy<double>::init(1, 1.0);
  // -log2(Phi(1/2) - Phi(-1/2))
  EXPECT_NEAR(rate_estimate(y, proxy), 1.3849, 1e-3);
}

TEST(Rate, MonotoneInMagnitudeOverScale) {
  for (double sigma : {0.3, 1.0, 4.0}) {
    const auto proxy = EntropyProxy<double>::init(1, sigma);
    double prev = -1.0;
    for (int k = 0; k <= 12; ++k) {
      for (double sign : {1.0, -1.0}) {
        Tensor<double> y({1, 1, 1, 1}, sign * k);
        const double r = rate_estimate(y, proxy);
        EXPECT_GE(r, prev - 1e-12);
        EXPECT_GE(r, 0.0);
        if (sign < 0) prev = r;
      }
    }
  }
}

TEST(Rate, LikelihoodBounds) {
  for (double y : {-1e6, -30.0, 0.0, 0.4, 30.0, 1e6}) {
    for (double s : {1e-3, 1.0, 1e3}) {
      const double p = likelihood(y, s);
      EXPECT_GE(p, kLikelihoodFloor);
      EXPECT_LE(p, 1.0);
    }
  }
  // A latent far in the tail costs exactly -log2(p_min).
  Tensor<double> y({1, 1, 1, 1}, 1000.0);
  EXPECT_NEAR(rate_estimate(y, EntropyProxy<double>::init(1, 1.0)), -std::log2(kLikelihoodFloor), 1e-9);
}

TEST(Rate, ChannelMismatchThrows) {
  Tensor<double> y({1, 3, 1, 1}, 0.0);
  EXPECT_THROW(rate_estimate(y, EntropyProxy<double>::init(2)), ModelError);
}

TEST(Rate, GradCheck) {
  Rng rng(4);
  std::vector<double> yv(2 * 3 * 2 * 2);
  for (auto& v : yv) v = rng.uniform(-2.5, 2.5);
  Tensor<double> y({2, 3, 2, 2}, yv);
  Tensor<double> ls({3}, {-0.3, 0.1, 0.6});
  const auto r = grad_check([](const std::vector<Tensor<double>>& in) { return rate_bits(in[0], in[1]); }, {y, ls});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(RdLoss, HandExample) {
  Tensor<double> x({1, 3, 2, 2}, 0.0);
  Tensor<double> xh({1, 3, 2, 2}, 1.0 / 255.0);
  Tensor<double> rate({1}, {12.0});
  // 12 bits over 4 pixels, plus 0.01 * MSE of 1.
  EXPECT_NEAR(rd_loss(x, xh, rate, 0.01).item(), 3.01, 1e-12);
}

TEST(RdLoss, LinearInLambda) {
  Rng rng(8);
  std::vector<double> a(48), b(48);
  for (auto& v : a) v = rng.uniform();
  for (auto& v : b) v = rng.uniform();
  Tensor<double> x({1, 3, 4, 4}, a), xh({1, 3, 4, 4}, b), rate({1}, {37.0});
  const double l1 = rd_loss(x, xh, rate, 0.001).item();
  const double l2 = rd_loss(x, xh, rate, 0.002).item();
  const double l3 = rd_loss(x, xh, rate, 0.003).item();
  EXPECT_NEAR(l3 - l2, l2 - l1, 1e-12);
  EXPECT_THROW(rd_loss(x, Tensor<double>({1, 3, 4, 2}, 0.0), rate, 0.01), ModelError);
}

TEST(Train, DeterministicLossTrace) {
  const auto data = images();
  TrainConfig tc;
  tc.iters = 20;
  tc.batch = 2;
  tc.log_every = 1;
  auto a = build_model<float>(small_config(Activation::gdn));
  auto b = build_model<float>(small_config(Activation::gdn));
  const auto ra = train(a, data, tc);
  const auto rb = train(b, data, tc);
  EXPECT_EQ(ra.loss, rb.loss);
  tc.seed = 2;
  auto c = build_model<float>(small_config(Activation::gdn));
  EXPECT_NE(train(c, data, tc).loss, ra.loss);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto data = images();
  auto m = build_model<float>(small_config(Activation::relu));
  const auto before = clone_model(m);
  TrainConfig tc;
  tc.iters = 5;
  tc.batch = 2;
  tc.lr = 0.0;
  train(m, data, tc);
  const auto pa = m.parameters();
  const auto pb = before.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    for (std::size_t i = 0; i < pa[k].second.size(); ++i) ASSERT_EQ(pa[k].second[i], pb[k].second[i]) << pa[k].first;
  }
}

TEST(Train, LossDecreases) {
  const auto data = images(8, 16);
  auto m = build_model<float>(small_config(Activation::gdn, 8, 8));
  TrainConfig tc;
  tc.iters = 500;
  tc.batch = 4;
  tc.lr = 3e-3;
  tc.log_every = 50;
  const auto r = train(m, data, tc);
  EXPECT_LT(r.loss.back(), 0.8 * r.loss.front());
}

TEST(Eval, PureAndDeterministic) {
  const auto data = images(3, 16);
  const auto m = build_model<float>(small_config(Activation::gdn));
  const auto a = eval_rd(m, data, 0.01);
  const auto b = eval_rd(m, data, 0.01);
  EXPECT_EQ(a.bpp, b.bpp);
  EXPECT_EQ(a.psnr, b.psnr);
  EXPECT_NEAR(a.loss, a.bpp + 0.01 * a.mse, 1e-12);
}

TEST(IntInfer, ConvAccumulatorHandComputed) {
  IntTensor x{{1, 1, 1, 3}, {1, 2, 3}};
  IntTensor w{{1, 1, 1, 3}, {2, -1, 4}};
  // 1*2 + 2*(-1) + 3*4 + 5
  EXPECT_EQ(conv2d_int(x, w, {5}, 1, 0, false).values, (std::vector<std::int64_t>{17}));
  IntTensor xt{{1, 1, 1, 2}, {1, 2}};
  IntTensor wt{{1, 1, 1, 2}, {3, -1}};
  EXPECT_EQ(conv2d_int(xt, wt, {}, 2, 0, true).values, (std::vector<std::int64_t>{3, -1, 6, -2}));
}

TEST(IntInfer, RequiresQuantizedModel) {
  const auto m = build_model<float>(small_config(Activation::relu));
  EXPECT_THROW(int_infer(m, Tensor<float>({3, 16, 16}, 0.0f)), ModelError);
}

TEST(IntInfer, ZeroImageGivesZeroTraces) {
  for (auto act : {Activation::relu, Activation::gdn}) {
    auto m = quantized_model(act, 8, 3.0);
    for (auto& l : m.layers) {
      if (is_conv(l.kind)) {
        for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.0f;
      }
    }
    const auto r = int_infer(m, Tensor<float>({3, 16, 16}, 0.0f));
    for (auto v : r.y_hat.values) EXPECT_EQ(v, 0);
    for (const auto& t : r.traces) {
      for (auto v : t.q.values) ASSERT_EQ(v, 0) << t.id;
    }
  }
}

TEST(IntInfer, AgreesWithFakeQuantWithinOneLsb) {
  const auto data = images(4, 16);
  for (auto act : {Activation::relu, Activation::gdn}) {
    for (int bits : {4, 8}) {
      const auto m = quantized_model(act, bits, 3.0);
      for (const auto& img : data) {
        for (const auto& row : int_check(m, img)) EXPECT_LE(row.max_lsb_diff, 1.0 + 1e-9) << row.id << " bits " << bits;
      }
    }
  }
}

TEST(IntInfer, ReconstructionMatchesSimulation) {
  const auto m = quantized_model(Activation::gdn, 8, 3.0);
  const auto img = images(1, 16)[0];
  const auto r = int_infer(m, img);
  NoGradGuard g;
  const auto fw = forward(cast_model<double>(m), batch_of(img));
  ASSERT_EQ(r.x_hat.shape(), fw.x_hat.shape());
  // The last layer is not requantized; its step is the accumulator step per channel.
  const auto& last = r.traces.back();
  for (std::size_t i = 0; i < r.x_hat.size(); ++i) {
    EXPECT_LE(std::abs(r.x_hat[i] - fw.x_hat[i]), last.lsb_at(i) * (1.0 + 1e-9));
  }
}
