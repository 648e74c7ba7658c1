#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "licq/codec/forward.hpp"
#include "licq/codec/model.hpp"
#include "licq/core/rng.hpp"
#include "licq/hwopt/bitwidth.hpp"
#include "licq/hwopt/flops.hpp"
#include "licq/hwopt/search.hpp"
#include "licq/hwopt/slim.hpp"
#include "licq/io/synth.hpp"

using namespace licq;

namespace {

ModelConfig toy(Activation act, bool slim = false) {
  ModelConfig c;
  c.N = 4;
  c.M = 4;
  c.activation = act;
  c.slim = slim;
  return c;
}

// Sum over layers of c_l * max(0, t_l - P_l).
PlanEvaluator hinge(std::vector<int> t, std::vector<double> c) {
  return [t, c](const std::vector<int>& p) {
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) loss += c[i] * std::max(0, t[i] - p[i]);
    return loss;
  };
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("l" + std::to_string(i));
  return out;
}

// Smallest total width over all plans in [lo, hi]^n within the tolerance.
int exhaustive_min_bits(std::size_t n, int lo, int hi, const PlanEvaluator& f, double limit) {
  std::vector<int> p(n, lo);
  int best = std::numeric_limits<int>::max();
  while (true) {
    if (f(p) <= limit) {
      int s = 0;
      for (int b : p) s += b;
      best = std::min(best, s);
    }
    std::size_t k = 0;
    while (k < n && p[k] == hi) p[k++] = lo;
    if (k == n) break;
    ++p[k];
  }
  return best;
}

}  // namespace

TEST(EquivalentBitwidth, HalvingWeights) {
  FootprintModel f{{Rational(8, 15), Rational(4, 15), Rational(2, 15), Rational(1, 15)}};
  EXPECT_EQ(equivalent_bitwidth_exact({9, 8, 7, 6}, f), Rational(124, 15));
  EXPECT_NEAR(equivalent_bitwidth({9, 8, 7, 6}, f), 8.2667, 1e-4);
  EXPECT_EQ(equivalent_bitwidth_exact({8, 8, 8, 8}, f), Rational(8));
  EXPECT_THROW(equivalent_bitwidth({8, 8}, f), ModelError);
}

TEST(EquivalentBitwidth, UniformPlansAreExact) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::int64_t> counts(1 + rng.below(6));
    for (auto& c : counts) c = 1 + static_cast<std::int64_t>(rng.below(100000));
    const auto f = FootprintModel::from_counts(counts);
    const int b = 2 + static_cast<int>(rng.below(15));
    EXPECT_EQ(equivalent_bitwidth_exact(std::vector<int>(counts.size(), b), f), Rational(b));
  }
}

TEST(Footprint, Normalisation) {
  const auto f = FootprintModel::from_counts({100, 50});
  EXPECT_EQ(f.weights[0], Rational(2, 3));
  EXPECT_EQ(f.weights[1], Rational(1, 3));
  EXPECT_EQ(FootprintModel::from_counts({7}).weights[0], Rational(1));
  EXPECT_THROW(FootprintModel::from_counts({5, 0}), ModelError);
  FootprintModel bad{{Rational(1, 2), Rational(1, 3)}};
  EXPECT_THROW(bad.validate(), ModelError);
}

TEST(Footprint, FromGraph) {
  const auto m = build_model<float>(toy(Activation::relu));
  // Output maps for a 16x16 input: 4x8x8, 4x4x4, 4x8x8, 3x16x16.
  const auto f = footprint_from_graph(m, FootprintMode::element_count, 16, 16);
  const std::vector<Rational> want{Rational(256, 1344), Rational(64, 1344), Rational(256, 1344), Rational(768, 1344)};
  EXPECT_EQ(f.weights, want);
  const auto p = footprint_from_graph(m, FootprintMode::halving);
  EXPECT_EQ(p.weights[0], Rational(8, 15));
  EXPECT_EQ(p.weights[3], Rational(1, 15));
  auto c = toy(Activation::relu);
  c.depth = 3;
  EXPECT_THROW(footprint_from_graph(build_model<float>(c), FootprintMode::halving), ModelError);
}

TEST(Search, HingeMockStopsAtEight) {
  SearchConfig cfg;
  const auto r = progressive_search(names(2), hinge({8, 8}, {1.0, 2.0}), cfg);
  EXPECT_EQ(r.plan.bits, (std::vector<int>{8, 8}));
  EXPECT_EQ(r.plan.baseline_bits, 8);
  EXPECT_EQ(r.plan.baseline_loss, 0.0);
  EXPECT_EQ(exhaustive_min_bits(2, 2, 16, hinge({8, 8}, {1.0, 2.0}), 0.0), 16);
}

TEST(Search, InsensitiveLayerReachesFloor) {
  SearchConfig cfg;
  const auto r = progressive_search(names(3), hinge({8, 8, 8}, {1.0, 0.0, 3.0}), cfg);
  EXPECT_EQ(r.plan.bits, (std::vector<int>{8, 2, 8}));
  cfg.floor_bits = 4;
  EXPECT_EQ(progressive_search(names(3), hinge({8, 8, 8}, {1.0, 0.0, 3.0}), cfg).plan.bits,
            (std::vector<int>{8, 4, 8}));
}

TEST(Search, LargeToleranceAdmitsEverything) {
  SearchConfig cfg;
  cfg.epsilon = 1e9;
  const auto r = progressive_search(names(3), hinge({12, 9, 5}, {1.0, 2.0, 3.0}), cfg);
  EXPECT_EQ(r.plan.bits, (std::vector<int>{2, 2, 2}));
}

TEST(Search, MatchesExhaustiveOnHingeMocks) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(3);
    std::vector<int> t(n);
    std::vector<double> c(n);
    for (auto& v : t) v = 2 + static_cast<int>(rng.below(15));
    for (auto& v : c) v = rng.below(4) == 0 ? 0.0 : rng.uniform(0.1, 5.0);
    const auto f = hinge(t, c);
    SearchConfig cfg;
    const auto r = progressive_search(names(n), f, cfg);
    int total = 0;
    for (int b : r.plan.bits) total += b;
    EXPECT_EQ(total, exhaustive_min_bits(n, 2, 16, f, r.plan.baseline_loss)) << "trial " << trial;
  }
}

TEST(Search, SoundAndMonotoneOnRandomAdditiveMocks) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(3);
    // Per-layer cost tables decreasing in width.
    std::vector<std::vector<double>> cost(n, std::vector<double>(17, 0.0));
    for (auto& row : cost) {
      for (int b = 15; b >= 2; --b) row[b] = row[b + 1] + rng.uniform(0.0, 0.3);
    }
    const PlanEvaluator f = [cost](const std::vector<int>& p) {
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += cost[i][p[i]];
      return s;
    };
    SearchConfig cfg;
    cfg.epsilon = rng.uniform(0.0, 1.0);
    const auto r = progressive_search(names(n), f, cfg);
    EXPECT_LE(f(r.plan.bits), r.plan.baseline_loss + cfg.epsilon);
    for (int b : r.plan.bits) {
      EXPECT_LE(b, r.plan.baseline_bits);
      EXPECT_GE(b, cfg.floor_bits);
    }
    EXPECT_TRUE(std::all_of(r.plan.frozen.begin(), r.plan.frozen.end(), [](bool x) { return x; }));
    int total = 0;
    for (int b : r.plan.bits) total += b;
    EXPECT_GE(total, exhaustive_min_bits(n, 2, 16, f, r.plan.baseline_loss + cfg.epsilon));
  }
}

TEST(Search, NondeterministicEvaluatorRejected) {
  int calls = 0;
  const PlanEvaluator f = [&calls](const std::vector<int>&) { return static_cast<double>(calls++); };
  EXPECT_THROW(progressive_search(names(2), f, SearchConfig{}), ModelError);
}

TEST(Search, LogRecordsPhases) {
  const auto r = progressive_search(names(2), hinge({10, 4}, {1.0, 1.0}), SearchConfig{});
  ASSERT_FALSE(r.log.empty());
  EXPECT_EQ(r.log.front().phase, "reference");
  EXPECT_EQ(r.log.back().phase, "verify");
  EXPECT_TRUE(r.log.back().accepted);
  EXPECT_EQ(r.plan.baseline_bits, 10);
  EXPECT_EQ(r.plan.bits, (std::vector<int>{10, 4}));
  for (std::size_t i = 0; i < r.log.size(); ++i) EXPECT_EQ(r.log[i].step, i);
}

TEST(Search, ConfigValidation) {
  SearchConfig cfg;
  cfg.floor_bits = 9;
  cfg.start_bits = 8;
  EXPECT_THROW(progressive_search(names(2), hinge({8, 8}, {1, 1}), cfg), ConfigError);
  cfg = {};
  cfg.order = LayerOrder::given;
  cfg.given_order = {0, 0};
  EXPECT_THROW(progressive_search(names(2), hinge({8, 8}, {1, 1}), cfg), ConfigError);
  cfg.given_order = {1, 0};
  EXPECT_EQ(progressive_search(names(2), hinge({8, 8}, {1, 1}), cfg).order, (std::vector<std::size_t>{1, 0}));
}

TEST(Sensitivity, TiesKeepIndexOrder) {
  EXPECT_EQ(sensitivity_rank({8, 8, 8}, hinge({8, 8, 8}, {1, 1, 1})), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Sensitivity, HypersensitiveLayerFirst) {
  const auto f = hinge({8, 8, 8, 8}, {1, 1, 100, 1});
  const auto a = sensitivity_rank({8, 8, 8, 8}, f);
  EXPECT_EQ(a.front(), 2u);
  EXPECT_EQ(a, sensitivity_rank({8, 8, 8, 8}, f));
}

TEST(Flops, ConvFormula) {
  EXPECT_EQ(conv_flops(16, 16, 1, 1, 3, 3, false), 4608u);
  EXPECT_EQ(flops_count(ModelGraph<float>{}, 16, 16).total, 0u);
}

TEST(Flops, ToyModelClosedForm) {
  const auto r = flops_count(build_model<float>(toy(Activation::relu)), 16, 16);
  // conv 3->4 (8x8 out), relu, conv 4->4 (4x4), tconv 4->4 (4x4 in, 8x8 out), relu, tconv 4->3 (8x8 in, 16x16 out)
  const std::uint64_t want = (2 * 64 * 4 * 3 * 16 + 64 * 4) + 256 + (2 * 16 * 4 * 4 * 16 + 16 * 4) +
                             (2 * 16 * 4 * 4 * 16 + 64 * 4) + 256 + (2 * 64 * 3 * 4 * 16 + 256 * 3);
  EXPECT_EQ(r.total, want);
  EXPECT_DOUBLE_EQ(r.per_pixel, static_cast<double>(want) / 256.0);
}

namespace {

// Slim model in double with channels `zero` of ga0_act given a = 0 and no
// gamma coupling into kept channels, so pruning them is exact.
ModelGraph<double> prunable_model(const std::vector<std::size_t>& zero) {
  auto m = build_model<double>(toy(Activation::gdn, true));
  auto& g = m.layer("ga0_act");
  const std::size_t C = g.out_channels;
  Rng rng(5);
  std::vector<double> beta(C), gamma(C * C);
  for (auto& b : beta) b = rng.uniform(0.5, 1.5);
  for (auto& v : gamma) v = rng.uniform(0.0, 0.3);
  for (std::size_t j : zero) {
    for (std::size_t i = 0; i < C; ++i) gamma[i * C + j] = 0.0;
  }
  g.gdn = GdnParams<double>::from_values(beta, gamma);
  for (std::size_t i = 0; i < C; ++i) {
    g.scale[i] = std::find(zero.begin(), zero.end(), i) != zero.end() ? 0.0 : rng.uniform(0.5, 1.5);
    g.shift[i] = rng.uniform(-0.5, 0.5);
  }
  return m;
}

}  // namespace

TEST(Prune, KeepsChannelsAboveThreshold) {
  auto m = build_model<double>(toy(Activation::gdn, true));
  auto& g = m.layer("ga0_act");
  const double a[] = {0.5, 1e-9, 0.3, 2.0};
  for (std::size_t i = 0; i < 4; ++i) g.scale[i] = a[i];
  PruneReport rep;
  const auto p = prune(m, 1e-6, rep);
  ASSERT_EQ(rep.layers.size(), 1u);
  EXPECT_EQ(rep.layers[0].kept, (std::vector<std::size_t>{0, 2, 3}));
  EXPECT_EQ(rep.layers[0].before, 4u);
  EXPECT_EQ(rep.layers[0].after, 3u);
  EXPECT_EQ(p.layers[1].out_channels, 3u);
  EXPECT_EQ(p.layers[3].in_channels, 3u);
  EXPECT_TRUE(rep.warnings.empty());
}

TEST(Prune, AllBelowThresholdKeepsLargest) {
  auto m = build_model<double>(toy(Activation::gdn, true));
  auto& g = m.layer("ga0_act");
  const double a[] = {1e-9, -3e-9, 2e-9, 0.0};
  for (std::size_t i = 0; i < 4; ++i) g.scale[i] = a[i];
  PruneReport rep;
  prune(m, 1e-6, rep);
  EXPECT_EQ(rep.layers[0].kept, (std::vector<std::size_t>{1}));
  EXPECT_EQ(rep.warnings.size(), 1u);
}

TEST(Prune, ExactWhenDroppedScalesAreZero) {
  const auto m = prunable_model({1, 3});
  PruneReport rep;
  const auto p = prune(m, 1e-6, rep);
  EXPECT_EQ(rep.layers[0].kept, (std::vector<std::size_t>{0, 2}));
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> v(2 * 3 * 16 * 16);
    for (auto& x : v) x = rng.uniform();
    Tensor<double> x({2, 3, 16, 16}, v);
    NoGradGuard g;
    const auto a = forward(m, x);
    const auto b = forward(p, x);
    for (std::size_t i = 0; i < a.y.size(); ++i) ASSERT_NEAR(a.y[i], b.y[i], 1e-6);
    for (std::size_t i = 0; i < a.x_hat.size(); ++i) ASSERT_NEAR(a.x_hat[i], b.x_hat[i], 1e-6);
  }
}

TEST(Prune, FlopsDropByClosedForm) {
  const auto m = prunable_model({1, 3});
  PruneReport rep;
  const auto p = prune(m, 1e-6, rep);
  EXPECT_LT(rep.flops_after, rep.flops_before);
  EXPECT_EQ(rep.flops_after, flops_count(p, 16, 16).total);
  // Two of four channels leave: conv 3->4 (8x8 out) loses two filters, the
  // slim GDN shrinks from 4 to 2 channels, the next conv (4x4 out) loses two
  // input slices and gains one fold map.
  const std::uint64_t hw1 = 64, hw2 = 16;
  auto gdn = [&](std::uint64_t c) { return 2 * hw1 * c * c + hw1 * c + 2 * c * hw1 + 2 * c * hw1; };
  const std::uint64_t diff = (2 * hw1 * 2 * 3 * 16 + hw1 * 2) + (gdn(4) - gdn(2)) + (2 * hw2 * 4 * 2 * 16) - hw2 * 4;
  EXPECT_EQ(rep.flops_before - rep.flops_after, diff);
}

TEST(Prune, RequiresSlimLayers) {
  PruneReport rep;
  EXPECT_THROW(prune(build_model<double>(toy(Activation::gdn)), 1e-4, rep), ModelError);
}

TEST(Slim, ZeroEtaIsPlainTraining) {
  const auto data = synth_dataset<float>({6, 16, 3});
  TrainConfig tc;
  tc.iters = 15;
  tc.batch = 2;
  tc.log_every = 1;
  auto a = build_model<float>(toy(Activation::gdn, true));
  auto b = build_model<float>(toy(Activation::gdn, true));
  const auto ra = slim_train(a, data, 0.0, tc);
  const auto rb = train(b, data, tc);
  EXPECT_EQ(ra.trace.loss, rb.loss);
}

TEST(Slim, PenaltyShrinksScales) {
  const auto data = synth_dataset<float>({6, 16, 3});
  TrainConfig tc;
  tc.iters = 400;
  tc.batch = 2;
  tc.lr = 1e-2;
  tc.decay_at = 0.8;  // the smaller final step lets Adam settle near zero
  auto l1 = [](const ModelGraph<float>& m) {
    double s = 0.0;
    for (float v : m.layer("ga0_act").scale.values()) s += std::abs(v);
    return s;
  };
  auto a = build_model<float>(toy(Activation::gdn, true));
  auto b = build_model<float>(toy(Activation::gdn, true));
  slim_train(a, data, 0.0, tc);
  const auto r = slim_train(b, data, 10.0, tc);
  EXPECT_LT(l1(b), l1(a));
  std::size_t small = 0, total = 0;
  for (float v : b.layer("ga0_act").scale.values()) {
    small += std::abs(v) < 1e-3 ? 1 : 0;
    ++total;
  }
  EXPECT_GE(2 * small, total);
  ASSERT_EQ(r.histograms.size(), 1u);
  std::size_t counted = 0;
  for (auto c : r.histograms[0].counts) counted += c;
  EXPECT_EQ(counted, total);
}
