#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <boost/rational.hpp>

#include "licq/codec/model.hpp"
#include "licq/core/error.hpp"

namespace licq {

using Rational = boost::rational<std::int64_t>;

inline double to_double(const Rational& r) {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

struct BitWidthPlan {
  std::vector<std::string> layers;
  std::vector<int> bits;
  std::vector<bool> frozen;
  double epsilon = 0.0;
  double baseline_loss = 0.0;  // reference loss L_ref at the starting width
  int baseline_bits = 0;       // uniform width found by the first phase
  double baseline_width_loss = 0.0;

  void validate() const {
    if (bits.size() != layers.size() || frozen.size() != layers.size()) {
      throw ModelError("bit-width plan: layer, width and frozen lists differ in length");
    }
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] < 2 || bits[i] > 16) {
        throw ModelError("bit-width plan: layer '" + layers[i] + "' width " + std::to_string(bits[i]) + " outside 2..16");
      }
    }
  }
};

/// Per-layer memory weights, positive and summing to exactly one.
struct FootprintModel {
  std::vector<Rational> weights;

  static FootprintModel from_counts(const std::vector<std::int64_t>& counts) {
    if (counts.empty()) throw ModelError("footprint: no layers");
    std::int64_t total = 0;
    for (auto c : counts) {
      if (c <= 0) throw ModelError("footprint: layer sizes must be positive");
      total += c;
    }
    FootprintModel f;
    for (auto c : counts) f.weights.emplace_back(c, total);
    return f;
  }

  void validate() const {
    Rational sum(0);
    for (const auto& w : weights) {
      if (w <= Rational(0)) throw ModelError("footprint: weights must be positive");
      sum += w;
    }
    if (sum != Rational(1)) throw ModelError("footprint: weights do not sum to 1");
  }
};

/// P_m = sum_l w_l P_l, exact.
inline Rational equivalent_bitwidth_exact(const std::vector<int>& bits, const FootprintModel& f) {
  if (bits.size() != f.weights.size()) {
    throw ModelError("equivalent bit-width: plan has " + std::to_string(bits.size()) + " layers, footprint " +
                     std::to_string(f.weights.size()));
  }
  f.validate();
  Rational pm(0);
  for (std::size_t i = 0; i < bits.size(); ++i) pm += f.weights[i] * Rational(bits[i]);
  return pm;
}

inline double equivalent_bitwidth(const std::vector<int>& bits, const FootprintModel& f) {
  return to_double(equivalent_bitwidth_exact(bits, f));
}

enum class FootprintMode { element_count, halving };

/// Output spatial size of a conv / tconv layer for an input of h x w.
template <typename T>
std::pair<std::size_t, std::size_t> conv_output_size(const LayerNode<T>& l, std::size_t h, std::size_t w) {
  const auto k = static_cast<std::size_t>(l.kernel), s = static_cast<std::size_t>(l.stride),
             p = static_cast<std::size_t>(l.pad);
  if (l.kind == LayerKind::tconv) return {(h - 1) * s + k - 2 * p, (w - 1) * s + k - 2 * p};
  return {(h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1};
}

/// element_count: each conv layer weighted by its output feature-map size
/// for an h x w input. halving: the fixed 8:4:2:1 weighting of a
/// four-layer stack.
template <typename T>
FootprintModel footprint_from_graph(const ModelGraph<T>& m, FootprintMode mode, std::size_t h = 16, std::size_t w = 16) {
  const auto idx = m.conv_indices();
  if (mode == FootprintMode::halving) {
    if (idx.size() != 4) {
      throw ModelError("footprint: halving weighting needs exactly 4 layers, model has " +
                       std::to_string(idx.size()));
    }
    return {{Rational(8, 15), Rational(4, 15), Rational(2, 15), Rational(1, 15)}};
  }
  std::vector<std::int64_t> counts;
  for (const auto& l : m.layers) {
    if (!is_conv(l.kind)) continue;
    std::tie(h, w) = conv_output_size(l, h, w);
    counts.push_back(static_cast<std::int64_t>(l.out_channels * h * w));
  }
  return FootprintModel::from_counts(counts);
}

}  // namespace licq
