#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "licq/codec/forward.hpp"
#include "licq/codec/model.hpp"
#include "licq/core/error.hpp"
#include "licq/layers/gdn.hpp"

namespace licq {

inline constexpr double kThetaFloor = 1e-6;

/// Statistics of one monitored activation layer. mean/std/min/max describe
/// the layer input (the tensor its clip consumes); out_min/out_max the layer
/// output before its edge quantizer.
struct ActivationStats {
  std::string id;
  LayerKind kind = LayerKind::clipped_relu;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  double out_min = 0.0;
  double out_max = 0.0;
};

struct WeightThresholds {
  std::string id;
  double theta_min = 0.0;
  double theta_max = 0.0;
};

struct CalibStats {
  std::vector<ActivationStats> acts;
  std::vector<WeightThresholds> weights;
  std::size_t sample_count = 0;

  const ActivationStats& act(const std::string& id) const {
    for (const auto& a : acts) {
      if (a.id == id) return a;
    }
    throw ModelError("no calibration statistics for layer '" + id + "'");
  }
};

/// Welford mean / population variance in double, in element order.
struct RunningStats {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  void push(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
    min = std::min(min, x);
    max = std::max(max, x);
  }
  double variance() const { return n ? m2 / static_cast<double>(n) : 0.0; }
  double stddev() const { return std::sqrt(std::max(0.0, variance())); }
};

inline bool is_monitored(LayerKind k) { return k == LayerKind::clipped_relu || is_gdn_family(k); }

/// One read-only pass over the calibration crops [n,3,h,w].
template <typename T>
CalibStats collect_activation_stats(const ModelGraph<T>& m, const Tensor<T>& calib) {
  if (!calib.defined() || calib.size() == 0 || calib.dim(0) == 0) throw DataError("calibration set is empty");
  NoGradGuard no_grad;
  const auto fw = forward(m, calib.detach(), {.taps = true});
  CalibStats stats;
  stats.sample_count = calib.dim(0);
  for (const auto& tap : fw.taps) {
    if (!is_monitored(tap.kind)) continue;
    RunningStats in, out;
    for (T v : tap.pre.values()) in.push(static_cast<double>(v));
    for (T v : tap.post.values()) out.push(static_cast<double>(v));
    stats.acts.push_back({tap.id, tap.kind, in.n, in.mean, in.stddev(), in.min, in.max, out.min, out.max});
  }
  return stats;
}

/// Clip-width heuristic k = 625 lambda + 2.
inline double k_from_lambda(double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("k_from_lambda: lambda must be > 0");
  return 625.0 * lambda + 2.0;
}

enum class ClipMode { one_sided, two_sided };

/// theta = mu + k sigma (one-sided, floored at 1e-6) or (mu - k sigma,
/// mu + k sigma). An infinite k yields unbounded clips. Degenerate
/// two-sided intervals are widened to 1e-6.
inline ClipBounds clip_from_stats(double mu, double sigma, double k, ClipMode mode) {
  if (std::isinf(k)) return mode == ClipMode::one_sided ? ClipBounds::one_sided(std::numeric_limits<double>::infinity())
                                                        : ClipBounds::unbounded();
  if (mode == ClipMode::one_sided) return ClipBounds::one_sided(std::max(mu + k * sigma, kThetaFloor));
  double lo = mu - k * sigma, hi = mu + k * sigma;
  if (hi - lo < kThetaFloor) {
    lo = mu - kThetaFloor / 2;
    hi = mu + kThetaFloor / 2;
  }
  return ClipBounds::two_sided(lo, hi);
}

inline ClipMode clip_mode_for(LayerKind k) {
  return k == LayerKind::clipped_relu ? ClipMode::one_sided : ClipMode::two_sided;
}

struct LayerClip {
  std::string id;
  ClipBounds bounds;
};

inline std::vector<LayerClip> clip_thresholds(const CalibStats& stats, double k) {
  std::vector<LayerClip> out;
  for (const auto& a : stats.acts) out.push_back({a.id, clip_from_stats(a.mean, a.std, k, clip_mode_for(a.kind))});
  return out;
}

template <typename T>
void install_clips(ModelGraph<T>& m, const std::vector<LayerClip>& clips) {
  for (const auto& c : clips) m.layer(c.id).clip = c.bounds;
}

/// Quantizer ranges from observed extremes, intersected with the installed
/// clips, so a range never exceeds what the tensor actually reaches.
template <typename T>
void set_ranges(ModelGraph<T>& m, const CalibStats& stats) {
  for (const auto& a : stats.acts) {
    auto& l = m.layer(a.id);
    if (l.kind == LayerKind::clipped_relu) {
      l.output_range = QuantRange{0.0, std::max(0.0, a.out_max)};
    } else {
      const ClipBounds c = l.clip.value_or(ClipBounds::unbounded());
      const double lo = std::max(c.lo, a.min), hi = std::min(c.hi, a.max);
      l.input_range = QuantRange{std::min(lo, hi), std::max(lo, hi)};
      l.output_range = QuantRange{a.out_min, a.out_max};
    }
  }
}

/// Type-7 percentile: linear interpolation between the closest order
/// statistics at position q (n - 1). Input need not be sorted.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ModelError("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// (alpha, 1 - alpha) percentiles; min/max when the layer has fewer than
/// 1/alpha weights.
template <typename V>
WeightThresholds weight_thresholds(std::span<const V> w, double alpha, std::string id = {}) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw ConfigError("draq.alpha must be in (0, 0.5)");
  if (w.empty()) throw ModelError("weight_thresholds: layer '" + id + "' has no weights");
  std::vector<double> v(w.begin(), w.end());
  if (static_cast<double>(v.size()) < 1.0 / alpha) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return {std::move(id), *lo, *hi};
  }
  return {std::move(id), percentile(v, alpha), percentile(v, 1.0 - alpha)};
}

/// Thresholds for every conv / tconv kernel.
template <typename T>
std::vector<WeightThresholds> model_weight_thresholds(const ModelGraph<T>& m, double alpha) {
  std::vector<WeightThresholds> out;
  for (auto i : m.conv_indices()) out.push_back(weight_thresholds(m.layers[i].weight.values(), alpha, m.layers[i].id));
  return out;
}

/// reg_strength * sum over kernels of sum relu(w - theta_max) + relu(theta_min - w).
/// Gradient is +-reg_strength on outliers and 0 inside (boundaries inclusive).
template <typename T>
Tensor<T> weight_reg_loss(const ModelGraph<T>& m, const std::vector<WeightThresholds>& thresholds,
                          double reg_strength) {
  const auto idx = m.conv_indices();
  if (thresholds.size() != idx.size()) throw ModelError("weight_reg_loss: thresholds do not cover every conv layer");
  std::vector<const Tensor<T>*> ins;
  double total = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& l = m.layers[idx[k]];
    if (thresholds[k].id != l.id) throw ModelError("weight_reg_loss: thresholds out of order at '" + l.id + "'");
    ins.push_back(&l.weight);
    for (T v : l.weight.values()) {
      const double x = static_cast<double>(v);
      if (x > thresholds[k].theta_max) total += x - thresholds[k].theta_max;
      if (x < thresholds[k].theta_min) total += thresholds[k].theta_min - x;
    }
  }
  return detail::make_result<T>(
      Shape{1}, {static_cast<T>(reg_strength * total)}, ins, [thresholds, reg_strength](TensorNode<T>& self) {
        const T g = self.grad[0] * static_cast<T>(reg_strength);
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          auto& node = *self.inputs[k];
          if (!node.requires_grad) continue;
          auto& gw = node.grad_buffer();
          for (std::size_t i = 0; i < gw.size(); ++i) {
            const double x = static_cast<double>(node.value[i]);
            if (x > thresholds[k].theta_max) gw[i] += g;
            if (x < thresholds[k].theta_min) gw[i] -= g;
          }
        }
      });
}

/// Fraction of conv weights outside their thresholds (boundaries inside).
template <typename T>
double outlier_fraction(const ModelGraph<T>& m, const std::vector<WeightThresholds>& thresholds) {
  const auto idx = m.conv_indices();
  std::size_t out = 0, total = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    for (T v : m.layers[idx[k]].weight.values()) {
      const double x = static_cast<double>(v);
      out += (x < thresholds[k].theta_min || x > thresholds[k].theta_max) ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(out) / static_cast<double>(total) : 0.0;
}

/// Clip installation plus range calibration. With a finite k, clips come
/// from the first pass statistics; a second pass measures the ranges the
/// quantizers see with those clips in place. k = +inf leaves layers
/// unclipped (plain min-max calibration).
template <typename T>
CalibStats calibrate(ModelGraph<T>& m, const Tensor<T>& calib, double k) {
  const auto first = collect_activation_stats(m, calib);
  install_clips(m, clip_thresholds(first, k));
  auto second = collect_activation_stats(m, calib);
  set_ranges(m, second);
  // Report the clip-defining statistics with the post-clip output extremes.
  auto report = first;
  for (std::size_t i = 0; i < report.acts.size(); ++i) {
    report.acts[i].out_min = second.acts[i].out_min;
    report.acts[i].out_max = second.acts[i].out_max;
  }
  return report;
}

}  // namespace licq
