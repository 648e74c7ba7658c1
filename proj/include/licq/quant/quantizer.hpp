#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/ops.hpp"
#include "licq/core/tensor.hpp"

namespace licq {

inline constexpr double kScaleFloor = 1e-12;

/// Round to nearest, ties to even, independent of the FP environment.
inline double round_half_even(double v) {
  const double r = std::round(v);  // ties away from zero
  if (std::abs(v - std::trunc(v)) == 0.5) return 2.0 * std::round(v / 2.0);
  return r;
}

enum class Signedness { signed_int, unsigned_int };

struct Granularity {
  std::optional<std::size_t> axis;  // nullopt: one scale for the whole tensor
  std::size_t channels = 1;

  static Granularity per_tensor() { return {}; }
  static Granularity per_channel(std::size_t axis, std::size_t channels) { return {axis, channels}; }
};

/// Zero-point-free integer grid: value = q * scale, q in [qmin, qmax].
struct QuantSpec {
  int bits = 8;
  Signedness signedness = Signedness::signed_int;
  Granularity granularity;
  std::vector<double> scales;  // one entry, or one per channel

  std::int64_t qmin() const {
    return signedness == Signedness::signed_int ? -(std::int64_t{1} << (bits - 1)) : 0;
  }
  std::int64_t qmax() const {
    return signedness == Signedness::signed_int ? (std::int64_t{1} << (bits - 1)) - 1
                                                : (std::int64_t{1} << bits) - 1;
  }
  bool per_channel() const { return granularity.axis.has_value(); }
  double scale(std::size_t channel = 0) const { return per_channel() ? scales.at(channel) : scales.at(0); }
  double clip_lo(std::size_t channel = 0) const { return scale(channel) * static_cast<double>(qmin()); }
  double clip_hi(std::size_t channel = 0) const { return scale(channel) * static_cast<double>(qmax()); }

  // Channel of flat element i of a tensor with the given shape.
  std::size_t channel_of(const Shape& shape, std::size_t i) const {
    if (!per_channel()) return 0;
    const std::size_t axis = *granularity.axis;
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    return (i / inner) % shape[axis];
  }

  void validate_for(const Shape& shape) const {
    if (!per_channel()) return;
    const std::size_t axis = *granularity.axis;
    if (axis >= shape.size() || shape[axis] != scales.size()) {
      throw ModelError("quant spec has " + std::to_string(scales.size()) + " channel scales on axis " +
                       std::to_string(axis) + ", tensor shape " + shape_str(shape));
    }
  }
};

namespace detail {

inline void check_bits(int bits) {
  if (bits < 2 || bits > 16) throw ModelError("quant spec: bit width " + std::to_string(bits) + " outside 2..16");
}

inline double scale_for(double lo, double hi, int bits, Signedness s) {
  if (hi < lo) throw ModelError("quant spec: range upper bound below lower bound");
  double scale;
  if (s == Signedness::signed_int) {
    scale = std::max(std::abs(lo), std::abs(hi)) / static_cast<double>((std::int64_t{1} << (bits - 1)) - 1);
  } else {
    if (lo < 0.0) throw ModelError("quant spec: unsigned range requires lo = 0, got " + std::to_string(lo));
    scale = hi / static_cast<double>((std::int64_t{1} << bits) - 1);
  }
  scale = std::max(scale, kScaleFloor);
  if (!std::isfinite(scale)) throw ModelError("quant spec: non-finite range");
  return scale;
}

}  // namespace detail

/// Scale derivation from a calibrated real range. Signed specs cover
/// [-max(|lo|,|hi|), +max(|lo|,|hi|)]; unsigned specs require lo = 0.
inline QuantSpec make_spec(double range_lo, double range_hi, int bits, Signedness signedness,
                           Granularity granularity = Granularity::per_tensor()) {
  detail::check_bits(bits);
  const double scale = detail::scale_for(range_lo, range_hi, bits, signedness);
  QuantSpec spec{bits, signedness, granularity, {}};
  spec.scales.assign(granularity.axis ? granularity.channels : 1, scale);
  return spec;
}

inline QuantSpec make_per_channel_spec(std::span<const double> lo, std::span<const double> hi, int bits,
                                       Signedness signedness, std::size_t axis) {
  detail::check_bits(bits);
  if (lo.size() != hi.size() || lo.empty()) throw ModelError("quant spec: per-channel range size mismatch");
  QuantSpec spec{bits, signedness, Granularity::per_channel(axis, lo.size()), {}};
  for (std::size_t c = 0; c < lo.size(); ++c) spec.scales.push_back(detail::scale_for(lo[c], hi[c], bits, signedness));
  return spec;
}

/// Symmetric per-output-channel weight spec from the current max |w|.
template <typename T>
QuantSpec weight_spec(const Tensor<T>& w, int bits, std::size_t axis,
                      Signedness signedness = Signedness::signed_int) {
  const std::size_t channels = w.dim(axis);
  std::vector<double> lo(channels, 0.0), hi(channels, 0.0);
  QuantSpec probe{bits, signedness, Granularity::per_channel(axis, channels), std::vector<double>(channels, 1.0)};
  const auto v = w.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = probe.channel_of(w.shape(), i);
    const double x = static_cast<double>(v[i]);
    if (signedness == Signedness::signed_int) {
      hi[c] = std::max(hi[c], std::abs(x));
    } else {
      hi[c] = std::max(hi[c], x);
    }
  }
  return make_per_channel_spec(lo, hi, bits, signedness, axis);
}

struct IntTensor {
  Shape shape;
  std::vector<std::int64_t> values;
};

inline std::int64_t quantize_value(double x, double scale, std::int64_t qmin, std::int64_t qmax) {
  const double r = round_half_even(x / scale);
  if (r <= static_cast<double>(qmin)) return qmin;
  if (r >= static_cast<double>(qmax)) return qmax;
  return static_cast<std::int64_t>(r);
}

/// q = clamp(round_half_even(x / scale), qmin, qmax)
template <typename T>
IntTensor quantize(const Tensor<T>& x, const QuantSpec& spec) {
  spec.validate_for(x.shape());
  IntTensor q{x.shape(), std::vector<std::int64_t>(x.size())};
  const auto v = x.values();
  const auto lo = spec.qmin(), hi = spec.qmax();
  for (std::size_t i = 0; i < v.size(); ++i) {
    q.values[i] = quantize_value(static_cast<double>(v[i]), spec.scale(spec.channel_of(x.shape(), i)), lo, hi);
  }
  return q;
}

template <typename T>
Tensor<T> dequantize(const IntTensor& q, const QuantSpec& spec) {
  spec.validate_for(q.shape);
  std::vector<T> out(q.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(q.values[i]) * spec.scale(spec.channel_of(q.shape, i)));
  }
  return Tensor<T>(q.shape, std::move(out));
}

/// Quantize-dequantize graph node. Backward is the clipped straight-through
/// estimator: the upstream gradient passes where clip_lo <= x <= clip_hi and
/// is zeroed elsewhere.
template <typename T>
Tensor<T> fake_quant(const Tensor<T>& x, const QuantSpec& spec) {
  spec.validate_for(x.shape());
  const std::size_t n = x.size();
  std::vector<T> out(n);
  std::vector<bool> pass(n);
  const auto v = x.values();
  const auto lo = spec.qmin(), hi = spec.qmax();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = spec.channel_of(x.shape(), i);
    const double s = spec.scale(c);
    const double xd = static_cast<double>(v[i]);
    out[i] = static_cast<T>(static_cast<double>(quantize_value(xd, s, lo, hi)) * s);
    pass[i] = xd >= spec.clip_lo(c) && xd <= spec.clip_hi(c);
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [pass = std::move(pass)](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pass[i]) g[i] += self.grad[i];
    }
  });
}

/// Snap values to a per-channel grid (axis 1, or one shared step when
/// `steps` has a single entry) with an identity gradient. Used for biases,
/// which live on the accumulator grid and are not range-limited.
/// With `at_least_one_step`, results below one step are raised to one step.
template <typename T>
Tensor<T> snap_to_grid(const Tensor<T>& x, std::vector<double> steps, bool at_least_one_step = false) {
  const std::size_t n = x.size();
  const bool shared = steps.size() == 1;
  std::size_t inner = 1, channels = 1;
  if (!shared) {
    if (x.rank() == 1) {
      channels = x.dim(0);
    } else {
      channels = x.dim(1);
      inner = detail::inner_size(x.shape());
    }
    if (channels != steps.size()) throw ModelError("snap_to_grid: step count does not match channels");
  }
  std::vector<T> out(n);
  const auto v = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double step = shared ? steps[0] : steps[(i / inner) % channels];
    double q = round_half_even(static_cast<double>(v[i]) / step);
    if (at_least_one_step && q < 1.0) q = 1.0;
    out[i] = static_cast<T>(q * step);
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [](TensorNode<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Mean squared quantization error, mean((x - fake_quant(x))^2).
template <typename T>
double msqe(const Tensor<T>& x, const QuantSpec& spec) {
  if (x.size() == 0) return 0.0;
  const auto fq = fake_quant(x.detach(), spec);
  const auto a = x.values();
  const auto b = fq.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace licq
