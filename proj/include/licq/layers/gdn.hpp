#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/ops.hpp"
#include "licq/core/tensor.hpp"
#include "licq/quant/quantizer.hpp"

namespace licq {

inline constexpr double kBetaFloor = 1e-6;

/// Clip bounds of an activation layer. One-sided (ClippedReLU) layers use
/// lo = 0 and hi = theta; an unbounded side is +-infinity.
struct ClipBounds {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  static ClipBounds one_sided(double theta) { return {0.0, theta}; }
  static ClipBounds two_sided(double lo, double hi) { return {lo, hi}; }
  static ClipBounds unbounded() { return {}; }
  bool bounded() const { return std::isfinite(lo) || std::isfinite(hi); }
};

/// max(0, min(x, theta)); theta = +inf gives a plain ReLU.
template <typename T>
Tensor<T> clipped_relu(const Tensor<T>& x, double theta = std::numeric_limits<double>::infinity()) {
  if (!(theta > 0.0)) throw ModelError("clipped_relu: theta must be positive");
  return clip(x, 0.0, theta);
}

/// Simplified GDN parameters held as raw leaves:
///   beta  = softplus(raw_beta) + kBetaFloor    [C]
///   gamma = softplus(raw_gamma)                [C, C]  (row i feeds channel i)
template <typename T>
struct GdnParams {
  Tensor<T> raw_beta;
  Tensor<T> raw_gamma;

  std::size_t channels() const { return raw_beta.size(); }

  static GdnParams from_values(const std::vector<double>& beta, const std::vector<double>& gamma) {
    const std::size_t c = beta.size();
    if (gamma.size() != c * c) throw ModelError("gdn params: gamma must be C x C");
    std::vector<T> rb(c), rg(c * c);
    for (std::size_t i = 0; i < c; ++i) {
      if (beta[i] < kBetaFloor) throw ModelError("gdn params: beta below floor");
      rb[i] = inverse_softplus_value(static_cast<T>(beta[i] - kBetaFloor));
    }
    for (std::size_t i = 0; i < c * c; ++i) {
      if (gamma[i] < 0.0) throw ModelError("gdn params: gamma must be nonnegative");
      rg[i] = inverse_softplus_value(static_cast<T>(gamma[i]));
    }
    return {Tensor<T>({c}, std::move(rb), true), Tensor<T>({c, c}, std::move(rg), true)};
  }

  // beta = 1, gamma = scale * I
  static GdnParams identity_init(std::size_t c, double gamma_diag = 0.01) {
    std::vector<double> beta(c, 1.0), gamma(c * c, 0.0);
    for (std::size_t i = 0; i < c; ++i) gamma[i * c + i] = gamma_diag;
    return from_values(beta, gamma);
  }

  Tensor<T> beta() const { return add_scalar(softplus(raw_beta), static_cast<T>(kBetaFloor)); }
  Tensor<T> gamma() const { return softplus(raw_gamma); }

  GdnParams clone() const { return {raw_beta.clone(), raw_gamma.clone()}; }
};

/// GDN followed by a per-channel affine map, a * gdn(x) + b.
template <typename T>
struct SlimGdnParams {
  GdnParams<T> gdn;
  Tensor<T> scale;  // a, initialised to 1
  Tensor<T> shift;  // b, initialised to 0

  static SlimGdnParams identity_init(std::size_t c) {
    return {GdnParams<T>::identity_init(c), Tensor<T>({c}, T(1), true), Tensor<T>({c}, T(0), true)};
  }
};

namespace detail {

inline void check_gdn_shapes(const Shape& x, const Shape& beta, const Shape& gamma) {
  if (x.size() != 4) throw ModelError("gdn: expected [N,C,H,W] input");
  const std::size_t c = x[1];
  if (beta != Shape{c} || gamma != Shape{c, c}) {
    throw ModelError("gdn: parameters do not match " + std::to_string(c) + " channels");
  }
}

// d[n,i,p] = beta_i + sum_j gamma_ij |x[n,j,p]|
template <typename T>
std::vector<T> gdn_denominator_values(std::span<const T> x, std::span<const T> beta, std::span<const T> gamma,
                                      std::size_t N, std::size_t C, std::size_t P) {
  std::vector<T> d(N * C * P);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < C; ++i) {
      T* di = d.data() + (n * C + i) * P;
      std::fill(di, di + P, beta[i]);
      for (std::size_t j = 0; j < C; ++j) {
        const T g = gamma[i * C + j];
        const T* xj = x.data() + (n * C + j) * P;
        for (std::size_t p = 0; p < P; ++p) di[p] += g * std::abs(xj[p]);
      }
    }
  }
  return d;
}

// Shared body of gdn/igdn. divisive: z = x / d, otherwise z = x * d.
template <typename T>
Tensor<T> gdn_like(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, bool divisive) {
  check_gdn_shapes(x.shape(), beta.shape(), gamma.shape());
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  auto d = gdn_denominator_values<T>(x.values(), beta.values(), gamma.values(), N, C, P);
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (divisive && !(d[i] > T(0))) throw NumericError("gdn: non-positive denominator at index " + std::to_string(i));
    out[i] = divisive ? xv[i] / d[i] : xv[i] * d[i];
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &beta, &gamma},
      [d = std::move(d), N, C, P, divisive](TensorNode<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nb = *self.inputs[1];
        auto& ng = *self.inputs[2];
        const auto& g = self.grad;
        const auto& x = nx.value;
        // dz_i/dd_i, then fan the denominator gradient out to beta, gamma, |x|.
        std::vector<T> gd(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) {
          gd[k] = divisive ? -g[k] * x[k] / (d[k] * d[k]) : g[k] * x[k];
        }
        if (nx.requires_grad) {
          auto& gx = nx.grad_buffer();
          for (std::size_t k = 0; k < g.size(); ++k) gx[k] += divisive ? g[k] / d[k] : g[k] * d[k];
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t i = 0; i < C; ++i) {
              const T* gdi = gd.data() + (n * C + i) * P;
              for (std::size_t j = 0; j < C; ++j) {
                const T gam = ng.value[i * C + j];
                const std::size_t off = (n * C + j) * P;
                for (std::size_t p = 0; p < P; ++p) gx[off + p] += gdi[p] * gam * sign0(x[off + p]);
              }
            }
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t i = 0; i < C; ++i) {
              const T* gdi = gd.data() + (n * C + i) * P;
              T acc = T(0);
              for (std::size_t p = 0; p < P; ++p) acc += gdi[p];
              gb[i] += acc;
            }
          }
        }
        if (ng.requires_grad) {
          auto& gg = ng.grad_buffer();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t i = 0; i < C; ++i) {
              const T* gdi = gd.data() + (n * C + i) * P;
              for (std::size_t j = 0; j < C; ++j) {
                const T* xj = x.data() + (n * C + j) * P;
                T acc = T(0);
                for (std::size_t p = 0; p < P; ++p) acc += gdi[p] * std::abs(xj[p]);
                gg[i * C + j] += acc;
              }
            }
          }
        }
      });
}

}  // namespace detail

/// z_i = x_i / (beta_i + sum_j gamma_ij |x_j|), evaluated directly per pixel.
template <typename T>
Tensor<T> gdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma) {
  return detail::gdn_like(x, beta, gamma, true);
}

template <typename T>
Tensor<T> gdn_forward(const Tensor<T>& x, const GdnParams<T>& p) {
  return gdn(x, p.beta(), p.gamma());
}

/// Multiplicative counterpart: z_i = x_i * (beta_i + sum_j gamma_ij |x_j|).
template <typename T>
Tensor<T> igdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma) {
  return detail::gdn_like(x, beta, gamma, false);
}

template <typename T>
Tensor<T> igdn_forward(const Tensor<T>& x, const GdnParams<T>& p) {
  return igdn(x, p.beta(), p.gamma());
}

/// The GDN denominator as a 1x1 channel-mixing convolution of |x| with
/// gamma as the kernel and beta as the bias.
template <typename T>
Tensor<T> gdn_denominator_as_conv(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma) {
  detail::check_gdn_shapes(x.shape(), beta.shape(), gamma.shape());
  const std::size_t c = beta.size();
  return conv2d(abs(x), gamma.reshaped({c, c, 1, 1}), beta, 1, 0);
}

template <typename T>
Tensor<T> gdn_denominator_as_conv(const Tensor<T>& x, const GdnParams<T>& p) {
  return gdn_denominator_as_conv(x, p.beta(), p.gamma());
}

// Decomposed route: pointwise conv for the denominator, then an elementwise divide.
template <typename T>
Tensor<T> gdn_decomposed(const Tensor<T>& x, const GdnParams<T>& p) {
  return div(x, gdn_denominator_as_conv(x, p));
}

template <typename T>
Tensor<T> slim_gdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, const Tensor<T>& scale,
                   const Tensor<T>& shift) {
  return add(mul(gdn(x, beta, gamma), scale), shift);
}

template <typename T>
Tensor<T> slim_gdn_forward(const Tensor<T>& x, const SlimGdnParams<T>& p) {
  return slim_gdn(x, p.gdn.beta(), p.gdn.gamma(), p.scale, p.shift);
}

/// Specs for the quantized GDN parameters given the input activation spec.
/// gamma: unsigned per-row (output channel) grid. beta: folded into the
/// denominator accumulator, so its grid step per channel is
/// scale_gamma_i * scale_x, and it never rounds below one step.
struct GdnQuantSpecs {
  QuantSpec gamma;
  std::vector<double> beta_steps;
};

template <typename T>
GdnQuantSpecs gdn_quant_specs(const Tensor<T>& gamma_values, const QuantSpec& spec_x, int bits) {
  GdnQuantSpecs specs{weight_spec(gamma_values, bits, 0, Signedness::unsigned_int), {}};
  for (double s : specs.gamma.scales) specs.beta_steps.push_back(s * spec_x.scale());
  return specs;
}

namespace detail {

template <typename T>
Tensor<T> quantized_gdn_like(const Tensor<T>& x, const GdnParams<T>& p, const QuantSpec& spec_x, int param_bits,
                             const std::optional<ClipBounds>& clip_bounds, bool divisive) {
  if (!clip_bounds) {
    throw ModelError("quantized gdn: clip bounds are not calibrated; run calibration first");
  }
  const auto xq = fake_quant(clip(x, clip_bounds->lo, clip_bounds->hi), spec_x);
  const auto gamma = p.gamma();
  const auto specs = gdn_quant_specs(gamma, spec_x, param_bits);
  const auto gamma_q = fake_quant(gamma, specs.gamma);
  const auto beta_q = snap_to_grid(p.beta(), specs.beta_steps, true);
  return gdn_like(xq, beta_q, gamma_q, divisive);
}

}  // namespace detail

/// Quantized GDN: clip(x, a, b) -> one activation quantizer for x -> the
/// quantized x feeds both the numerator and (as |x_q|) the denominator,
/// with fake-quantized gamma and beta. The division itself stays real.
template <typename T>
Tensor<T> quantized_gdn_forward(const Tensor<T>& x, const GdnParams<T>& p, const QuantSpec& spec_x, int param_bits,
                                const std::optional<ClipBounds>& clip_bounds) {
  return detail::quantized_gdn_like(x, p, spec_x, param_bits, clip_bounds, true);
}

template <typename T>
Tensor<T> quantized_igdn_forward(const Tensor<T>& x, const GdnParams<T>& p, const QuantSpec& spec_x, int param_bits,
                                 const std::optional<ClipBounds>& clip_bounds) {
  return detail::quantized_gdn_like(x, p, spec_x, param_bits, clip_bounds, false);
}

}  // namespace licq
