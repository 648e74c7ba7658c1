#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/tensor.hpp"

namespace licq {

inline constexpr double kLikelihoodFloor = 1e-9;

// Standard normal CDF and density. erfc keeps both tails accurate.
inline double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }
inline double normal_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); }

/// Probability mass of the unit-width bin centred on y under N(0, sigma^2),
/// Phi((y + 1/2) / sigma) - Phi((y - 1/2) / sigma), computed in whichever
/// tail avoids cancellation.
inline double bin_probability(double y, double sigma) {
  const double up = (y + 0.5) / sigma;
  const double lo = (y - 0.5) / sigma;
  if (y >= 0.0) return 0.5 * (std::erfc(lo / std::numbers::sqrt2) - std::erfc(up / std::numbers::sqrt2));
  return 0.5 * (std::erfc(-up / std::numbers::sqrt2) - std::erfc(-lo / std::numbers::sqrt2));
}

inline double likelihood(double y, double sigma) {
  return std::min(1.0, std::max(kLikelihoodFloor, bin_probability(y, sigma)));
}

/// Factorized zero-mean Gaussian prior, one scale per latent channel,
/// sigma_c = exp(log_scale_c).
template <typename T>
struct EntropyProxy {
  Tensor<T> log_scale;

  static EntropyProxy init(std::size_t channels, double sigma = 1.0) {
    return {Tensor<T>({channels}, static_cast<T>(std::log(sigma)), true)};
  }
  std::size_t channels() const { return log_scale.size(); }
};

/// Total estimated bits, sum of -log2 max(p_min, p) over the latent
/// [N, M, H, W]. Gradients flow to the latent and to log_scale; elements at
/// the likelihood floor contribute none.
template <typename T>
Tensor<T> rate_bits(const Tensor<T>& y_hat, const Tensor<T>& log_scale) {
  if (y_hat.rank() != 4 || log_scale.shape() != Shape{y_hat.dim(1)}) {
    throw ModelError("rate: entropy model has " + std::to_string(log_scale.size()) + " channels, latent shape " +
                     shape_str(y_hat.shape()));
  }
  const std::size_t C = y_hat.dim(1), P = y_hat.dim(2) * y_hat.dim(3);
  const auto y = y_hat.values();
  const auto ls = log_scale.values();
  std::vector<double> p(y.size());
  double bits = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t c = (i / P) % C;
    p[i] = bin_probability(static_cast<double>(y[i]), std::exp(static_cast<double>(ls[c])));
    bits -= std::log2(std::min(1.0, std::max(kLikelihoodFloor, p[i])));
  }
  return detail::make_result<T>(
      Shape{1}, {static_cast<T>(bits)}, {&y_hat, &log_scale},
      [p = std::move(p), C, P](TensorNode<T>& self) {
        auto& ny = *self.inputs[0];
        auto& nl = *self.inputs[1];
        const double g = static_cast<double>(self.grad[0]);
        std::vector<T>* gy = ny.requires_grad ? &ny.grad_buffer() : nullptr;
        std::vector<T>* gl = nl.requires_grad ? &nl.grad_buffer() : nullptr;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (p[i] <= kLikelihoodFloor || p[i] > 1.0) continue;
          const std::size_t c = (i / P) % C;
          const double sigma = std::exp(static_cast<double>(nl.value[c]));
          const double y = static_cast<double>(ny.value[i]);
          const double up = (y + 0.5) / sigma, lo = (y - 0.5) / sigma;
          const double dbits_dp = -1.0 / (p[i] * std::numbers::ln2);
          const double dp_dy = (normal_pdf(up) - normal_pdf(lo)) / sigma;
          const double dp_dls = -(normal_pdf(up) * up - normal_pdf(lo) * lo);
          if (gy) (*gy)[i] += static_cast<T>(g * dbits_dp * dp_dy);
          if (gl) (*gl)[c] += static_cast<T>(g * dbits_dp * dp_dls);
        }
      });
}

template <typename T>
double rate_estimate(const Tensor<T>& y_hat, const EntropyProxy<T>& proxy) {
  return static_cast<double>(rate_bits(y_hat.detach(), proxy.log_scale.detach()).item());
}

}  // namespace licq
