#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "licq/codec/forward.hpp"
#include "licq/codec/model.hpp"
#include "licq/core/adam.hpp"
#include "licq/core/error.hpp"
#include "licq/core/ops.hpp"
#include "licq/core/rng.hpp"
#include "licq/metrics/psnr.hpp"

namespace licq {

struct RDLossConfig {
  double lambda = 0.0067;
  double reg_strength = 0.0;  // weight-outlier penalty coefficient
  double eta = 0.0;           // L1 coefficient on slim-GDN scales
};

inline void validate(const RDLossConfig& c) {
  if (!(c.lambda > 0.0)) throw ConfigError("lambda must be > 0");
  if (!(c.reg_strength >= 0.0)) throw ConfigError("reg_strength must be >= 0");
  if (!(c.eta >= 0.0)) throw ConfigError("eta must be >= 0");
}

inline constexpr double kPeakSquared = 255.0 * 255.0;

/// R/(N H W) + lambda * MSE on the 255 scale. `rate` is total bits for the batch.
template <typename T>
Tensor<T> rd_loss(const Tensor<T>& x, const Tensor<T>& x_hat, const Tensor<T>& rate, double lambda) {
  if (x.shape() != x_hat.shape()) {
    throw ModelError("rd_loss: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  }
  const double pixels = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
  const auto bpp = mul_scalar(rate, static_cast<T>(1.0 / pixels));
  const auto dist = mul_scalar(mean(square(sub(x, x_hat))), static_cast<T>(kPeakSquared * lambda));
  return add(bpp, dist);
}

/// Random crops stacked into [batch, 3, crop, crop].
template <typename T>
Tensor<T> sample_batch(const std::vector<Tensor<T>>& images, Rng& rng, std::size_t batch, std::size_t crop) {
  if (images.empty()) throw DataError("dataset is empty");
  std::vector<T> out(batch * 3 * crop * crop);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& img = images[rng.below(images.size())];
    const std::size_t H = img.dim(1), W = img.dim(2);
    if (H < crop || W < crop) throw DataError("image smaller than the " + std::to_string(crop) + "px crop");
    const std::size_t oy = rng.below(H - crop + 1), ox = rng.below(W - crop + 1);
    const auto v = img.values();
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < crop; ++y) {
        for (std::size_t x = 0; x < crop; ++x) {
          out[((b * 3 + c) * crop + y) * crop + x] = v[(c * H + oy + y) * W + ox + x];
        }
      }
    }
  }
  return Tensor<T>({batch, 3, crop, crop}, std::move(out));
}

/// The first `count` non-overlapping crops, images in order and each image
/// scanned in raster order. Deterministic calibration input.
template <typename T>
Tensor<T> raster_crops(const std::vector<Tensor<T>>& images, std::size_t count, std::size_t crop) {
  std::vector<T> out;
  std::size_t taken = 0;
  for (const auto& img : images) {
    const std::size_t H = img.dim(1), W = img.dim(2);
    const auto v = img.values();
    for (std::size_t oy = 0; oy + crop <= H && taken < count; oy += crop) {
      for (std::size_t ox = 0; ox + crop <= W && taken < count; ox += crop, ++taken) {
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t y = 0; y < crop; ++y) {
            for (std::size_t x = 0; x < crop; ++x) out.push_back(v[(c * H + oy + y) * W + ox + x]);
          }
        }
      }
    }
    if (taken == count) break;
  }
  if (taken == 0) throw DataError("calibration set is empty");
  return Tensor<T>({taken, 3, crop, crop}, std::move(out));
}

struct TrainConfig {
  double lambda = 0.0067;
  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t crop = 16;
  std::size_t iters = 500;
  std::uint64_t seed = 1;
  std::size_t log_every = 10;
  // Learning rate is multiplied by lr_decay once iter >= decay_at * iters.
  double decay_at = 1.0;
  double lr_decay = 0.1;
};

template <typename T>
struct TrainHooks {
  // Runs before the forward pass of every iteration (recalibration etc.).
  std::function<void(ModelGraph<T>&, std::size_t)> before_step;
  // Extra differentiable loss terms (regularizers), added to the RD loss.
  std::function<Tensor<T>(const ModelGraph<T>&)> extra_loss;
};

/// Each trace entry is the mean loss over the preceding log_every iterations.
struct TrainResult {
  std::vector<std::size_t> iters;
  std::vector<double> loss;
};

template <typename T>
TrainResult train(ModelGraph<T>& m, const std::vector<Tensor<T>>& images, const TrainConfig& cfg,
                  const TrainHooks<T>& hooks = {}) {
  if (images.empty()) throw DataError("train: dataset is empty");
  if (cfg.batch == 0 || cfg.crop == 0 || cfg.log_every == 0) throw ConfigError("train: batch, crop and log_every must be > 0");
  Rng master(cfg.seed);
  Rng batch_rng(master.next());
  Rng noise_rng(master.next());
  Adam<T> opt(m.parameters(), AdamHyper{cfg.lr});
  TrainResult result;
  double window = 0.0;
  std::size_t in_window = 0;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    if (static_cast<double>(it) >= cfg.decay_at * static_cast<double>(cfg.iters)) {
      opt.hyper().lr = cfg.lr * cfg.lr_decay;
    }
    if (hooks.before_step) hooks.before_step(m, it);
    const auto x = sample_batch(images, batch_rng, cfg.batch, cfg.crop);
    auto fw = forward(m, x, {.training = true, .noise = &noise_rng});
    auto loss = rd_loss(x, fw.x_hat, fw.rate_bits, cfg.lambda);
    if (hooks.extra_loss) loss = add(loss, hooks.extra_loss(m));
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw NumericError("training diverged: non-finite loss at iteration " + std::to_string(it));
    opt.zero_grad();
    backward(loss);
    opt.step();
    window += value;
    if (++in_window == cfg.log_every || it + 1 == cfg.iters) {
      result.iters.push_back(it + 1);
      result.loss.push_back(window / static_cast<double>(in_window));
      window = 0.0;
      in_window = 0;
    }
  }
  return result;
}

struct RDEval {
  double bpp = 0.0;
  double psnr = 0.0;   // mean of per-image PSNR
  double mse = 0.0;    // mean per-image MSE, 255 scale
  double loss = 0.0;   // bpp + lambda * mse

  RDPoint point() const { return {bpp, psnr}; }
};

/// Deterministic evaluation with rounded latents; reconstructions are
/// clamped to [0, 1] before distortion is measured.
template <typename T>
RDEval eval_rd(const ModelGraph<T>& m, const std::vector<Tensor<T>>& images, double lambda) {
  if (images.empty()) throw DataError("eval: no images");
  NoGradGuard no_grad;
  RDEval e;
  for (const auto& img : images) {
    const auto x = img.detach().reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    const auto fw = forward(m, x);
    const double pixels = static_cast<double>(img.dim(1) * img.dim(2));
    e.bpp += static_cast<double>(fw.rate_bits.item()) / pixels;
    const auto a = x.values();
    const auto b = fw.x_hat.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = 255.0 * (static_cast<double>(a[i]) - std::clamp(static_cast<double>(b[i]), 0.0, 1.0));
      acc += d * d;
    }
    const double mse_i = acc / static_cast<double>(a.size());
    e.psnr += psnr_from_mse(mse_i);
    e.mse += mse_i;
  }
  const double n = static_cast<double>(images.size());
  e.bpp /= n;
  e.psnr /= n;
  e.mse /= n;
  e.loss = e.bpp + lambda * e.mse;
  return e;
}

template <typename T>
RDPoint eval_rd_point(const ModelGraph<T>& m, const std::vector<Tensor<T>>& images) {
  return eval_rd(m, images, 1.0).point();
}

}  // namespace licq
