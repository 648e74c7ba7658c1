#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "licq/codec/model.hpp"
#include "licq/codec/train.hpp"
#include "licq/core/error.hpp"
#include "licq/draq/calibrate.hpp"

namespace licq {

struct DraqConfig {
  double alpha = 0.001;
  std::optional<double> k_override;
  double reg_strength = 1e-3;
  std::size_t recalib_period = 0;  // 0: iters / 10
  std::size_t calib_crops = 64;
  bool clip = true;  // false: min-max ranges, no clipping
  bool reg = true;   // false: no weight-outlier penalty
};

inline void validate(const DraqConfig& c) {
  if (!(c.alpha > 0.0 && c.alpha < 0.5)) throw ConfigError("draq.alpha must be in (0, 0.5)");
  if (!(c.reg_strength >= 0.0)) throw ConfigError("draq.reg_strength must be >= 0");
  if (c.k_override && !(*c.k_override > 0.0)) throw ConfigError("draq.k_override must be > 0");
  if (c.calib_crops == 0) throw ConfigError("draq.calib_crops must be > 0");
}

inline double draq_k(const DraqConfig& c, double lambda) {
  if (!c.clip) return std::numeric_limits<double>::infinity();
  return c.k_override ? *c.k_override : k_from_lambda(lambda);
}

inline std::size_t recalib_period(const DraqConfig& c, std::size_t iters) {
  if (c.recalib_period) return c.recalib_period;
  return std::max<std::size_t>(1, iters / 10);
}

struct DraqReport {
  double k = 0.0;
  CalibStats initial;
  CalibStats final;
  std::vector<WeightThresholds> initial_thresholds;
  double outliers_before = 0.0;  // against the initial thresholds
  double outliers_after = 0.0;
  TrainResult trace;
};

/// Quantization-aware fine-tuning with calibrated clipping and weight-outlier
/// regularization. Starting from a float model: calibrate once on a fixed
/// crop subset, switch fake quantization on, then train on the RD loss plus
/// the penalty, recomputing weight thresholds, clips and quantizer ranges
/// every recalibration period from the same subset.
template <typename T>
DraqReport draq_finetune(ModelGraph<T>& m, const std::vector<Tensor<T>>& images, const DraqConfig& dc,
                         const TrainConfig& tc) {
  validate(dc);
  const auto calib = raster_crops(images, dc.calib_crops, tc.crop);
  DraqReport rep;
  rep.k = draq_k(dc, tc.lambda);
  rep.initial = calibrate(m, calib, rep.k);
  m.quantized = true;

  const double reg = dc.reg ? dc.reg_strength : 0.0;
  auto thresholds = model_weight_thresholds(m, dc.alpha);
  rep.initial_thresholds = thresholds;
  rep.outliers_before = outlier_fraction(m, thresholds);

  const std::size_t period = recalib_period(dc, tc.iters);
  TrainHooks<T> hooks;
  hooks.before_step = [&](ModelGraph<T>& model, std::size_t it) {
    if (it == 0 || it % period != 0) return;
    thresholds = model_weight_thresholds(model, dc.alpha);
    calibrate(model, calib, rep.k);
  };
  if (dc.reg) {
    hooks.extra_loss = [&](const ModelGraph<T>& model) { return weight_reg_loss(model, thresholds, reg); };
  }
  rep.trace = train(m, images, tc, hooks);
  rep.final = calibrate(m, calib, rep.k);
  rep.final.weights = model_weight_thresholds(m, dc.alpha);
  rep.initial.weights = rep.initial_thresholds;
  rep.outliers_after = outlier_fraction(m, rep.initial_thresholds);
  return rep;
}

/// Conventional QAT: min-max ranges refreshed at the same cadence, no clips,
/// no penalty. Written independently of draq_finetune so the two can be
/// checked against each other.
template <typename T>
TrainResult baseline_qat(ModelGraph<T>& m, const std::vector<Tensor<T>>& images, const TrainConfig& tc,
                         std::size_t period = 0, std::size_t calib_crops = 64) {
  const auto calib = raster_crops(images, calib_crops, tc.crop);
  const auto refresh = [&](ModelGraph<T>& model) {
    for (auto& l : model.layers) {
      if (is_monitored(l.kind)) l.clip.reset();
    }
    set_ranges(model, collect_activation_stats(model, calib));
  };
  refresh(m);
  m.quantized = true;
  if (period == 0) period = std::max<std::size_t>(1, tc.iters / 10);
  TrainHooks<T> hooks;
  hooks.before_step = [&](ModelGraph<T>& model, std::size_t it) {
    if (it != 0 && it % period == 0) refresh(model);
  };
  return train(m, images, tc, hooks);
}

}  // namespace licq
