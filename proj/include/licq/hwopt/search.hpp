#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/hwopt/bitwidth.hpp"

namespace licq {

/// Loss of a model quantized with the given per-layer widths (after any
/// fine-tuning the caller wants). Must be deterministic in its argument.
using PlanEvaluator = std::function<double(const std::vector<int>&)>;

enum class LayerOrder { by_sensitivity, given };

struct SearchConfig {
  double epsilon = 0.0;
  int start_bits = 16;
  int floor_bits = 2;
  LayerOrder order = LayerOrder::by_sensitivity;
  std::vector<std::size_t> given_order;  // used with LayerOrder::given
  int probe_bits = 6;
};

inline void validate(const SearchConfig& c, std::size_t layers) {
  if (!(c.epsilon >= 0.0) || !std::isfinite(c.epsilon)) throw ConfigError("search.epsilon must be finite and >= 0");
  if (c.floor_bits < 2 || c.start_bits > 16 || c.floor_bits > c.start_bits) {
    throw ConfigError("search: need 2 <= floor_bits <= start_bits <= 16");
  }
  if (c.probe_bits < 2 || c.probe_bits > 16) throw ConfigError("search.probe_bits must be in 2..16");
  if (c.order == LayerOrder::given) {
    auto sorted = c.given_order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> all(layers);
    std::iota(all.begin(), all.end(), 0);
    if (sorted != all) throw ConfigError("search.order must list every layer index exactly once");
  }
}

struct SearchStep {
  std::size_t step = 0;
  std::string phase;  // "reference", "uniform", "layer", "verify"
  std::string layer;  // "*" for whole-model steps
  int width = 0;
  double loss = 0.0;
  bool accepted = false;
};

struct SearchResult {
  BitWidthPlan plan;
  std::vector<std::size_t> order;
  std::vector<SearchStep> log;
};

/// Layers ranked by the loss increase when each alone drops from `base` to
/// probe_bits, largest first; ties keep index order.
inline std::vector<std::size_t> sensitivity_rank(const std::vector<int>& base, const PlanEvaluator& evaluate,
                                                 int probe_bits = 6) {
  const double ref = evaluate(base);
  std::vector<double> increase(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plan = base;
    plan[i] = std::min(plan[i], probe_bits);
    increase[i] = evaluate(plan) - ref;
  }
  std::vector<std::size_t> order(base.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return increase[a] > increase[b]; });
  return order;
}

/// Two-phase greedy search. Phase 1 lowers a uniform width from start_bits
/// one bit at a time while the loss stays within L_ref + epsilon, L_ref
/// being the loss at start_bits. Phase 2 visits layers in order and lowers
/// each one alone, keeping the lowest width that stays within tolerance and
/// freezing it. The result is re-evaluated before returning.
///
/// `probe` ranks layers for LayerOrder::by_sensitivity; pass the same
/// evaluator, or a cheaper one without fine-tuning.
inline SearchResult progressive_search(const std::vector<std::string>& layers, const PlanEvaluator& evaluate,
                                       const SearchConfig& cfg, const PlanEvaluator& probe = {}) {
  validate(cfg, layers.size());
  if (layers.empty()) throw ModelError("search: no quantized layers");
  SearchResult r;
  std::size_t step = 0;
  auto record = [&](const std::string& phase, const std::string& layer, int width, double loss, bool ok) {
    r.log.push_back({step++, phase, layer, width, loss, ok});
  };
  const std::size_t n = layers.size();

  std::vector<int> plan(n, cfg.start_bits);
  const double ref = evaluate(plan);
  const double again = evaluate(plan);
  if (ref != again) {
    throw ModelError("search: evaluator is not deterministic (" + std::to_string(ref) + " vs " +
                     std::to_string(again) + " for the same plan)");
  }
  if (!std::isfinite(ref)) throw NumericError("search: reference loss is not finite");
  const double limit = ref + cfg.epsilon;
  record("reference", "*", cfg.start_bits, ref, true);

  int uniform = cfg.start_bits;
  double uniform_loss = ref;
  for (int b = cfg.start_bits - 1; b >= cfg.floor_bits; --b) {
    const double loss = evaluate(std::vector<int>(n, b));
    const bool ok = loss <= limit;
    record("uniform", "*", b, loss, ok);
    if (!ok) break;
    uniform = b;
    uniform_loss = loss;
  }
  plan.assign(n, uniform);

  if (cfg.order == LayerOrder::given) {
    r.order = cfg.given_order;
  } else {
    r.order = sensitivity_rank(plan, probe ? probe : evaluate, cfg.probe_bits);
  }

  double current = uniform_loss;
  std::vector<bool> frozen(n, false);
  for (std::size_t i : r.order) {
    for (int b = plan[i] - 1; b >= cfg.floor_bits; --b) {
      auto trial = plan;
      trial[i] = b;
      const double loss = evaluate(trial);
      const bool ok = loss <= limit;
      record("layer", layers[i], b, loss, ok);
      if (!ok) break;
      plan = trial;
      current = loss;
    }
    frozen[i] = true;
  }

  const double final_loss = evaluate(plan);
  record("verify", "*", 0, final_loss, final_loss <= limit);
  if (final_loss != current) {
    throw ModelError("search: evaluator is not deterministic (final plan re-evaluated to " +
                     std::to_string(final_loss) + ", recorded " + std::to_string(current) + ")");
  }
  if (final_loss > limit) throw ModelError("search: final plan violates the tolerance");

  r.plan.layers = layers;
  r.plan.bits = plan;
  r.plan.frozen = frozen;
  r.plan.epsilon = cfg.epsilon;
  r.plan.baseline_loss = ref;
  r.plan.baseline_bits = uniform;
  r.plan.baseline_width_loss = uniform_loss;
  r.plan.validate();
  return r;
}

}  // namespace licq
