#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "licq/codec/model.hpp"
#include "licq/codec/train.hpp"
#include "licq/core/error.hpp"
#include "licq/core/ops.hpp"
#include "licq/hwopt/flops.hpp"

namespace licq {

/// eta * sum over slim-GDN layers of sum_i |a_i|.
template <typename T>
Tensor<T> scale_l1_loss(const ModelGraph<T>& m, double eta) {
  Tensor<T> total;
  for (const auto& l : m.layers) {
    if (l.kind != LayerKind::slim_gdn) continue;
    auto term = sum(abs(l.scale));
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) throw ModelError("slimming: model has no slim_gdn layers");
  return mul_scalar(total, static_cast<T>(eta));
}

struct ScaleHistogram {
  std::string id;
  std::vector<double> edges;  // bin i covers [edges[i], edges[i+1])
  std::vector<std::size_t> counts;
};

template <typename T>
std::vector<ScaleHistogram> scale_histograms(const ModelGraph<T>& m) {
  const std::vector<double> edges{0.0, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, std::numeric_limits<double>::infinity()};
  std::vector<ScaleHistogram> out;
  for (const auto& l : m.layers) {
    if (l.kind != LayerKind::slim_gdn) continue;
    ScaleHistogram h{l.id, edges, std::vector<std::size_t>(edges.size() - 1, 0)};
    for (T v : l.scale.values()) {
      const double a = std::abs(static_cast<double>(v));
      const auto it = std::upper_bound(edges.begin(), edges.end(), a);
      ++h.counts[static_cast<std::size_t>(it - edges.begin()) - 1];
    }
    out.push_back(std::move(h));
  }
  return out;
}

struct SlimResult {
  TrainResult trace;
  std::vector<ScaleHistogram> histograms;
};

/// Training with an L1 penalty on the slim-GDN scales (subgradient 0 at 0).
template <typename T>
SlimResult slim_train(ModelGraph<T>& m, const std::vector<Tensor<T>>& images, double eta, const TrainConfig& tc) {
  if (!(eta >= 0.0)) throw ConfigError("slimming.eta must be >= 0");
  TrainHooks<T> hooks;
  hooks.extra_loss = [eta](const ModelGraph<T>& model) { return scale_l1_loss(model, eta); };
  SlimResult r;
  r.trace = train(m, images, tc, hooks);
  r.histograms = scale_histograms(m);
  return r;
}

struct PrunedLayer {
  std::string id;
  std::vector<std::size_t> kept;
  std::size_t before = 0;
  std::size_t after = 0;
};

struct PruneReport {
  std::vector<PrunedLayer> layers;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
  double epsilon_p = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

// Rows (axis 0) or columns (axis 1) of a tensor, by index list.
template <typename T>
Tensor<T> select_axis(const Tensor<T>& t, std::size_t axis, const std::vector<std::size_t>& keep) {
  Shape shape = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t n = shape[axis];
  shape[axis] = keep.size();
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  const auto v = t.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k : keep) {
      const T* src = v.data() + (o * n + k) * inner;
      out.insert(out.end(), src, src + inner);
    }
  }
  return Tensor<T>(shape, std::move(out), t.requires_grad());
}

}  // namespace detail

/// Removes slim-GDN channels with |a_i| < epsilon_p together with the
/// producing filters of the preceding conv and the consuming input slices of
/// the following conv. A removed channel's output is taken as its constant
/// shift b_i; its contribution to the next conv is kept exactly as a fold
/// kernel (sum of W[:, i] b_i) applied to a plane of ones, which matches
/// zero padding at the borders. At least the largest-|a| channel survives.
template <typename T>
ModelGraph<T> prune(const ModelGraph<T>& src, double epsilon_p, PruneReport& report, std::size_t h = 16,
                    std::size_t w = 16) {
  if (!(epsilon_p >= 0.0)) throw ConfigError("slimming.epsilon_p must be >= 0");
  ModelGraph<T> m = clone_model(src);
  report = {};
  report.epsilon_p = epsilon_p;
  report.flops_before = flops_count(src, h, w).total;
  bool any = false;
  for (std::size_t g = 0; g < m.layers.size(); ++g) {
    auto& gl = m.layers[g];
    if (gl.kind != LayerKind::slim_gdn) continue;
    any = true;
    if (g == 0 || g + 1 >= m.layers.size() || m.layers[g - 1].kind != LayerKind::conv ||
        m.layers[g + 1].kind != LayerKind::conv) {
      throw ModelError("prune: slim layer '" + gl.id + "' must sit between two convolutions");
    }
    auto& prev = m.layers[g - 1];
    auto& next = m.layers[g + 1];
    const std::size_t C = gl.out_channels;
    const auto a = gl.scale.values();
    std::vector<std::size_t> keep, drop;
    for (std::size_t i = 0; i < C; ++i) (std::abs(static_cast<double>(a[i])) >= epsilon_p ? keep : drop).push_back(i);
    if (keep.empty()) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < C; ++i) {
        if (std::abs(a[i]) > std::abs(a[best])) best = i;
      }
      keep = {best};
      drop.erase(std::find(drop.begin(), drop.end(), best));
      report.warnings.push_back("layer '" + gl.id + "': every scale below threshold; kept channel " +
                                std::to_string(best));
    }
    report.layers.push_back({gl.id, keep, C, keep.size()});
    if (drop.empty()) continue;

    // Fold the constant outputs of dropped channels into the next conv.
    const std::size_t Co = next.out_channels, K = static_cast<std::size_t>(next.kernel);
    std::vector<T> fold(Co * K * K, T(0));
    if (next.fold.defined()) std::copy(next.fold.values().begin(), next.fold.values().end(), fold.begin());
    const auto wn = next.weight.values();
    const auto b = gl.shift.values();
    for (std::size_t co = 0; co < Co; ++co) {
      for (std::size_t i : drop) {
        for (std::size_t k = 0; k < K * K; ++k) fold[co * K * K + k] += wn[(co * C + i) * K * K + k] * b[i];
      }
    }
    next.fold = Tensor<T>({Co, 1, K, K}, std::move(fold), true);
    next.weight = detail::select_axis(next.weight, 1, keep);
    next.in_channels = keep.size();

    prev.weight = detail::select_axis(prev.weight, 0, keep);
    prev.bias = detail::select_axis(prev.bias, 0, keep);
    if (prev.fold.defined()) prev.fold = detail::select_axis(prev.fold, 0, keep);
    prev.out_channels = keep.size();

    gl.gdn.raw_beta = detail::select_axis(gl.gdn.raw_beta, 0, keep);
    gl.gdn.raw_gamma = detail::select_axis(detail::select_axis(gl.gdn.raw_gamma, 0, keep), 1, keep);
    gl.scale = detail::select_axis(gl.scale, 0, keep);
    gl.shift = detail::select_axis(gl.shift, 0, keep);
    gl.in_channels = gl.out_channels = keep.size();
  }
  if (!any) throw ModelError("prune: model has no slim_gdn layers; run slim training first");
  report.flops_after = flops_count(m, h, w).total;
  return m;
}

}  // namespace licq
