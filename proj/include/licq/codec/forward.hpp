#pragma once

#include <optional>
#include <string>
#include <vector>

#include "licq/codec/entropy.hpp"
#include "licq/codec/model.hpp"
#include "licq/core/error.hpp"
#include "licq/core/ops.hpp"
#include "licq/core/rng.hpp"
#include "licq/layers/gdn.hpp"
#include "licq/quant/quantizer.hpp"

namespace licq {

/// y + U(-1/2, 1/2), the differentiable stand-in for rounding.
template <typename T>
Tensor<T> latent_quantize_train(const Tensor<T>& y, Rng& rng) {
  std::vector<T> noise(y.size());
  for (auto& v : noise) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  return add(y, Tensor<T>(y.shape(), std::move(noise)));
}

/// Round half to even; straight-through gradient.
template <typename T>
Tensor<T> latent_quantize_eval(const Tensor<T>& y) {
  return snap_to_grid(y, {1.0});
}

// Quantizer specs derived from a layer's calibrated state.

template <typename T>
QuantSpec edge_spec(const LayerNode<T>& l) {
  if (!l.output_range) throw ModelError("layer '" + l.id + "' has no calibrated output range; run calibrate first");
  switch (l.kind) {
    case LayerKind::quant_stub:
      return make_spec(0.0, l.output_range->hi, 8, Signedness::unsigned_int);
    case LayerKind::clipped_relu:
      return make_spec(0.0, l.output_range->hi, l.bits, Signedness::unsigned_int);
    default:
      return make_spec(l.output_range->lo, l.output_range->hi, l.bits, Signedness::signed_int);
  }
}

template <typename T>
QuantSpec gdn_input_spec(const LayerNode<T>& l) {
  if (!l.input_range) throw ModelError("layer '" + l.id + "' has no calibrated input range; run calibrate first");
  return make_spec(l.input_range->lo, l.input_range->hi, l.bits, Signedness::signed_int);
}

template <typename T>
QuantSpec conv_weight_spec(const LayerNode<T>& l) {
  return weight_spec(l.weight, l.bits, l.weight_axis());
}

/// Per-layer view of one forward pass. `pre` is the layer input (the tensor
/// a clip consumes); `post` is the layer output before any edge quantizer.
template <typename T>
struct LayerTap {
  std::string id;
  LayerKind kind;
  Tensor<T> pre;
  Tensor<T> post;
};

struct ForwardOptions {
  bool training = false;
  Rng* noise = nullptr;  // required in training mode
  bool taps = false;
};

template <typename T>
struct ForwardResult {
  Tensor<T> y;
  Tensor<T> y_hat;
  Tensor<T> x_hat;
  Tensor<T> rate_bits;
  std::vector<LayerTap<T>> taps;
};

/// Runs the codec on x [N,3,H,W]. When the model is quantized, weights and
/// activations pass through fake-quant nodes: one activation quantizer per
/// inter-layer edge (the GDN input quantizer plays that role for GDN
/// layers), weights per output channel, biases on the accumulator grid.
template <typename T>
ForwardResult<T> forward(const ModelGraph<T>& m, const Tensor<T>& x, const ForwardOptions& opt = {}) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ModelError("forward: expected [N,3,H,W] input, got " + shape_str(x.shape()));
  if (opt.training && !opt.noise) throw ModelError("forward: training mode needs a noise generator");
  const bool q = m.quantized;
  ForwardResult<T> r;
  Tensor<T> h = x;
  double s_in = 0.0;  // scale of the current edge when quantized

  for (const auto& l : m.layers) {
    const Tensor<T> in = h;
    switch (l.kind) {
      case LayerKind::quant_stub: {
        if (q) {
          const auto spec = edge_spec(l);
          h = fake_quant(clip(h, 0.0, l.output_range->hi), spec);
          s_in = spec.scale();
        }
        break;
      }
      case LayerKind::conv:
      case LayerKind::tconv: {
        Tensor<T> w = l.weight, b = l.bias, f = l.fold;
        if (q) {
          const auto ws = conv_weight_spec(l);
          std::vector<double> steps;
          for (double s : ws.scales) steps.push_back(s * s_in);
          w = fake_quant(w, ws);
          b = snap_to_grid(b, steps);
        }
        if (l.kind == LayerKind::conv) {
          h = conv2d(h, w, b, l.stride, l.pad);
        } else {
          h = conv2d_transpose(h, w, b, l.stride, l.pad);
        }
        if (f.defined()) {
          // Bias map of folded constant channels: the fold kernel over a plane of ones.
          const Tensor<T> ones({in.dim(0), 1, in.dim(2), in.dim(3)}, T(1));
          auto map = conv2d(ones, f, Tensor<T>(), l.stride, l.pad);
          if (q) {
            const auto ws = conv_weight_spec(l);
            std::vector<double> steps;
            for (double s : ws.scales) steps.push_back(s * s_in);
            map = snap_to_grid(map, steps);
          }
          h = add(h, map);
        }
        if (l.latent_output) {
          r.y = h;
          h = opt.training ? latent_quantize_train(h, *opt.noise) : latent_quantize_eval(h);
          r.y_hat = h;
          r.rate_bits = rate_bits(h, m.entropy.log_scale);
          s_in = 1.0;
        }
        break;
      }
      case LayerKind::clipped_relu: {
        const double theta = l.clip ? l.clip->hi : std::numeric_limits<double>::infinity();
        h = clipped_relu(h, theta);
        break;
      }
      case LayerKind::gdn:
      case LayerKind::igdn:
      case LayerKind::slim_gdn: {
        const bool divisive = l.kind != LayerKind::igdn;
        if (q) {
          const auto spec_x = gdn_input_spec(l);
          const auto bounds = l.clip.value_or(ClipBounds::unbounded());
          h = divisive ? quantized_gdn_forward(h, l.gdn, spec_x, l.bits, bounds)
                       : quantized_igdn_forward(h, l.gdn, spec_x, l.bits, bounds);
        } else {
          if (l.clip) h = clip(h, l.clip->lo, l.clip->hi);
          h = divisive ? gdn_forward(h, l.gdn) : igdn_forward(h, l.gdn);
        }
        if (l.kind == LayerKind::slim_gdn) h = add(mul(h, l.scale), l.shift);
        break;
      }
    }
    if (opt.taps) r.taps.push_back({l.id, l.kind, in, h});
    if (q && (l.kind == LayerKind::clipped_relu || is_gdn_family(l.kind))) {
      const auto spec = edge_spec(l);
      h = fake_quant(h, spec);
      s_in = spec.scale();
    }
  }
  if (!r.y.defined()) throw ModelError("forward: model has no latent layer");
  r.x_hat = h;
  return r;
}

}  // namespace licq
