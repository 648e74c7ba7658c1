#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "licq/codec/forward.hpp"
#include "licq/codec/model.hpp"
#include "licq/core/error.hpp"
#include "licq/core/ops.hpp"
#include "licq/layers/gdn.hpp"
#include "licq/quant/quantizer.hpp"

namespace licq {

/// Integer conv / transposed conv with 64-bit accumulators. x [N,Ci,H,W];
/// w [Co,Ci,k,k] (conv) or [Ci,Co,k,k] (transposed); bias is added per
/// output channel, already on the accumulator grid.
inline IntTensor conv2d_int(const IntTensor& x, const IntTensor& w, const std::vector<std::int64_t>& bias, int stride,
                            int pad, bool transposed) {
  if (x.shape.size() != 4 || w.shape.size() != 4) throw ModelError("conv2d_int: expected rank-4 tensors");
  const std::size_t N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t Co = transposed ? w.shape[1] : w.shape[0];
  const std::size_t KH = w.shape[2], KW = w.shape[3];
  if ((transposed ? w.shape[0] : w.shape[1]) != Ci) throw ModelError("conv2d_int: channel mismatch");
  if (!bias.empty() && bias.size() != Co) throw ModelError("conv2d_int: bias size mismatch");
  const std::ptrdiff_t s = stride, p = pad;
  std::ptrdiff_t OH, OW;
  if (transposed) {
    OH = (static_cast<std::ptrdiff_t>(H) - 1) * s - 2 * p + static_cast<std::ptrdiff_t>(KH);
    OW = (static_cast<std::ptrdiff_t>(W) - 1) * s - 2 * p + static_cast<std::ptrdiff_t>(KW);
  } else {
    OH = (static_cast<std::ptrdiff_t>(H + 2 * pad) - static_cast<std::ptrdiff_t>(KH)) / s + 1;
    OW = (static_cast<std::ptrdiff_t>(W + 2 * pad) - static_cast<std::ptrdiff_t>(KW)) / s + 1;
  }
  if (OH < 1 || OW < 1) throw ModelError("conv2d_int: empty output");
  IntTensor out{{N, Co, std::size_t(OH), std::size_t(OW)}, std::vector<std::int64_t>(N * Co * OH * OW, 0)};
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      std::int64_t* o = out.values.data() + (n * Co + co) * OH * OW;
      if (!bias.empty()) std::fill(o, o + OH * OW, bias[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const std::int64_t* xp = x.values.data() + (n * Ci + ci) * H * W;
        for (std::size_t kh = 0; kh < KH; ++kh) {
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const std::size_t widx = transposed ? ((ci * Co + co) * KH + kh) * KW + kw : ((co * Ci + ci) * KH + kh) * KW + kw;
            const std::int64_t wv = w.values[widx];
            if (transposed) {
              for (std::size_t ih = 0; ih < H; ++ih) {
                const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(ih) * s - p + static_cast<std::ptrdiff_t>(kh);
                if (oh < 0 || oh >= OH) continue;
                for (std::size_t iw = 0; iw < W; ++iw) {
                  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(iw) * s - p + static_cast<std::ptrdiff_t>(kw);
                  if (ow < 0 || ow >= OW) continue;
                  o[oh * OW + ow] += wv * xp[ih * W + iw];
                }
              }
            } else {
              for (std::ptrdiff_t oh = 0; oh < OH; ++oh) {
                const std::ptrdiff_t ih = oh * s - p + static_cast<std::ptrdiff_t>(kh);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::ptrdiff_t ow = 0; ow < OW; ++ow) {
                  const std::ptrdiff_t iw = ow * s - p + static_cast<std::ptrdiff_t>(kw);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  o[oh * OW + ow] += wv * xp[ih * W + iw];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

/// One recorded tensor of the integer path: integer codes and the real
/// value of one code step (per channel on axis 1, or a single entry).
struct IntTrace {
  std::string id;
  IntTensor q;
  std::vector<double> lsb;

  double lsb_at(std::size_t i) const {
    if (lsb.size() == 1) return lsb[0];
    std::size_t inner = 1;
    for (std::size_t d = 2; d < q.shape.size(); ++d) inner *= q.shape[d];
    return lsb[(i / inner) % q.shape[1]];
  }
  double real(std::size_t i) const { return static_cast<double>(q.values[i]) * lsb_at(i); }
};

struct IntInferResult {
  Tensor<double> x_hat;
  IntTensor y_hat;
  std::vector<IntTrace> traces;
};

namespace detail {

inline std::int64_t requantize(std::int64_t acc, double multiplier, std::int64_t lo, std::int64_t hi) {
  const double r = round_half_even(static_cast<double>(acc) * multiplier);
  if (r <= static_cast<double>(lo)) return lo;
  if (r >= static_cast<double>(hi)) return hi;
  return static_cast<std::int64_t>(r);
}

// Integer bounds of a clip interval on a grid, intersected with [lo, hi].
inline void clip_codes(const std::optional<ClipBounds>& c, double scale, std::int64_t& lo, std::int64_t& hi) {
  if (!c) return;
  if (std::isfinite(c->lo)) lo = std::max(lo, static_cast<std::int64_t>(round_half_even(c->lo / scale)));
  if (std::isfinite(c->hi)) hi = std::min(hi, static_cast<std::int64_t>(round_half_even(c->hi / scale)));
}

}  // namespace detail

/// Integer-only inference of a calibrated quantized model. Convolutions run
/// on stored integer codes with 64-bit accumulators and integer biases; each
/// activation requantizes with round_half_even(acc * s_in s_w / s_out), the
/// combined scale evaluated in double. GDN layers accumulate the
/// denominator in integers and divide in real arithmetic. Slim-GDN affine
/// maps are applied in real arithmetic before requantization.
template <typename T>
IntInferResult int_infer(const ModelGraph<T>& model, const Tensor<T>& image) {
  if (!model.quantized) throw ModelError("int_infer: model carries no quantizer specs; quantize and calibrate it first");
  // Parameter transforms (softplus etc.) are evaluated in double, as in the reference simulation.
  const auto m = cast_model<double>(model);
  NoGradGuard no_grad;
  Tensor<double> x = image.template cast<double>();
  if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(1) != 3) throw ModelError("int_infer: expected a [3,H,W] or [N,3,H,W] image");

  IntInferResult r;
  IntTensor h;                 // current codes
  std::vector<double> lsb;     // per-channel step of h (accumulators) or one entry
  for (const auto& l : m.layers) {
    switch (l.kind) {
      case LayerKind::quant_stub: {
        const auto spec = edge_spec(l);
        h = quantize(x, spec);
        lsb = {spec.scale()};
        break;
      }
      case LayerKind::conv:
      case LayerKind::tconv: {
        if (lsb.size() != 1) throw ModelError("int_infer: layer '" + l.id + "' input is not requantized");
        const double s_in = lsb[0];
        const auto ws = conv_weight_spec(l);
        const auto qw = quantize(l.weight, ws);
        std::vector<double> steps;
        std::vector<std::int64_t> qb;
        const auto b = l.bias.values();
        for (std::size_t c = 0; c < ws.scales.size(); ++c) {
          steps.push_back(ws.scales[c] * s_in);
          qb.push_back(static_cast<std::int64_t>(round_half_even(static_cast<double>(b[c]) / steps[c])));
        }
        const Shape in_shape = h.shape;
        h = conv2d_int(h, qw, qb, l.stride, l.pad, l.kind == LayerKind::tconv);
        if (l.fold.defined()) {
          const Tensor<double> ones({in_shape[0], 1, in_shape[2], in_shape[3]}, 1.0);
          const auto map = conv2d(ones, l.fold, Tensor<double>(), l.stride, l.pad);
          const auto mv = map.values();
          const std::size_t inner = h.shape[2] * h.shape[3], C = h.shape[1];
          for (std::size_t i = 0; i < h.values.size(); ++i) {
            h.values[i] += static_cast<std::int64_t>(round_half_even(mv[i] / steps[(i / inner) % C]));
          }
        }
        lsb = steps;
        if (l.latent_output) {
          // Latent is rounded to integers: scale 1.
          for (std::size_t i = 0; i < h.values.size(); ++i) {
            h.values[i] = static_cast<std::int64_t>(
                round_half_even(static_cast<double>(h.values[i]) * steps[(i / (h.shape[2] * h.shape[3])) % h.shape[1]]));
          }
          lsb = {1.0};
          r.y_hat = h;
        }
        break;
      }
      case LayerKind::clipped_relu: {
        const auto out = edge_spec(l);
        std::int64_t lo = 0, hi = out.qmax();
        detail::clip_codes(l.clip, out.scale(), lo, hi);
        const std::size_t inner = h.shape[2] * h.shape[3], C = h.shape[1];
        for (std::size_t i = 0; i < h.values.size(); ++i) {
          const double mult = (lsb.size() == 1 ? lsb[0] : lsb[(i / inner) % C]) / out.scale();
          h.values[i] = detail::requantize(h.values[i], mult, lo, hi);
        }
        lsb = {out.scale()};
        break;
      }
      case LayerKind::gdn:
      case LayerKind::igdn:
      case LayerKind::slim_gdn: {
        const auto spec_x = gdn_input_spec(l);
        const double s_x = spec_x.scale();
        std::int64_t lo = spec_x.qmin(), hi = spec_x.qmax();
        detail::clip_codes(l.clip, s_x, lo, hi);
        const std::size_t N = h.shape[0], C = h.shape[1], P = h.shape[2] * h.shape[3];
        std::vector<std::int64_t> qx(h.values.size());
        for (std::size_t i = 0; i < qx.size(); ++i) {
          const double mult = (lsb.size() == 1 ? lsb[0] : lsb[(i / P) % C]) / s_x;
          qx[i] = detail::requantize(h.values[i], mult, lo, hi);
        }
        const auto gamma = l.gdn.gamma();
        const auto beta = l.gdn.beta();
        const auto specs = gdn_quant_specs(gamma, spec_x, l.bits);
        const auto qg = quantize(gamma, specs.gamma);
        std::vector<std::int64_t> qbeta(C);
        for (std::size_t i = 0; i < C; ++i) {
          qbeta[i] = std::max<std::int64_t>(1, static_cast<std::int64_t>(round_half_even(beta[i] / specs.beta_steps[i])));
        }
        const auto out = edge_spec(l);
        const bool divisive = l.kind != LayerKind::igdn;
        IntTensor z{h.shape, std::vector<std::int64_t>(qx.size())};
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t i = 0; i < C; ++i) {
            const double a = l.kind == LayerKind::slim_gdn ? l.scale[i] : 1.0;
            const double b = l.kind == LayerKind::slim_gdn ? l.shift[i] : 0.0;
            for (std::size_t p = 0; p < P; ++p) {
              std::int64_t d = qbeta[i];
              for (std::size_t j = 0; j < C; ++j) d += qg.values[i * C + j] * std::abs(qx[(n * C + j) * P + p]);
              const std::size_t k = (n * C + i) * P + p;
              const double d_real = static_cast<double>(d) * specs.beta_steps[i];
              const double num = static_cast<double>(qx[k]) * s_x;
              const double v = a * (divisive ? num / d_real : num * d_real) + b;
              z.values[k] = quantize_value(v, out.scale(), out.qmin(), out.qmax());
            }
          }
        }
        h = std::move(z);
        lsb = {out.scale()};
        break;
      }
    }
    r.traces.push_back({l.id, h, lsb});
  }
  std::vector<double> xh(h.values.size());
  const IntTrace last{"", h, lsb};
  for (std::size_t i = 0; i < xh.size(); ++i) xh[i] = last.real(i);
  r.x_hat = Tensor<double>(h.shape, std::move(xh));
  return r;
}

/// Per-layer agreement between the integer path and the fake-quant
/// simulation (evaluated in double), in units of each layer's LSB.
struct IntCheckLayer {
  std::string id;
  double max_abs_diff = 0.0;
  double max_lsb_diff = 0.0;
};

template <typename T>
std::vector<IntCheckLayer> int_check(const ModelGraph<T>& m, const Tensor<T>& image) {
  const auto ir = int_infer(m, image);
  const auto md = cast_model<double>(m);
  Tensor<double> x = image.template cast<double>().detach();
  if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  NoGradGuard no_grad;
  const auto fw = forward(md, x, {.taps = true});
  std::vector<IntCheckLayer> out;
  for (std::size_t k = 0; k < md.layers.size(); ++k) {
    const auto& l = md.layers[k];
    Tensor<double> ref = fw.taps[k].post;
    if (l.kind == LayerKind::clipped_relu || is_gdn_family(l.kind)) ref = fake_quant(ref, edge_spec(l));
    const auto& tr = ir.traces[k];
    IntCheckLayer row{l.id};
    const auto rv = ref.values();
    if (rv.size() != tr.q.values.size()) throw ModelError("int_check: trace size mismatch at " + l.id);
    for (std::size_t i = 0; i < rv.size(); ++i) {
      const double d = std::abs(tr.real(i) - rv[i]);
      row.max_abs_diff = std::max(row.max_abs_diff, d);
      row.max_lsb_diff = std::max(row.max_lsb_diff, d / tr.lsb_at(i));
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace licq
