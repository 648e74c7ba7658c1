#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "licq/codec/model.hpp"
#include "licq/hwopt/bitwidth.hpp"

namespace licq {

struct LayerFlops {
  std::string id;
  LayerKind kind;
  std::uint64_t flops = 0;
};

struct FlopsReport {
  std::vector<LayerFlops> layers;
  std::uint64_t total = 0;
  double per_pixel = 0.0;
};

inline std::uint64_t conv_flops(std::uint64_t oh, std::uint64_t ow, std::uint64_t co, std::uint64_t ci,
                                std::uint64_t kh, std::uint64_t kw, bool bias) {
  return 2 * oh * ow * co * ci * kh * kw + (bias ? oh * ow * co : 0);
}

/// Operation counts for a [3, h, w] input. Multiply-accumulates count as
/// two operations.
///   conv   2 Ho Wo Co Ci k^2 + Ho Wo Co (bias; a folded bias map counts again)
///   tconv  2 Hi Wi Ci Co k^2 + Ho Wo Co: every input pixel scatters one k x k
///          stamp, so the product count follows the input size
///   gdn    2 H W C^2 + H W C (1x1 denominator conv with bias) + 2 C H W (abs, divide)
///   slim   gdn + 2 C H W (scale, shift)
///   relu   C H W
template <typename T>
FlopsReport flops_count(const ModelGraph<T>& m, std::size_t h, std::size_t w) {
  FlopsReport r;
  const std::size_t h0 = h, w0 = w;
  for (const auto& l : m.layers) {
    std::uint64_t f = 0;
    const std::uint64_t C = l.out_channels;
    if (is_conv(l.kind)) {
      const auto [oh, ow] = conv_output_size(l, h, w);
      const std::uint64_t k = static_cast<std::uint64_t>(l.kernel);
      if (l.kind == LayerKind::conv) {
        f = conv_flops(oh, ow, C, l.in_channels, k, k, true);
      } else {
        f = conv_flops(h, w, C, l.in_channels, k, k, false) + oh * ow * C;
      }
      if (l.fold.defined()) f += oh * ow * C;
      h = oh;
      w = ow;
    } else if (is_gdn_family(l.kind)) {
      const std::uint64_t hw = h * w;
      f = 2 * hw * C * C + hw * C + 2 * C * hw;
      if (l.kind == LayerKind::slim_gdn) f += 2 * C * hw;
    } else if (l.kind == LayerKind::clipped_relu) {
      f = C * h * w;
    }
    r.layers.push_back({l.id, l.kind, f});
    r.total += f;
  }
  r.per_pixel = static_cast<double>(r.total) / static_cast<double>(h0 * w0);
  return r;
}

}  // namespace licq
