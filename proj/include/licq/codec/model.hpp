#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "licq/codec/entropy.hpp"
#include "licq/core/error.hpp"
#include "licq/core/rng.hpp"
#include "licq/core/tensor.hpp"
#include "licq/layers/gdn.hpp"
#include "licq/quant/quantizer.hpp"

namespace licq {

enum class Activation { relu, gdn };

struct ModelConfig {
  std::size_t N = 16;  // hidden channels
  std::size_t M = 24;  // latent channels
  int depth = 2;       // stride-2 stages per transform
  Activation activation = Activation::relu;
  bool slim = false;   // analysis GDN layers carry a prunable affine
  int kernel = 4;
  std::uint64_t seed = 1;
};

enum class LayerKind { conv, tconv, clipped_relu, gdn, igdn, slim_gdn, quant_stub };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::tconv: return "tconv";
    case LayerKind::clipped_relu: return "clipped_relu";
    case LayerKind::gdn: return "gdn";
    case LayerKind::igdn: return "igdn";
    case LayerKind::slim_gdn: return "slim_gdn";
    case LayerKind::quant_stub: return "quant_stub";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::conv, LayerKind::tconv, LayerKind::clipped_relu, LayerKind::gdn, LayerKind::igdn,
                 LayerKind::slim_gdn, LayerKind::quant_stub}) {
    if (s == to_string(k)) return k;
  }
  throw ModelError("unknown layer kind '" + s + "'");
}

inline bool is_conv(LayerKind k) { return k == LayerKind::conv || k == LayerKind::tconv; }
inline bool is_gdn_family(LayerKind k) {
  return k == LayerKind::gdn || k == LayerKind::igdn || k == LayerKind::slim_gdn;
}

/// Real interval covered by an activation quantizer.
struct QuantRange {
  double lo = 0.0;
  double hi = 0.0;
};

template <typename T>
struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::conv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool latent_output = false;  // last analysis conv; its output is y

  // conv / tconv. fold is a [Co,1,k,k] kernel applied to a plane of ones:
  // the exact contribution of constant input channels removed by pruning.
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> fold;

  // gdn family
  GdnParams<T> gdn;
  Tensor<T> scale;
  Tensor<T> shift;

  // Activation layers: clip bounds and calibrated quantizer ranges.
  std::optional<ClipBounds> clip;
  std::optional<QuantRange> input_range;   // GDN input quantizer
  std::optional<QuantRange> output_range;  // quantizer on the outgoing edge

  int bits = 8;

  // Output-channel axis of the weight tensor.
  std::size_t weight_axis() const { return kind == LayerKind::tconv ? 1 : 0; }
};

template <typename T>
struct ModelGraph {
  ModelConfig config;
  std::vector<LayerNode<T>> layers;
  EntropyProxy<T> entropy;
  bool quantized = false;

  LayerNode<T>& layer(const std::string& id) {
    for (auto& l : layers) {
      if (l.id == id) return l;
    }
    throw ModelError("no layer named '" + id + "'");
  }
  const LayerNode<T>& layer(const std::string& id) const { return const_cast<ModelGraph*>(this)->layer(id); }

  // Conv and tconv layers in graph order: the units a bit-width plan covers.
  std::vector<std::size_t> conv_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (is_conv(layers[i].kind)) out.push_back(i);
    }
    return out;
  }

  std::vector<std::string> conv_ids() const {
    std::vector<std::string> out;
    for (auto i : conv_indices()) out.push_back(layers[i].id);
    return out;
  }

  /// Trainable leaves with stable names, in graph order.
  std::vector<std::pair<std::string, Tensor<T>>> parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& l : layers) {
      if (is_conv(l.kind)) {
        out.emplace_back(l.id + ".weight", l.weight);
        out.emplace_back(l.id + ".bias", l.bias);
        if (l.fold.defined()) out.emplace_back(l.id + ".fold", l.fold);
      } else if (is_gdn_family(l.kind)) {
        out.emplace_back(l.id + ".raw_beta", l.gdn.raw_beta);
        out.emplace_back(l.id + ".raw_gamma", l.gdn.raw_gamma);
        if (l.kind == LayerKind::slim_gdn) {
          out.emplace_back(l.id + ".scale", l.scale);
          out.emplace_back(l.id + ".shift", l.shift);
        }
      }
    }
    out.emplace_back("entropy.log_scale", entropy.log_scale);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.size();
    return n;
  }

  /// Sets every conv's bit width (and that of the activation layer it
  /// feeds) from a per-conv list.
  void apply_bits(const std::vector<int>& bits) {
    const auto idx = conv_indices();
    if (bits.size() != idx.size()) {
      throw ModelError("bit plan covers " + std::to_string(bits.size()) + " layers, model has " +
                       std::to_string(idx.size()));
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t end = k + 1 < idx.size() ? idx[k + 1] : layers.size();
      for (std::size_t i = idx[k]; i < end; ++i) layers[i].bits = bits[k];
    }
  }

  std::vector<int> bits() const {
    std::vector<int> out;
    for (auto i : conv_indices()) out.push_back(layers[i].bits);
    return out;
  }
};

template <typename T>
LayerNode<T> clone_layer(const LayerNode<T>& l) {
  LayerNode<T> c = l;
  if (l.weight.defined()) c.weight = l.weight.clone();
  if (l.bias.defined()) c.bias = l.bias.clone();
  if (l.fold.defined()) c.fold = l.fold.clone();
  if (l.gdn.raw_beta.defined()) c.gdn = l.gdn.clone();
  if (l.scale.defined()) c.scale = l.scale.clone();
  if (l.shift.defined()) c.shift = l.shift.clone();
  return c;
}

/// Deep copy: no tensor is shared with the source.
template <typename T>
ModelGraph<T> clone_model(const ModelGraph<T>& m) {
  ModelGraph<T> c;
  c.config = m.config;
  c.quantized = m.quantized;
  for (const auto& l : m.layers) c.layers.push_back(clone_layer(l));
  c.entropy.log_scale = m.entropy.log_scale.clone();
  return c;
}

template <typename U, typename T>
ModelGraph<U> cast_model(const ModelGraph<T>& m) {
  ModelGraph<U> c;
  c.config = m.config;
  c.quantized = m.quantized;
  auto cast = [](const Tensor<T>& t) { return t.defined() ? t.template cast<U>() : Tensor<U>(); };
  for (const auto& l : m.layers) {
    LayerNode<U> n;
    n.id = l.id;
    n.kind = l.kind;
    n.in_channels = l.in_channels;
    n.out_channels = l.out_channels;
    n.kernel = l.kernel;
    n.stride = l.stride;
    n.pad = l.pad;
    n.latent_output = l.latent_output;
    n.weight = cast(l.weight);
    n.bias = cast(l.bias);
    n.fold = cast(l.fold);
    n.gdn = {cast(l.gdn.raw_beta), cast(l.gdn.raw_gamma)};
    n.scale = cast(l.scale);
    n.shift = cast(l.shift);
    n.clip = l.clip;
    n.input_range = l.input_range;
    n.output_range = l.output_range;
    n.bits = l.bits;
    c.layers.push_back(std::move(n));
  }
  c.entropy.log_scale = cast(m.entropy.log_scale);
  return c;
}

namespace detail {

template <typename T>
LayerNode<T> make_conv(const std::string& id, LayerKind kind, std::size_t cin, std::size_t cout, int k, Rng& rng) {
  LayerNode<T> l;
  l.id = id;
  l.kind = kind;
  l.in_channels = cin;
  l.out_channels = cout;
  l.kernel = k;
  l.stride = 2;
  l.pad = (k - 2) / 2;
  // He-uniform; a stride-2 transposed conv sees a quarter of its taps per output.
  double fan_in = static_cast<double>(cin * k * k);
  if (kind == LayerKind::tconv) fan_in /= 4.0;
  const double bound = std::sqrt(6.0 / fan_in);
  const Shape shape = kind == LayerKind::conv ? Shape{cout, cin, std::size_t(k), std::size_t(k)}
                                              : Shape{cin, cout, std::size_t(k), std::size_t(k)};
  std::vector<T> w(shape_numel(shape));
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  l.weight = Tensor<T>(shape, std::move(w), true);
  l.bias = Tensor<T>({cout}, T(0), true);
  return l;
}

template <typename T>
LayerNode<T> make_activation(const std::string& id, LayerKind kind, std::size_t channels) {
  LayerNode<T> l;
  l.id = id;
  l.kind = kind;
  l.in_channels = channels;
  l.out_channels = channels;
  if (is_gdn_family(kind)) l.gdn = GdnParams<T>::identity_init(channels);
  if (kind == LayerKind::slim_gdn) {
    l.scale = Tensor<T>({channels}, T(1), true);
    l.shift = Tensor<T>({channels}, T(0), true);
  }
  return l;
}

}  // namespace detail

/// Toy analysis/synthesis autoencoder.
///
///   input -> [conv s2 -> act] x (depth-1) -> conv s2 (M ch, latent y)
///   y_hat -> [tconv s2 -> inverse act] x (depth-1) -> tconv s2 (3 ch)
///
/// Activations are ClippedReLU (unbounded until calibrated) or GDN / IGDN;
/// with `slim`, analysis GDNs become slim_gdn.
template <typename T>
ModelGraph<T> build_model(const ModelConfig& cfg) {
  if (cfg.depth < 2 || cfg.depth > 4) throw ConfigError("model.depth must be in [2, 4]");
  if (cfg.N < 4 || cfg.M < 4) throw ConfigError("model.N and model.M must be >= 4");
  if (cfg.kernel < 2 || cfg.kernel % 2 != 0) throw ConfigError("model.kernel must be an even number >= 2");
  if (cfg.slim && cfg.activation != Activation::gdn) throw ConfigError("model.slim requires the gdn activation");

  Rng rng(cfg.seed);
  ModelGraph<T> m;
  m.config = cfg;

  auto input = detail::make_activation<T>("input", LayerKind::quant_stub, 3);
  input.output_range = QuantRange{0.0, 1.0};
  m.layers.push_back(input);

  const LayerKind fwd_act = cfg.activation == Activation::relu
                                ? LayerKind::clipped_relu
                                : (cfg.slim ? LayerKind::slim_gdn : LayerKind::gdn);
  const LayerKind inv_act = cfg.activation == Activation::relu ? LayerKind::clipped_relu : LayerKind::igdn;

  for (int i = 0; i < cfg.depth; ++i) {
    const bool last = i == cfg.depth - 1;
    const std::size_t cin = i == 0 ? 3 : cfg.N;
    const std::size_t cout = last ? cfg.M : cfg.N;
    auto conv = detail::make_conv<T>("ga" + std::to_string(i), LayerKind::conv, cin, cout, cfg.kernel, rng);
    conv.latent_output = last;
    m.layers.push_back(std::move(conv));
    if (!last) m.layers.push_back(detail::make_activation<T>("ga" + std::to_string(i) + "_act", fwd_act, cout));
  }
  for (int i = 0; i < cfg.depth; ++i) {
    const bool last = i == cfg.depth - 1;
    const std::size_t cin = i == 0 ? cfg.M : cfg.N;
    const std::size_t cout = last ? 3 : cfg.N;
    m.layers.push_back(detail::make_conv<T>("gs" + std::to_string(i), LayerKind::tconv, cin, cout, cfg.kernel, rng));
    if (!last) m.layers.push_back(detail::make_activation<T>("gs" + std::to_string(i) + "_act", inv_act, cout));
  }
  m.entropy = EntropyProxy<T>::init(cfg.M);
  return m;
}

/// Closed-form parameter count for build_model (used as an oracle).
inline std::size_t expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t k2 = static_cast<std::size_t>(cfg.kernel * cfg.kernel);
  std::size_t n = 0;
  auto conv = [&](std::size_t cin, std::size_t cout) { n += cin * cout * k2 + cout; };
  auto act = [&](std::size_t c) {
    if (cfg.activation == Activation::gdn) n += c + c * c;
  };
  for (int i = 0; i < cfg.depth; ++i) {
    const bool last = i == cfg.depth - 1;
    conv(i == 0 ? 3 : cfg.N, last ? cfg.M : cfg.N);
    if (!last) {
      act(cfg.N);
      if (cfg.slim) n += 2 * cfg.N;
    }
  }
  for (int i = 0; i < cfg.depth; ++i) {
    const bool last = i == cfg.depth - 1;
    conv(i == 0 ? cfg.M : cfg.N, last ? 3 : cfg.N);
    if (!last) act(cfg.N);
  }
  return n + cfg.M;
}

}  // namespace licq
