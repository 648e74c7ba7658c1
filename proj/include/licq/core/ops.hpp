#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/tensor.hpp"

namespace licq {

namespace detail {

// Operand layout for binary ops. Broadcasting is limited to a per-channel
// vector of shape [C] against a tensor whose axis 1 has size C.
struct Broadcast {
  bool a_vec = false;
  bool b_vec = false;
  std::size_t channels = 1;
  std::size_t inner = 1;

  std::size_t channel(std::size_t i) const { return (i / inner) % channels; }
  std::size_t ia(std::size_t i) const { return a_vec ? channel(i) : i; }
  std::size_t ib(std::size_t i) const { return b_vec ? channel(i) : i; }
};

inline bool is_channel_vector(const Shape& vec, const Shape& full) {
  return vec.size() == 1 && full.size() >= 2 && full[1] == vec[0];
}

inline std::size_t inner_size(const Shape& full) {
  std::size_t inner = 1;
  for (std::size_t d = 2; d < full.size(); ++d) inner *= full[d];
  return inner;
}

template <typename T>
Broadcast plan_broadcast(const char* op, const Tensor<T>& a, const Tensor<T>& b, Shape& out_shape) {
  Broadcast bc;
  if (a.shape() == b.shape()) {
    out_shape = a.shape();
  } else if (is_channel_vector(b.shape(), a.shape())) {
    bc.b_vec = true;
    out_shape = a.shape();
  } else if (is_channel_vector(a.shape(), b.shape())) {
    bc.a_vec = true;
    out_shape = b.shape();
  } else {
    throw ModelError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (bc.a_vec || bc.b_vec) {
    bc.channels = out_shape[1];
    bc.inner = inner_size(out_shape);
  }
  return bc;
}

// Generic elementwise binary op; fwd(a, b) gives the value, da/db the
// partial derivatives at (a, b).
template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Da da, Db db) {
  Shape shape;
  const Broadcast bc = plan_broadcast(op, a, b, shape);
  const std::size_t n = shape_numel(shape);
  std::vector<T> out(n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[bc.ia(i)], bv[bc.ib(i)]);
  return make_result<T>(std::move(shape), std::move(out), {&a, &b},
                        [bc, n, da, db](TensorNode<T>& self) {
                          auto& na = *self.inputs[0];
                          auto& nb = *self.inputs[1];
                          const auto& g = self.grad;
                          if (na.requires_grad) {
                            auto& ga = na.grad_buffer();
                            for (std::size_t i = 0; i < n; ++i) {
                              ga[bc.ia(i)] += g[i] * da(na.value[bc.ia(i)], nb.value[bc.ib(i)]);
                            }
                          }
                          if (nb.requires_grad) {
                            auto& gb = nb.grad_buffer();
                            for (std::size_t i = 0; i < n; ++i) {
                              gb[bc.ib(i)] += g[i] * db(na.value[bc.ia(i)], nb.value[bc.ib(i)]);
                            }
                          }
                        });
}

// Elementwise unary op; deriv(x, y) receives the input and output value.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.size();
  std::vector<T> out(n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, [n, deriv](TensorNode<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
  });
}

template <typename T>
T sign0(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  const auto bv = b.values();
  for (std::size_t i = 0; i < bv.size(); ++i) {
    if (std::abs(static_cast<double>(bv[i])) < 1e-12) {
      throw NumericError("div: denominator magnitude below 1e-12 at index " + std::to_string(i));
    }
  }
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

// Subgradient at 0 is 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::abs(v); }, [](T v, T) { return detail::sign0(v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// max(lo, min(x, hi)); gradient 1 strictly inside (lo, hi), 0 elsewhere.
/// Infinite bounds are allowed.
template <typename T>
Tensor<T> clip(const Tensor<T>& x, double lo, double hi) {
  if (!(lo <= hi)) throw ModelError("clip: lower bound exceeds upper bound");
  return detail::unary<T>(
      x,
      [lo, hi](T v) {
        const double d = static_cast<double>(v);
        return d < lo ? static_cast<T>(lo) : (d > hi ? static_cast<T>(hi) : v);
      },
      [lo, hi](T v, T) {
        const double d = static_cast<double>(v);
        return (d > lo && d < hi) ? T(1) : T(0);
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > T(0))) throw NumericError("log: non-positive argument at index " + std::to_string(i));
  }
  return detail::unary<T>(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// log(1 + e^x), computed without overflow.
template <typename T>
T softplus_value(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T inverse_softplus_value(T y) {
  // Zero (or less) maps to a far-negative raw value whose softplus is ~1e-13.
  if (!(y > T(0))) return T(-30);
  if (y > T(30)) return y;
  return std::log(std::expm1(y));
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return softplus_value(v); }, [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

enum class ReduceKind { sum, mean };

/// Sum or mean over the listed axes (all axes when empty). Accumulation is
/// in double, visiting input elements in storage order.
template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceKind kind, std::vector<std::size_t> axes = {}) {
  const Shape& in_shape = x.shape();
  std::vector<bool> reduced(in_shape.size(), axes.empty());
  for (std::size_t a : axes) {
    if (a >= in_shape.size()) throw ModelError("reduce: axis " + std::to_string(a) + " out of range");
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < in_shape.size(); ++d) {
    if (reduced[d]) {
      count *= in_shape[d];
    } else {
      out_shape.push_back(in_shape[d]);
    }
  }
  if (out_shape.empty()) out_shape = {1};
  const std::size_t n = x.size();
  // Map every input index to its output slot.
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> idx(in_shape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < in_shape.size(); ++d) {
        if (!reduced[d]) o = o * in_shape[d] + idx[d];
      }
      target[i] = o;
      for (std::size_t d = in_shape.size(); d-- > 0;) {
        if (++idx[d] < in_shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  std::vector<double> acc(shape_numel(out_shape), 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) acc[target[i]] += static_cast<double>(xv[i]);
  const double factor = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<T> out(acc.size());
  for (std::size_t o = 0; o < acc.size(); ++o) out[o] = static_cast<T>(acc[o] * factor);
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x},
                                [target = std::move(target), factor](TensorNode<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  const T f = static_cast<T>(factor);
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[target[i]] * f;
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  return reduce(x, ReduceKind::sum);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return reduce(x, ReduceKind::mean);
}

/// Cross-correlation. input [N,Ci,H,W], kernel [Co,Ci,kH,kW], bias [Co] or
/// undefined. Output spatial size floor((H + 2 pad - kH) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride, int pad) {
  if (input.rank() != 4 || kernel.rank() != 4) throw ModelError("conv2d: expected rank-4 input and kernel");
  if (stride < 1 || pad < 0) throw ModelError("conv2d: stride must be >= 1 and pad >= 0");
  const std::size_t N = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (kernel.dim(1) != Ci) {
    throw ModelError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                     std::to_string(Ci));
  }
  if (KH > H + 2 * pad || KW > W + 2 * pad) throw ModelError("conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{Co}) throw ModelError("conv2d: bias shape " + shape_str(bias.shape()));
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
  const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
  const std::ptrdiff_t s = stride, p = pad;

  std::vector<T> out(N * Co * OH * OW);
  const auto x = input.values();
  const auto k = kernel.values();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      T* o = out.data() + (n * Co + co) * OH * OW;
      const T b = has_bias ? bias.values()[co] : T(0);
      std::fill(o, o + OH * OW, b);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* xp = x.data() + (n * Ci + ci) * H * W;
        for (std::size_t kh = 0; kh < KH; ++kh) {
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const T w = k[((co * Ci + ci) * KH + kh) * KW + kw];
            for (std::size_t oh = 0; oh < OH; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * s - p + static_cast<std::ptrdiff_t>(kh);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              const T* xr = xp + ih * W;
              T* orow = o + oh * OW;
              for (std::size_t ow = 0; ow < OW; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * s - p + static_cast<std::ptrdiff_t>(kw);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                orow[ow] += w * xr[iw];
              }
            }
          }
        }
      }
    }
  }

  std::vector<const Tensor<T>*> ins{&input, &kernel};
  if (has_bias) ins.push_back(&bias);
  return detail::make_result<T>(
      Shape{N, Co, OH, OW}, std::move(out), ins,
      [=](TensorNode<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nk = *self.inputs[1];
        const auto& g = self.grad;
        std::vector<T>* gx = nx.requires_grad ? &nx.grad_buffer() : nullptr;
        std::vector<T>* gk = nk.requires_grad ? &nk.grad_buffer() : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t co = 0; co < Co; ++co) {
            const T* go = g.data() + (n * Co + co) * OH * OW;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const std::size_t xoff = (n * Ci + ci) * H * W;
              for (std::size_t kh = 0; kh < KH; ++kh) {
                for (std::size_t kw = 0; kw < KW; ++kw) {
                  const std::size_t kidx = ((co * Ci + ci) * KH + kh) * KW + kw;
                  const T w = nk.value[kidx];
                  T wgrad = T(0);
                  for (std::size_t oh = 0; oh < OH; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * s - p + static_cast<std::ptrdiff_t>(kh);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                      const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * s - p + static_cast<std::ptrdiff_t>(kw);
                      if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                      const std::size_t xi = xoff + ih * W + iw;
                      const T gv = go[oh * OW + ow];
                      if (gx) (*gx)[xi] += gv * w;
                      wgrad += gv * nx.value[xi];
                    }
                  }
                  if (gk) (*gk)[kidx] += wgrad;
                }
              }
            }
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad_buffer();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Co; ++co) {
              const T* go = g.data() + (n * Co + co) * OH * OW;
              T acc = T(0);
              for (std::size_t i = 0; i < OH * OW; ++i) acc += go[i];
              gb[co] += acc;
            }
          }
        }
      });
}

/// Adjoint of conv2d with respect to its input. input [N,Ci,H,W], kernel
/// [Ci,Co,kH,kW]. Output spatial size (H - 1) * stride - 2 pad + kH.
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                           int pad) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ModelError("conv2d_transpose: expected rank-4 input and kernel");
  }
  if (stride < 1 || pad < 0) throw ModelError("conv2d_transpose: stride must be >= 1 and pad >= 0");
  const std::size_t N = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  if (kernel.dim(0) != Ci) {
    throw ModelError("conv2d_transpose: kernel expects " + std::to_string(kernel.dim(0)) +
                     " input channels, got " + std::to_string(Ci));
  }
  const std::ptrdiff_t ohs = (static_cast<std::ptrdiff_t>(H) - 1) * stride - 2 * pad + static_cast<std::ptrdiff_t>(KH);
  const std::ptrdiff_t ows = (static_cast<std::ptrdiff_t>(W) - 1) * stride - 2 * pad + static_cast<std::ptrdiff_t>(KW);
  if (ohs < 1 || ows < 1) throw ModelError("conv2d_transpose: empty output");
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{Co}) {
    throw ModelError("conv2d_transpose: bias shape " + shape_str(bias.shape()));
  }
  const std::size_t OH = static_cast<std::size_t>(ohs), OW = static_cast<std::size_t>(ows);
  const std::ptrdiff_t s = stride, p = pad;

  std::vector<T> out(N * Co * OH * OW);
  const auto x = input.values();
  const auto k = kernel.values();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      T* o = out.data() + (n * Co + co) * OH * OW;
      std::fill(o, o + OH * OW, has_bias ? bias.values()[co] : T(0));
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* xp = x.data() + (n * Ci + ci) * H * W;
        for (std::size_t kh = 0; kh < KH; ++kh) {
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const T w = k[((ci * Co + co) * KH + kh) * KW + kw];
            for (std::size_t ih = 0; ih < H; ++ih) {
              const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(ih) * s - p + static_cast<std::ptrdiff_t>(kh);
              if (oh < 0 || oh >= ohs) continue;
              T* orow = o + oh * OW;
              const T* xr = xp + ih * W;
              for (std::size_t iw = 0; iw < W; ++iw) {
                const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(iw) * s - p + static_cast<std::ptrdiff_t>(kw);
                if (ow < 0 || ow >= ows) continue;
                orow[ow] += w * xr[iw];
              }
            }
          }
        }
      }
    }
  }

  std::vector<const Tensor<T>*> ins{&input, &kernel};
  if (has_bias) ins.push_back(&bias);
  return detail::make_result<T>(
      Shape{N, Co, OH, OW}, std::move(out), ins,
      [=](TensorNode<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nk = *self.inputs[1];
        const auto& g = self.grad;
        std::vector<T>* gx = nx.requires_grad ? &nx.grad_buffer() : nullptr;
        std::vector<T>* gk = nk.requires_grad ? &nk.grad_buffer() : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t co = 0; co < Co; ++co) {
            const T* go = g.data() + (n * Co + co) * OH * OW;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const std::size_t xoff = (n * Ci + ci) * H * W;
              for (std::size_t kh = 0; kh < KH; ++kh) {
                for (std::size_t kw = 0; kw < KW; ++kw) {
                  const std::size_t kidx = ((ci * Co + co) * KH + kh) * KW + kw;
                  const T w = nk.value[kidx];
                  T wgrad = T(0);
                  for (std::size_t ih = 0; ih < H; ++ih) {
                    const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(ih) * s - p + static_cast<std::ptrdiff_t>(kh);
                    if (oh < 0 || oh >= ohs) continue;
                    for (std::size_t iw = 0; iw < W; ++iw) {
                      const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(iw) * s - p + static_cast<std::ptrdiff_t>(kw);
                      if (ow < 0 || ow >= ows) continue;
                      const T gv = go[oh * OW + ow];
                      const std::size_t xi = xoff + ih * W + iw;
                      if (gx) (*gx)[xi] += gv * w;
                      wgrad += gv * nx.value[xi];
                    }
                  }
                  if (gk) (*gk)[kidx] += wgrad;
                }
              }
            }
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad_buffer();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Co; ++co) {
              const T* go = g.data() + (n * Co + co) * OH * OW;
              T acc = T(0);
              for (std::size_t i = 0; i < OH * OW; ++i) acc += go[i];
              gb[co] += acc;
            }
          }
        }
      });
}

}  // namespace licq
