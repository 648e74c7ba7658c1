#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/tensor.hpp"

namespace licq {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers for one parameter.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// One bias-corrected Adam update in place. Throws on a non-finite gradient
/// before touching the parameter.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState& state, const AdamHyper& h,
               const std::string& name = "param") {
  if (grad.size() != param.size()) throw ModelError("adam: gradient/parameter size mismatch for " + name);
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size()) throw ModelError("adam: state shape mismatch for " + name);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grad[i]))) {
      throw NumericError("adam: non-finite gradient in " + name + " at index " + std::to_string(i));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - h.lr * mhat / (std::sqrt(vhat) + h.eps));
  }
}

/// Adam over a fixed list of named leaf tensors.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor<T>>> params, AdamHyper hyper)
      : params_(std::move(params)), hyper_(hyper), states_(params_.size()) {}

  AdamHyper& hyper() { return hyper_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  // Parameters that received no gradient this round are treated as zero-grad.
  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& [name, p] = params_[i];
      std::vector<T> zeros;
      std::span<const T> g = p.grad();
      if (!p.has_grad()) {
        zeros.assign(p.size(), T(0));
        g = zeros;
      }
      adam_step<T>(p.mutable_values(), g, states_[i], hyper_, name);
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  AdamHyper hyper_;
  std::vector<AdamState> states_;
};

}  // namespace licq
