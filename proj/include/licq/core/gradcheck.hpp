#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "licq/core/tensor.hpp"

namespace licq {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t input = 0;    // location of the worst element
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences against reverse mode, in double. `f` maps the inputs
/// to a scalar and must rebuild its graph on every call. The error of one
/// element is |a - n| / max(|a|, |n|, 1e-3), so gradients near zero are
/// compared absolutely.
inline GradCheckResult grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                  std::vector<Tensor<double>> inputs, double h = 1e-5) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  auto loss = f(inputs);
  backward(loss);

  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k];
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      double up, down;
      {
        NoGradGuard guard;
        x[i] = orig + h;
        up = f(inputs).item();
        x[i] = orig - h;
        down = f(inputs).item();
        x[i] = orig;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double err =
          std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
      if (err > r.max_rel_error || (k == 0 && i == 0)) {
        r = {err, k, i, analytic[i], numeric};
      }
    }
  }
  return r;
}

}  // namespace licq
