#pragma once

#include <string>
#include <vector>

#include "licq/codec/forward.hpp"
#include "licq/codec/model.hpp"
#include "licq/core/error.hpp"
#include "licq/quant/quantizer.hpp"

namespace licq {

struct MsqeRow {
  std::string id;
  LayerKind kind;
  double weight_msqe = 0.0;      // conv layers; 0 elsewhere
  double activation_msqe = 0.0;  // activation layers; 0 elsewhere
};

/// Per-layer quantization error of a calibrated quantized model on the
/// calibration crops. Weights: per-channel kernel specs. Activations: each
/// activation quantizer against the unclipped float tensor it replaces, so
/// clipping error is counted together with rounding error (ReLU layers: the
/// edge quantizer on relu(x); GDN layers: the input quantizer on x).
template <typename T>
std::vector<MsqeRow> msqe_table(const ModelGraph<T>& m, const Tensor<T>& calib) {
  if (!m.quantized) throw ModelError("msqe_table: model carries no quantizer specs");
  if (!calib.defined() || calib.size() == 0) throw DataError("msqe_table: calibration set is empty");
  NoGradGuard no_grad;
  const auto fw = forward(m, calib.detach(), {.taps = true});
  std::vector<MsqeRow> rows;
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const auto& l = m.layers[k];
    MsqeRow row{l.id, l.kind};
    if (is_conv(l.kind)) {
      row.weight_msqe = msqe(l.weight, conv_weight_spec(l));
    } else if (l.kind == LayerKind::clipped_relu) {
      row.activation_msqe = msqe(relu(fw.taps[k].pre), edge_spec(l));
    } else if (is_gdn_family(l.kind)) {
      row.activation_msqe = msqe(fw.taps[k].pre, gdn_input_spec(l));
    } else {
      continue;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace licq
