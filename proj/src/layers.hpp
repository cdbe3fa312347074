#pragma once

// Per-layer forward and reverse kernels shared by autodiff and the DeepLIFT
// multiplier chain. Internal to the library.

#include <cstdint>
#include <vector>

#include "fraclens/model.hpp"
#include "fraclens/tensor.hpp"

namespace fraclens::detail {

/// argmax receives, for maxpool2, the flat input index selected per output.
Tensor layer_forward(const Model& model, std::size_t layer, const Tensor& in, std::vector<std::uint32_t>* argmax);

/// Vector-Jacobian product with respect to the layer input. `in` is only
/// read by relu; `argmax` only by maxpool2.
Tensor layer_backward_input(const Model& model, std::size_t layer, const Tensor& in,
                            const std::vector<std::uint32_t>& argmax, const Tensor& grad_out);

/// Accumulates parameter gradients into grads (indexed like model.parameters()).
/// Frozen parameters are skipped.
void layer_backward_params(const Model& model, std::size_t layer, const Tensor& in, const Tensor& grad_out,
                           std::vector<Tensor>& grads);

bool is_affine(LayerKind kind);

}  // namespace fraclens::detail
