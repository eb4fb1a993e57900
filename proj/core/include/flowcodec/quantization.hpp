#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

namespace flowcodec {

/// Training surrogate: z + U, U ~ Uniform[-0.5, 0.5) i.i.d. The noise is
/// drawn without gradient, so d(output)/dz is the identity.
torch::Tensor quantize_train(const torch::Tensor& z, std::optional<torch::Generator> gen = std::nullopt);

/// Inference rounding, half away from zero. Returns a float tensor holding
/// integers.
torch::Tensor quantize_infer(const torch::Tensor& z);

/// Converts an integer-valued float tensor to int32 symbols (row-major).
std::vector<int32_t> to_symbols(const torch::Tensor& quantized);
/// Inverse of to_symbols for the given shape.
torch::Tensor from_symbols(const std::vector<int32_t>& symbols, at::IntArrayRef shape);

}  // namespace flowcodec
