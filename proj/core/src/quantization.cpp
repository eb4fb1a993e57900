#include "flowcodec/quantization.hpp"

#include <climits>
#include <cmath>

#include "flowcodec/errors.hpp"

namespace flowcodec {

torch::Tensor quantize_train(const torch::Tensor& z, std::optional<torch::Generator> gen) {
  torch::Tensor noise;
  {
    torch::NoGradGuard no_grad;
    noise = gen ? torch::rand(z.sizes(), *gen, z.options().requires_grad(false))
                : torch::rand(z.sizes(), z.options().requires_grad(false));
    noise -= 0.5;
  }
  return z + noise;
}

torch::Tensor quantize_infer(const torch::Tensor& z) {
  return torch::sign(z) * torch::floor(torch::abs(z) + 0.5);
}

std::vector<int32_t> to_symbols(const torch::Tensor& quantized) {
  auto flat = quantized.detach().to(torch::kFloat64).contiguous().view(-1);
  std::vector<int32_t> out(static_cast<size_t>(flat.numel()));
  const double* p = flat.data_ptr<double>();
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = p[i];
    if (!std::isfinite(v) || v < INT32_MIN || v > INT32_MAX) throw ArgumentError("latent value not representable as a symbol");
    out[i] = static_cast<int32_t>(v);
  }
  return out;
}

torch::Tensor from_symbols(const std::vector<int32_t>& symbols, at::IntArrayRef shape) {
  auto t = torch::empty({static_cast<int64_t>(symbols.size())}, torch::kInt32);
  std::copy(symbols.begin(), symbols.end(), t.data_ptr<int32_t>());
  return t.to(torch::kFloat32).view(shape);
}

}  // namespace flowcodec
