#pragma once

#include <torch/torch.h>

#include "flowcodec/layers.hpp"

namespace flowcodec {

/// r_t = f_t - f_bar_t. Throws ShapeError on mismatch.
torch::Tensor compute_residual(const torch::Tensor& frame, const torch::Tensor& predicted);
/// f_hat_t = clamp(f_bar_t + r_hat_t, 0, 1).
torch::Tensor reconstruct(const torch::Tensor& predicted, const torch::Tensor& residual);

/// Residual analysis transform: four 5x5 stride-2 convolutions, GDN after the
/// first three.
class ResEncoderImpl : public torch::nn::Module {
 public:
  explicit ResEncoderImpl(int feature_channels, int in_channels = 3);
  torch::Tensor forward(const torch::Tensor& residual);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr};
  Gdn gdn1{nullptr}, gdn2{nullptr}, gdn3{nullptr};

 private:
  int in_channels_;
};
TORCH_MODULE(ResEncoder);

/// Residual synthesis transform: four 5x5 stride-2 transposed convolutions,
/// IGDN after the first three.
class ResDecoderImpl : public torch::nn::Module {
 public:
  explicit ResDecoderImpl(int feature_channels, int out_channels = 3);
  torch::Tensor forward(const torch::Tensor& latent);

  torch::nn::ConvTranspose2d deconv1{nullptr}, deconv2{nullptr}, deconv3{nullptr}, deconv4{nullptr};
  Gdn igdn1{nullptr}, igdn2{nullptr}, igdn3{nullptr};

 private:
  int feature_channels_;
};
TORCH_MODULE(ResDecoder);

struct ResidualFilterConfig {
  int width = 64;
  int blocks = 6;
};

/// Residual filtering hourglass over [r_bar, warp(ref, flow), f_bar]:
/// two stride-2 convolutions, residual blocks at quarter resolution, then
/// upsample / conv / upsample / conv. Additive output: r_hat = r_bar + net(.).
class ResidualFilterImpl : public torch::nn::Module {
 public:
  explicit ResidualFilterImpl(const ResidualFilterConfig& config = {});

  torch::Tensor forward(const torch::Tensor& decoded_residual, const torch::Tensor& predicted,
                        const torch::Tensor& reference, const torch::Tensor& flow);

  torch::nn::Conv2d down1{nullptr}, down2{nullptr}, up_conv{nullptr}, out_conv{nullptr};
  Prelu act1{nullptr}, act2{nullptr}, act3{nullptr};
  torch::nn::ModuleList blocks;
};
TORCH_MODULE(ResidualFilter);

}  // namespace flowcodec
