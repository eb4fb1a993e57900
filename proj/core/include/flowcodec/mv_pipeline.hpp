#pragma once

#include <array>

#include <torch/torch.h>

#include "flowcodec/layers.hpp"

namespace flowcodec {

/// Fixed normalizer applied to pixel-unit flow before the motion autoencoder.
/// Recorded in the bitstream header.
inline constexpr float kDefaultFlowScale = 20.0f;

/// Motion analysis transform: four 5x5 stride-2 convolutions with GDN after
/// the first three and ResGDN blocks after layers 2 and 3.
class MvEncoderImpl : public torch::nn::Module {
 public:
  MvEncoderImpl(int feature_channels, float flow_scale = kDefaultFlowScale);
  /// flow: Nx2xHxW in pixels, H and W multiples of 16. Returns NxFCx(H/16)x(W/16).
  torch::Tensor forward(const torch::Tensor& flow);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr};
  Gdn gdn1{nullptr}, gdn2{nullptr}, gdn3{nullptr};
  ResGdnBlock res2{nullptr}, res3{nullptr};

 private:
  float flow_scale_;
};
TORCH_MODULE(MvEncoder);

/// Motion synthesis transform: four 5x5 stride-2 transposed convolutions with
/// IGDN after the first three and ResIGDN blocks after layers 1 and 2.
class MvDecoderImpl : public torch::nn::Module {
 public:
  MvDecoderImpl(int feature_channels, float flow_scale = kDefaultFlowScale);
  /// latent: NxFCxhxw. Returns Nx2x(16h)x(16w) in pixels.
  torch::Tensor forward(const torch::Tensor& latent);

  torch::nn::ConvTranspose2d deconv1{nullptr}, deconv2{nullptr}, deconv3{nullptr}, deconv4{nullptr};
  Gdn igdn1{nullptr}, igdn2{nullptr}, igdn3{nullptr};
  ResGdnBlock res1{nullptr}, res2{nullptr};

 private:
  int feature_channels_;
  float flow_scale_;
};
TORCH_MODULE(MvDecoder);

struct MvFilterConfig {
  int width = 32;
  std::array<int, 6> dilations{1, 2, 4, 4, 2, 1};
};

/// Motion-vector filtering: six 3x3 stride-1 dilated convolutions (PReLU after
/// the first five) over [decoded flow, reference frame]; the output is an
/// additive correction, so zero weights leave the decoded flow untouched.
class MvFilterImpl : public torch::nn::Module {
 public:
  explicit MvFilterImpl(const MvFilterConfig& config = {}, float flow_scale = kDefaultFlowScale);
  /// decoded_flow: Nx2xHxW, reference: Nx3xHxW. Returns Nx2xHxW.
  torch::Tensor forward(const torch::Tensor& decoded_flow, const torch::Tensor& reference);

  torch::nn::ModuleList convs;
  torch::nn::ModuleList acts;

 private:
  float flow_scale_;
};
TORCH_MODULE(MvFilter);

}  // namespace flowcodec
