#pragma once

#include <torch/torch.h>

#include "flowcodec/layers.hpp"
#include "flowcodec/mv_pipeline.hpp"

namespace flowcodec {

struct CompensationConfig {
  int width = 64;
  int blocks = 4;
};

/// Motion compensation with PReLU residual blocks. The reference is warped by
/// the filtered flow and a refinement network adds a correction:
///   f_bar = warp(ref, flow) + net([warp(ref, flow), ref, flow / scale]).
class MotionCompensationImpl : public torch::nn::Module {
 public:
  explicit MotionCompensationImpl(const CompensationConfig& config = {},
                                  float flow_scale = kDefaultFlowScale);

  /// reference: Nx3xHxW, flow: Nx2xHxW. Returns the predicted frame (unclamped).
  torch::Tensor forward(const torch::Tensor& reference, const torch::Tensor& flow);

  torch::nn::Conv2d head{nullptr}, tail{nullptr};
  torch::nn::ModuleList blocks;

 private:
  float flow_scale_;
};
TORCH_MODULE(MotionCompensation);

}  // namespace flowcodec
