#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "flowcodec/layers.hpp"

namespace flowcodec {

/// Backward warp: out(p) = bilinear sample of `input` at p + flow(p).
///
/// `input` is NxCxHxW, `flow` is Nx2xHxW in pixels (channel 0 horizontal,
/// positive samples to the right; channel 1 vertical, positive samples
/// below). Sampling positions are clamped to the image border. Differentiable
/// with respect to both arguments; zero flow returns `input` bit-for-bit.
torch::Tensor warp(const torch::Tensor& input, const torch::Tensor& flow);

struct FlowEstimatorConfig {
  std::array<int, 3> widths{16, 32, 64};  // finest to coarsest level
  int kernel = 5;
};

/// Three-level coarse-to-fine flow estimator. At each level the reference
/// features are warped by the upsampled coarser flow and a small head
/// predicts a residual flow.
class FlowEstimatorImpl : public torch::nn::Module {
 public:
  explicit FlowEstimatorImpl(const FlowEstimatorConfig& config = {});

  /// current, reference: Nx3xHxW with H, W multiples of 4. Returns Nx2xHxW.
  torch::Tensor forward(const torch::Tensor& current, const torch::Tensor& reference);

  /// Zeroes the last convolution of every head, so identical inputs give
  /// exactly zero flow.
  void zero_heads();

  const FlowEstimatorConfig& config() const { return config_; }

 private:
  std::vector<torch::Tensor> features(const torch::Tensor& image);

  FlowEstimatorConfig config_;
  torch::nn::ModuleList extract_convs_;
  torch::nn::ModuleList extract_acts_;
  torch::nn::ModuleList head_in_;
  torch::nn::ModuleList head_act_;
  torch::nn::ModuleList head_out_;
};
TORCH_MODULE(FlowEstimator);

/// Mean endpoint error between two Nx2xHxW flows.
double mean_endpoint_error(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace flowcodec
