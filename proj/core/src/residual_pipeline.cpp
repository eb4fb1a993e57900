#include "flowcodec/residual_pipeline.hpp"

#include <sstream>

#include "flowcodec/errors.hpp"
#include "flowcodec/flow.hpp"

namespace flowcodec {

namespace {

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream msg;
    msg << what << ": shapes " << a.sizes() << " and " << b.sizes() << " differ";
    throw ShapeError(msg.str());
  }
}

}  // namespace

torch::Tensor compute_residual(const torch::Tensor& frame, const torch::Tensor& predicted) {
  check_same(frame, predicted, "compute_residual");
  return frame - predicted;
}

torch::Tensor reconstruct(const torch::Tensor& predicted, const torch::Tensor& residual) {
  check_same(predicted, residual, "reconstruct");
  return torch::clamp(predicted + residual, 0.0, 1.0);
}

ResEncoderImpl::ResEncoderImpl(int fc, int in_channels) : in_channels_(in_channels) {
  conv1 = register_module("conv1", make_conv(in_channels, {5, fc, 2, 1}));
  gdn1 = register_module("gdn1", Gdn(fc, false));
  conv2 = register_module("conv2", make_conv(fc, {5, fc, 2, 1}));
  gdn2 = register_module("gdn2", Gdn(fc, false));
  conv3 = register_module("conv3", make_conv(fc, {5, fc, 2, 1}));
  gdn3 = register_module("gdn3", Gdn(fc, false));
  conv4 = register_module("conv4", make_conv(fc, {5, fc, 2, 1}));
}

torch::Tensor ResEncoderImpl::forward(const torch::Tensor& residual) {
  check_channels(residual, in_channels_, "res_encode");
  if (residual.size(2) % 16 != 0 || residual.size(3) % 16 != 0) {
    throw ShapeError("res_encode: spatial dimensions must be multiples of 16");
  }
  auto x = gdn1(conv1(residual));
  x = gdn2(conv2(x));
  x = gdn3(conv3(x));
  return conv4(x);
}

ResDecoderImpl::ResDecoderImpl(int fc, int out_channels) : feature_channels_(fc) {
  deconv1 = register_module("deconv1", make_deconv(fc, fc, 5, 2));
  igdn1 = register_module("igdn1", Gdn(fc, true));
  deconv2 = register_module("deconv2", make_deconv(fc, fc, 5, 2));
  igdn2 = register_module("igdn2", Gdn(fc, true));
  deconv3 = register_module("deconv3", make_deconv(fc, fc, 5, 2));
  igdn3 = register_module("igdn3", Gdn(fc, true));
  deconv4 = register_module("deconv4", make_deconv(fc, out_channels, 5, 2));
}

torch::Tensor ResDecoderImpl::forward(const torch::Tensor& latent) {
  check_channels(latent, feature_channels_, "res_decode");
  auto x = igdn1(deconv1(latent));
  x = igdn2(deconv2(x));
  x = igdn3(deconv3(x));
  return deconv4(x);
}

ResidualFilterImpl::ResidualFilterImpl(const ResidualFilterConfig& config) {
  const int w = config.width;
  down1 = register_module("down1", make_conv(9, {3, w, 2, 1}));
  act1 = register_module("act1", Prelu(w));
  down2 = register_module("down2", make_conv(w, {3, w, 2, 1}));
  act2 = register_module("act2", Prelu(w));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < config.blocks; ++i) blocks->push_back(ResidualBlock(w));
  up_conv = register_module("up_conv", make_conv(w, {3, w, 1, 1}));
  act3 = register_module("act3", Prelu(w));
  out_conv = register_module("out_conv", make_conv(w, {3, 3, 1, 1}));
}

torch::Tensor ResidualFilterImpl::forward(const torch::Tensor& decoded_residual, const torch::Tensor& predicted,
                                          const torch::Tensor& reference, const torch::Tensor& flow) {
  check_channels(decoded_residual, 3, "res_filter(residual)");
  check_same(decoded_residual, predicted, "res_filter");
  check_same(decoded_residual, reference, "res_filter");
  if (decoded_residual.size(2) % 4 != 0 || decoded_residual.size(3) % 4 != 0) {
    throw ShapeError("res_filter: spatial dimensions must be multiples of 4");
  }
  auto warped = warp(reference, flow);
  auto x = act1(down1(torch::cat({decoded_residual, warped, predicted}, 1)));
  x = act2(down2(x));
  for (const auto& block : *blocks) x = block->as<ResidualBlockImpl>()->forward(x);
  x = act3(up_conv(upsample2x(x, UpsampleMode::kBilinear)));
  x = out_conv(upsample2x(x, UpsampleMode::kBilinear));
  return decoded_residual + x;
}

}  // namespace flowcodec
