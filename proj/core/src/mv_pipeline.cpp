#include "flowcodec/mv_pipeline.hpp"

#include "flowcodec/errors.hpp"

namespace flowcodec {

namespace {

void check_multiple_of_16(const torch::Tensor& x, const char* what) {
  if (x.size(2) % 16 != 0 || x.size(3) % 16 != 0) {
    throw ShapeError(std::string(what) + ": spatial dimensions must be multiples of 16");
  }
}

}  // namespace

MvEncoderImpl::MvEncoderImpl(int fc, float flow_scale) : flow_scale_(flow_scale) {
  conv1 = register_module("conv1", make_conv(2, {5, fc, 2, 1}));
  gdn1 = register_module("gdn1", Gdn(fc, false));
  conv2 = register_module("conv2", make_conv(fc, {5, fc, 2, 1}));
  gdn2 = register_module("gdn2", Gdn(fc, false));
  res2 = register_module("res2", ResGdnBlock(fc, false));
  conv3 = register_module("conv3", make_conv(fc, {5, fc, 2, 1}));
  gdn3 = register_module("gdn3", Gdn(fc, false));
  res3 = register_module("res3", ResGdnBlock(fc, false));
  conv4 = register_module("conv4", make_conv(fc, {5, fc, 2, 1}));
}

torch::Tensor MvEncoderImpl::forward(const torch::Tensor& flow) {
  check_channels(flow, 2, "mv_encode");
  check_multiple_of_16(flow, "mv_encode");
  auto x = gdn1(conv1(flow / flow_scale_));
  x = res2(gdn2(conv2(x)));
  x = res3(gdn3(conv3(x)));
  return conv4(x);
}

MvDecoderImpl::MvDecoderImpl(int fc, float flow_scale) : feature_channels_(fc), flow_scale_(flow_scale) {
  deconv1 = register_module("deconv1", make_deconv(fc, fc, 5, 2));
  igdn1 = register_module("igdn1", Gdn(fc, true));
  res1 = register_module("res1", ResGdnBlock(fc, true));
  deconv2 = register_module("deconv2", make_deconv(fc, fc, 5, 2));
  igdn2 = register_module("igdn2", Gdn(fc, true));
  res2 = register_module("res2", ResGdnBlock(fc, true));
  deconv3 = register_module("deconv3", make_deconv(fc, fc, 5, 2));
  igdn3 = register_module("igdn3", Gdn(fc, true));
  deconv4 = register_module("deconv4", make_deconv(fc, 2, 5, 2));
}

torch::Tensor MvDecoderImpl::forward(const torch::Tensor& latent) {
  check_channels(latent, feature_channels_, "mv_decode");
  auto x = res1(igdn1(deconv1(latent)));
  x = res2(igdn2(deconv2(x)));
  x = igdn3(deconv3(x));
  return deconv4(x) * flow_scale_;
}

MvFilterImpl::MvFilterImpl(const MvFilterConfig& config, float flow_scale) : flow_scale_(flow_scale) {
  convs = register_module("convs", torch::nn::ModuleList());
  acts = register_module("acts", torch::nn::ModuleList());
  int in = 5;
  for (size_t i = 0; i < config.dilations.size(); ++i) {
    const bool last = i + 1 == config.dilations.size();
    const int out = last ? 2 : config.width;
    convs->push_back(make_conv(in, {3, out, 1, config.dilations[i]}));
    if (!last) acts->push_back(Prelu(out));
    in = out;
  }
}

torch::Tensor MvFilterImpl::forward(const torch::Tensor& decoded_flow, const torch::Tensor& reference) {
  check_channels(decoded_flow, 2, "mv_filter(flow)");
  check_channels(reference, 3, "mv_filter(reference)");
  if (decoded_flow.size(2) != reference.size(2) || decoded_flow.size(3) != reference.size(3)) {
    throw ShapeError("mv_filter: flow and reference sizes differ");
  }
  auto x = torch::cat({decoded_flow / flow_scale_, reference}, 1);
  for (size_t i = 0; i < convs->size(); ++i) {
    x = convs[i]->as<torch::nn::Conv2dImpl>()->forward(x);
    if (i < acts->size()) x = acts[i]->as<PreluImpl>()->forward(x);
  }
  return decoded_flow + x * flow_scale_;
}

}  // namespace flowcodec
