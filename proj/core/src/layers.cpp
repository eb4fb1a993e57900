#include "flowcodec/layers.hpp"

#include <sstream>

#include "flowcodec/errors.hpp"

namespace flowcodec {

namespace F = torch::nn::functional;

torch::nn::Conv2d make_conv(int in_channels, const ConvSpec& spec, bool bias) {
  if (in_channels <= 0 || spec.kernel <= 0 || spec.out_channels <= 0 || spec.stride <= 0 ||
      spec.dilation <= 0) {
    throw ArgumentError("convolution parameters must be positive");
  }
  const int padding = spec.dilation * (spec.kernel - 1) / 2;
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, spec.out_channels, spec.kernel)
                               .stride(spec.stride)
                               .padding(padding)
                               .dilation(spec.dilation)
                               .bias(bias));
}

torch::nn::ConvTranspose2d make_deconv(int in_channels, int out_channels, int kernel, int stride) {
  return torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in_channels, out_channels, kernel)
                                        .stride(stride)
                                        .padding((kernel - 1) / 2)
                                        .output_padding(stride - 1));
}

void check_channels(const torch::Tensor& x, int64_t channels, const char* what) {
  if (x.dim() != 4 || x.size(1) != channels) {
    std::ostringstream msg;
    msg << what << ": expected N x " << channels << " x H x W input, got " << x.sizes();
    throw ShapeError(msg.str());
  }
}

namespace {

torch::Tensor gdn_norm(const torch::Tensor& x, const GdnParams& p) {
  const int64_t c = p.beta.size(0);
  check_channels(x, c, "gdn");
  if (p.gamma.dim() != 2 || p.gamma.size(0) != c || p.gamma.size(1) != c) {
    throw ShapeError("gdn: gamma must be C x C");
  }
  return torch::sqrt(F::conv2d(x * x, p.gamma.view({c, c, 1, 1}),
                               F::Conv2dFuncOptions().bias(p.beta)));
}

}  // namespace

torch::Tensor gdn_forward(const torch::Tensor& x, const GdnParams& p) { return x / gdn_norm(x, p); }

torch::Tensor igdn_forward(const torch::Tensor& x, const GdnParams& p) { return x * gdn_norm(x, p); }

GdnImpl::GdnImpl(int channels, bool inverse, double gamma_init)
    : channels_(channels), inverse_(inverse) {
  beta_raw_ = register_parameter("beta", torch::full({channels}, std::sqrt(1.0 - kBetaFloor)));
  gamma_raw_ = register_parameter("gamma", torch::eye(channels) * std::sqrt(gamma_init));
}

GdnParams GdnImpl::params() const {
  return {beta_raw_ * beta_raw_ + kBetaFloor, gamma_raw_ * gamma_raw_};
}

void GdnImpl::set_params(const GdnParams& p) {
  torch::NoGradGuard no_grad;
  beta_raw_.copy_(torch::sqrt(torch::clamp_min(p.beta.to(beta_raw_.dtype()) - kBetaFloor, 0.0)));
  gamma_raw_.copy_(torch::sqrt(torch::clamp_min(p.gamma.to(gamma_raw_.dtype()), 0.0)));
}

torch::Tensor GdnImpl::forward(const torch::Tensor& x) {
  check_channels(x, channels_, inverse_ ? "igdn" : "gdn");
  return inverse_ ? igdn_forward(x, params()) : gdn_forward(x, params());
}

torch::Tensor prelu(const torch::Tensor& x, const torch::Tensor& slope) {
  auto s = slope;
  if (slope.numel() > 1) {
    check_channels(x, slope.numel(), "prelu");
    s = slope.view({1, -1, 1, 1});
  }
  return torch::clamp_min(x, 0) + s * torch::clamp_max(x, 0);
}

PreluImpl::PreluImpl(int channels, double init) {
  slope = register_parameter("slope", torch::full({channels}, init));
}

ResidualBlockImpl::ResidualBlockImpl(int channels, int kernel) : channels_(channels) {
  const ConvSpec spec{kernel, channels, 1, 1};
  conv1 = register_module("conv1", make_conv(channels, spec));
  act1 = register_module("act1", Prelu(channels));
  conv2 = register_module("conv2", make_conv(channels, spec));
  act2 = register_module("act2", Prelu(channels));
  conv3 = register_module("conv3", make_conv(channels, spec));
  act_out = register_module("act_out", Prelu(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  check_channels(x, channels_, "residual_block");
  auto r = conv3(act2(conv2(act1(conv1(x)))));
  return act_out(x + r);
}

ResGdnBlockImpl::ResGdnBlockImpl(int channels, bool inverse) : channels_(channels) {
  const ConvSpec spec{3, channels, 1, 1};
  conv1 = register_module("conv1", make_conv(channels, spec));
  norm1 = register_module("norm1", Gdn(channels, inverse));
  conv2 = register_module("conv2", make_conv(channels, spec));
  norm2 = register_module("norm2", Gdn(channels, inverse));
}

torch::Tensor ResGdnBlockImpl::forward(const torch::Tensor& x) {
  check_channels(x, channels_, "res_gdn_block");
  return x + norm2(conv2(norm1(conv1(x))));
}

torch::Tensor upsample2x(const torch::Tensor& x, UpsampleMode mode) {
  if (x.dim() != 4) throw ShapeError("upsample2x expects an N x C x H x W tensor");
  auto opts = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0});
  if (mode == UpsampleMode::kNearest) {
    opts.mode(torch::kNearest);
  } else {
    opts.mode(torch::kBilinear).align_corners(false);
  }
  return F::interpolate(x, opts);
}

void zero_parameters(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) p.zero_();
}

void set_trainable(torch::nn::Module& module, bool trainable) {
  for (auto& p : module.parameters()) p.set_requires_grad(trainable);
}

}  // namespace flowcodec
