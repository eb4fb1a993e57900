#pragma once

#include <torch/torch.h>

namespace flowcodec {

/// kernel x out_channels x stride x dilation, the layer template used by the
/// filtering networks.
struct ConvSpec {
  int kernel = 3;
  int out_channels = 32;
  int stride = 1;
  int dilation = 1;
};

/// Zero-padded convolution whose output size changes only through the stride.
torch::nn::Conv2d make_conv(int in_channels, const ConvSpec& spec, bool bias = true);
/// Transposed convolution that exactly multiplies spatial size by `stride`.
torch::nn::ConvTranspose2d make_deconv(int in_channels, int out_channels, int kernel, int stride);

inline constexpr double kBetaFloor = 1e-6;

/// Effective GDN parameters: beta per channel, gamma channel x channel.
struct GdnParams {
  torch::Tensor beta;   // [C], each >= kBetaFloor
  torch::Tensor gamma;  // [C, C], each >= 0
};

/// y_c = x_c / sqrt(beta_c + sum_j gamma_{c,j} x_j^2)
torch::Tensor gdn_forward(const torch::Tensor& x, const GdnParams& p);
/// y_c = x_c * sqrt(beta_c + sum_j gamma_{c,j} x_j^2)
torch::Tensor igdn_forward(const torch::Tensor& x, const GdnParams& p);

/// Learnable GDN / IGDN. beta = b^2 + floor and gamma = g^2, so the
/// constraints survive any optimizer step.
class GdnImpl : public torch::nn::Module {
 public:
  GdnImpl(int channels, bool inverse, double gamma_init = 0.1);

  torch::Tensor forward(const torch::Tensor& x);
  GdnParams params() const;
  /// Sets the raw parameters so that params() reproduces `p` (up to the floor).
  void set_params(const GdnParams& p);
  bool inverse() const { return inverse_; }

 private:
  int channels_;
  bool inverse_;
  torch::Tensor beta_raw_;
  torch::Tensor gamma_raw_;
};
TORCH_MODULE(Gdn);

/// a(I) = max(I, 0) + S * min(0, I), with S per channel (or a single slope).
torch::Tensor prelu(const torch::Tensor& x, const torch::Tensor& slope);

class PreluImpl : public torch::nn::Module {
 public:
  explicit PreluImpl(int channels, double init = 0.25);
  torch::Tensor forward(const torch::Tensor& x) { return flowcodec::prelu(x, slope); }

  torch::Tensor slope;
};
TORCH_MODULE(Prelu);

/// y_{i+1} = a[y_i + r(y_i, u_i)], r = conv -> a -> conv -> a -> conv.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels, int kernel = 3);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  Prelu act1{nullptr}, act2{nullptr}, act_out{nullptr};

 private:
  int channels_;
};
TORCH_MODULE(ResidualBlock);

/// out = x + N(conv(N(conv(x)))) with N = GDN (ResGDN) or IGDN (ResIGDN).
class ResGdnBlockImpl : public torch::nn::Module {
 public:
  ResGdnBlockImpl(int channels, bool inverse);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  Gdn norm1{nullptr}, norm2{nullptr};

 private:
  int channels_;
};
TORCH_MODULE(ResGdnBlock);

enum class UpsampleMode { kNearest, kBilinear };

/// Doubles H and W. Bilinear uses half-pixel centres (align_corners = false).
torch::Tensor upsample2x(const torch::Tensor& x, UpsampleMode mode);

/// Throws ShapeError unless `x` is NxCxHxW with C == channels.
void check_channels(const torch::Tensor& x, int64_t channels, const char* what);

/// Zeroes every parameter of `module` (weights, biases, slopes).
void zero_parameters(torch::nn::Module& module);
/// Enables or disables gradients for every parameter of `module`.
void set_trainable(torch::nn::Module& module, bool trainable);

}  // namespace flowcodec
