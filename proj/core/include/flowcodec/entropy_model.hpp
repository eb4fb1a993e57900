#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "flowcodec/range_coder.hpp"

namespace flowcodec {

inline constexpr double kScaleFloor = 1e-3;
/// Smallest bin probability used by the rate estimate (2^-16).
inline constexpr double kProbabilityFloor = 1.0 / 65536.0;
/// Support of the learned factorized prior and the tail of the coder tables.
inline constexpr int32_t kSupportMin = -64;
inline constexpr int32_t kSupportMax = 63;

/// Per-element mean and scale of the conditional Gaussian.
struct EntropyParams {
  torch::Tensor mean;
  torch::Tensor scale;  // >= kScaleFloor
};

/// Elementwise -log2 of the unit-bin mass of N(mean, scale) around q, with the
/// scale clamped to kScaleFloor and the mass floored at kProbabilityFloor.
torch::Tensor gaussian_bits(const torch::Tensor& q, const EntropyParams& p);
/// Total bits, the sum of gaussian_bits. Differentiable.
torch::Tensor estimate_bits(const torch::Tensor& q, const EntropyParams& p);

/// Learned per-channel prior over integers in [kSupportMin, kSupportMax] with
/// a piecewise-linear CDF between half-integer knots. At integer inputs the
/// bin mass is exactly the learned probability; for noisy training inputs it
/// interpolates smoothly.
class FactorizedPriorImpl : public torch::nn::Module {
 public:
  explicit FactorizedPriorImpl(int channels, double init_scale = 4.0);

  /// Elementwise bits for an NxCxhxw tensor (integers or noisy values).
  torch::Tensor bits(const torch::Tensor& values);
  /// Channel x bins probability table (sums to 1 per channel).
  torch::Tensor pmf();

  int channels() const { return channels_; }

  torch::Tensor logits;

 private:
  int channels_;
};
TORCH_MODULE(FactorizedPrior);

/// Hyperprior for one latent: hyper-analysis of |latent| by two stride-2
/// convolutions, hyper-synthesis by two stride-2 transposed convolutions into
/// (mean, scale), and a factorized prior for the hyper-latent itself.
class HyperPriorImpl : public torch::nn::Module {
 public:
  HyperPriorImpl(int latent_channels, int hyper_channels);

  torch::Tensor encode(const torch::Tensor& latent);
  /// `latent_hw` is the spatial size of the latent the parameters are for.
  EntropyParams decode(const torch::Tensor& hyper, std::pair<int64_t, int64_t> latent_hw);

  torch::nn::Conv2d enc1{nullptr}, enc2{nullptr};
  torch::nn::ConvTranspose2d dec1{nullptr}, dec2{nullptr};
  FactorizedPrior prior{nullptr};

  int latent_channels() const { return latent_channels_; }
  int hyper_channels() const { return hyper_channels_; }

 private:
  int latent_channels_;
  int hyper_channels_;
};
TORCH_MODULE(HyperPrior);

/// Maps (mean, scale) to coder tables. Scales are snapped to a log-spaced
/// grid and the fractional part of the mean to a uniform grid; tables are
/// built on first use and cached.
class GaussianTableBank {
 public:
  static constexpr int kScaleLevels = 160;
  static constexpr double kScaleMin = 0.01;
  static constexpr double kScaleMax = 64.0;
  static constexpr int kOffsetLevels = 65;  // steps of 1/64 over [-0.5, 0.5]

  struct Choice {
    int32_t center = 0;  // integer part of the mean
    uint32_t table = 0;  // index into tables()
  };

  Choice choose(double mean, double scale);
  const CdfTable& table(uint32_t index);

 private:
  std::map<uint32_t, CdfTable> cache_;
};

/// Codes integer latents under per-element Gaussian parameters.
void encode_gaussian(RangeEncoder& enc, std::span<const int32_t> symbols, const EntropyParams& params,
                     GaussianTableBank& bank);
std::vector<int32_t> decode_gaussian(RangeDecoder& dec, const EntropyParams& params, GaussianTableBank& bank);

/// Per-channel tables of a factorized prior.
std::vector<CdfTable> factorized_tables(FactorizedPriorImpl& prior);
/// Codes an NxCxhxw integer tensor (row-major symbols) channel by channel.
void encode_factorized(RangeEncoder& enc, std::span<const int32_t> symbols, at::IntArrayRef shape,
                       std::span<const CdfTable> tables);
std::vector<int32_t> decode_factorized(RangeDecoder& dec, at::IntArrayRef shape, std::span<const CdfTable> tables);

}  // namespace flowcodec
