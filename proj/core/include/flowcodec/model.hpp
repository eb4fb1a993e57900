#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>

#include <torch/torch.h>

#include "flowcodec/compensation.hpp"
#include "flowcodec/config.hpp"
#include "flowcodec/entropy_model.hpp"
#include "flowcodec/flow.hpp"
#include "flowcodec/mv_pipeline.hpp"
#include "flowcodec/residual_pipeline.hpp"

namespace flowcodec {

struct ModelConfig {
  int mv_channels = 128;
  int mv_hyper_channels = 64;
  int res_channels = 128;
  int res_hyper_channels = 64;
  FlowEstimatorConfig flow;
  MvFilterConfig mv_filter;
  CompensationConfig compensation;
  ResidualFilterConfig res_filter;
  float flow_scale = kDefaultFlowScale;
  /// A disabled filter has all weights zeroed and frozen, so it passes its
  /// input through unchanged.
  bool mv_filter_enabled = true;
  bool res_filter_enabled = true;

  /// Reduced widths for single-core runs on 64x64 clips.
  static ModelConfig toy();
  static ModelConfig preset(const std::string& name);  // "default" or "toy"

  /// Throws ConfigError on non-positive sizes or even kernels.
  void validate() const;
};

const ConfigSchema<ModelConfig>& model_config_schema();

/// Outputs of one differentiable frame step. Bits are estimated totals
/// (latent plus hyper-latent) for the branch.
struct FrameStep {
  torch::Tensor reconstruction;  // clamped to [0, 1]
  torch::Tensor bits_mv;         // scalar; zero for intra
  torch::Tensor bits_res;        // scalar
  torch::Tensor bits_hyper;      // scalar, the hyper share of the two above
  torch::Tensor flow;            // decoded and filtered flow; undefined for intra
  torch::Tensor predicted;       // f_bar; undefined for intra
};

enum class QuantMode { kNoise, kRound };

/// Latent and hyper-latent of one branch after quantization.
struct BranchLatents {
  torch::Tensor latent;  // y_hat
  torch::Tensor hyper;   // z_hat
  EntropyParams params;  // decoded from hyper
};

/// Intermediate quantities the decoder can rebuild from the motion packet.
struct Prediction {
  torch::Tensor flow;       // o_hat, after the filter
  torch::Tensor predicted;  // f_bar
};

/// Every network of the codec. Parameter names (as reported by
/// named_parameters()) form the checkpoint contract documented in README.
class CodecModelImpl : public torch::nn::Module {
 public:
  explicit CodecModelImpl(const ModelConfig& config = {});

  const ModelConfig& config() const { return config_; }

  /// Motion branch analysis and quantization (flow from `current` to `reference`).
  BranchLatents analyse_motion(const torch::Tensor& current, const torch::Tensor& reference, QuantMode mode,
                               torch::Tensor* raw_flow = nullptr);
  /// Residual branch analysis; for intra the residual is the frame itself.
  BranchLatents analyse_residual(const torch::Tensor& residual, QuantMode mode);
  /// Parameters of the conditional Gaussian for a quantized hyper-latent.
  EntropyParams motion_params(const torch::Tensor& hyper, std::pair<int64_t, int64_t> latent_hw);
  EntropyParams residual_params(const torch::Tensor& hyper, std::pair<int64_t, int64_t> latent_hw);

  /// Decoder-side synthesis shared by encoder and decoder (closed loop).
  Prediction predict(const torch::Tensor& reference, const torch::Tensor& motion_latent);
  torch::Tensor reconstruct_p(const torch::Tensor& reference, const Prediction& prediction,
                              const torch::Tensor& residual_latent);
  torch::Tensor reconstruct_i(const torch::Tensor& residual_latent);

  /// Training / evaluation forward passes with rate estimates.
  FrameStep forward_p(const torch::Tensor& current, const torch::Tensor& reference, QuantMode mode);
  FrameStep forward_i(const torch::Tensor& current, QuantMode mode);

  /// Re-applies the zero-and-freeze rule for disabled filters.
  void apply_filter_switches();

  FlowEstimator flow{nullptr};
  MvEncoder mv_encoder{nullptr};
  MvDecoder mv_decoder{nullptr};
  HyperPrior mv_hyper{nullptr};
  MvFilter mv_filter{nullptr};
  MotionCompensation compensation{nullptr};
  ResEncoder res_encoder{nullptr};
  ResDecoder res_decoder{nullptr};
  HyperPrior res_hyper{nullptr};
  ResidualFilter res_filter{nullptr};

 private:
  torch::Tensor quantize(const torch::Tensor& z, QuantMode mode);
  torch::Tensor branch_bits(HyperPriorImpl& hyper, const BranchLatents& b, torch::Tensor* hyper_bits);

  ModelConfig config_;
};
TORCH_MODULE(CodecModel);

/// Free-form checkpoint metadata (training config, alpha, git describe...).
using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  CodecModel model{nullptr};
  Metadata metadata;
};

/// Writes every named parameter and buffer plus the model config and metadata.
void save_checkpoint(const std::string& path, CodecModel& model, const Metadata& metadata);
/// Rebuilds the model from the stored config. Throws IoError if the file is
/// missing or unreadable, ConfigError on missing/extra/mis-shaped tensors.
Checkpoint load_checkpoint(const std::string& path);

/// First 8 bytes of SHA-256 over the parameter names, shapes and float data.
std::array<uint8_t, 8> model_id(CodecModel& model);
std::string hex(std::span<const uint8_t> bytes);

/// Copies parameter and buffer values from `src` into `dst` (same config).
void copy_weights(CodecModel& dst, CodecModel& src);

}  // namespace flowcodec
