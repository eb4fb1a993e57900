#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "flowcodec/config.hpp"
#include "flowcodec/model.hpp"
#include "flowcodec/video_io.hpp"

namespace flowcodec {

enum class DistortionMode { kMse, kMsSsim };
enum class TrainStage { kPretrain, kFinetune };

std::string to_string(DistortionMode mode);
std::string to_string(TrainStage stage);

struct RdLossValue {
  torch::Tensor total;       // alpha * distortion + rate
  torch::Tensor distortion;  // MSE or 1 - MS-SSIM
  torch::Tensor rate;        // estimated bits per pixel
  double alpha = 0.0;
};

/// alpha * d(frame, reconstruction) + bits / pixels, where pixels counts
/// N x H x W of `frame`. Bits already include the hyper-latents.
RdLossValue rd_loss(const torch::Tensor& frame, const torch::Tensor& reconstruction, const torch::Tensor& bits_mv,
                    const torch::Tensor& bits_res, double alpha, DistortionMode mode);

struct TrainConfig {
  DistortionMode distortion = DistortionMode::kMse;
  double alpha = 1024.0;
  TrainStage stage = TrainStage::kPretrain;
  int steps = 20000;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  int batch = 4;
  int clip_len = 4;  // 1 intra frame + clip_len - 1 predicted frames
  uint64_t seed = 0;
  int crop = 64;
  double clip_norm = 1.0;
  int log_every = 50;
  int flow_warmup_steps = 0;
  /// "synthetic" or a directory of PNG sequence directories.
  std::string data = "synthetic";
  std::string synthetic_kind = "mixed";
  double max_velocity = 2.0;

  // Two-stage schedule (train_full).
  std::vector<double> alphas{64, 128, 256, 512};
  int finetune_steps = 5000;
  double finetune_lr_initial = 4e-5;
  double finetune_lr_final = 1e-5;

  std::string model_preset = "default";
  KeyValues model_overrides;  // "model.<key>" entries
  std::string output_dir = "runs";

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Flat keys of TrainConfig; "model.<key>" entries are collected into
/// model_overrides and checked against the model schema.
void apply_train_config(TrainConfig& cfg, const KeyValues& kv);
KeyValues dump_train_config(const TrainConfig& cfg);
std::vector<std::string> train_config_keys();

ModelConfig model_config_for(const TrainConfig& cfg);
/// Seeds torch before constructing, so initial weights depend only on `seed`.
CodecModel make_model(const ModelConfig& config, uint64_t seed);

/// Batches of clips: clip[t] is Bx3xHxW.
class ClipSource {
 public:
  virtual ~ClipSource() = default;
  virtual std::vector<torch::Tensor> sample(int batch, int clip_len, std::mt19937_64& rng) = 0;
};

/// Random synthetic translations (moving squares and/or textures).
std::unique_ptr<ClipSource> make_synthetic_source(int size, const std::string& kind, double max_velocity);
/// Random temporal windows and crops of the given videos.
std::unique_ptr<ClipSource> make_video_source(std::vector<RawVideo> videos, int crop);
/// Every sub-directory of `dir` holding PNG frames becomes one video.
std::unique_ptr<ClipSource> make_png_corpus_source(const std::string& dir, int crop);
std::unique_ptr<ClipSource> make_source(const TrainConfig& cfg);

struct StepLog {
  int step = 0;
  double loss = 0.0;
  double distortion = 0.0;
  double bpp = 0.0;
  double psnr = 0.0;
  double lr = 0.0;
};

struct TrainHooks {
  /// Called for every predicted frame of the unroll with the reference it
  /// was coded against, the previous frame's reconstruction and the previous
  /// ground-truth frame.
  std::function<void(int frame, const torch::Tensor& reference, const torch::Tensor& previous_reconstruction,
                     const torch::Tensor& previous_original)>
      on_reference;
  std::function<void(const StepLog&)> on_log;
};

struct TrainResult {
  std::vector<StepLog> log;
  int steps_done = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// One training stage: clips of clip_len frames, intra first then the
/// predicted frames each referencing the previous reconstruction; loss is
/// the mean RD loss over the clip. Adam, linear LR decay, global-norm
/// clipping. A non-finite loss or gradient restores the last good weights
/// and stops the stage (result.aborted).
TrainResult train_stage(CodecModel& model, ClipSource& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// CSV with columns step,loss,distortion,bpp,psnr,lr.
std::string format_train_log(const std::vector<StepLog>& log);

struct TrainedModel {
  double alpha = 0.0;
  std::string checkpoint;
  CodecModel model{nullptr};
};

/// Pretrain at cfg.alpha for cfg.steps, then fine-tune one copy per entry
/// of cfg.alphas. Checkpoints and CSV logs go to cfg.output_dir.
std::vector<TrainedModel> train_full(const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Metadata recorded next to a trained model.
Metadata training_metadata(const TrainConfig& cfg, double alpha, TrainStage stage, int steps_done);

struct ClipEvaluation {
  double psnr = 0.0;           // mean over frames, 8-bit quantized
  double bpp_estimated = 0.0;  // rate model estimate
  double loss = 0.0;           // mean RD loss at the given alpha (MSE)
};

/// Deterministic rounding-mode pass over `clip` (first frame intra, the
/// rest predicted) without entropy coding.
ClipEvaluation evaluate_clip(CodecModel& model, const RawVideo& clip, double alpha);

}  // namespace flowcodec
