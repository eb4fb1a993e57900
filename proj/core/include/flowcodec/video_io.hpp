#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace flowcodec {

/// One RGB frame with values in [0, 1], stored planar (3 x H x W, float32).
class Frame {
 public:
  Frame() = default;

  /// Takes a 3xHxW or 1x3xHxW float tensor. Throws ShapeError on bad shapes
  /// and ArgumentError on values that are non-finite or outside [0, 1].
  explicit Frame(torch::Tensor pixels);

  static Frame zeros(int64_t height, int64_t width);
  /// Clamps into [0, 1] instead of rejecting; used on network outputs.
  static Frame from_clamped(const torch::Tensor& pixels);

  int64_t height() const { return pixels_.size(1); }
  int64_t width() const { return pixels_.size(2); }
  bool empty() const { return !pixels_.defined(); }

  const torch::Tensor& pixels() const { return pixels_; }
  /// 1x3xHxW view for the networks.
  torch::Tensor batch() const { return pixels_.unsqueeze(0); }

  float at(int64_t channel, int64_t y, int64_t x) const;

  /// Rounds to the 8-bit grid (v -> round(255 v) / 255).
  Frame quantized_8bit() const;

  bool bit_equal(const Frame& other) const;

 private:
  torch::Tensor pixels_;
};

struct RawVideo {
  std::vector<Frame> frames;
  double frame_rate = 30.0;
  int source_bit_depth = 8;

  int64_t height() const { return frames.empty() ? 0 : frames.front().height(); }
  int64_t width() const { return frames.empty() ? 0 : frames.front().width(); }
  size_t size() const { return frames.size(); }

  /// Throws ArgumentError when empty or when frame sizes disagree.
  void validate() const;
};

enum class FrameRole { kIntra, kPredicted };

struct GopStructure {
  int gop_size = 12;
  std::vector<FrameRole> frame_roles;
};

struct GopSegment {
  size_t first_frame = 0;  // index into the source video
  GopStructure structure;
  size_t size() const { return structure.frame_roles.size(); }
};

/// Splits `frame_count` frames into consecutive groups, each starting with an
/// intra frame. The last group may be shorter.
std::vector<GopSegment> segment_gops(size_t frame_count, int gop_size);
std::vector<GopSegment> segment_gops(const RawVideo& video, int gop_size);

enum class YuvRange { kFull, kLimited };

/// BT.601 conversion of one pixel; results are in [0, 1] after clamping.
std::array<float, 3> yuv_to_rgb(uint8_t y, uint8_t u, uint8_t v, YuvRange range = YuvRange::kFull);
std::array<uint8_t, 3> rgb_to_yuv(float r, float g, float b, YuvRange range = YuvRange::kFull);

/// Planar 8-bit YUV 4:2:0. Odd sizes round the chroma planes up.
RawVideo read_yuv420(const std::filesystem::path& path, int width, int height,
                     std::optional<int> max_frames = std::nullopt,
                     YuvRange range = YuvRange::kFull);
void write_yuv420(const RawVideo& video, const std::filesystem::path& path,
                  YuvRange range = YuvRange::kFull);

/// Reads `<prefix><zero padded index>.png` files. Indices must be contiguous.
RawVideo read_png_dir(const std::filesystem::path& dir);
/// Writes frames as 00000.png, 00001.png, ... (8-bit RGB).
void write_png_dir(const RawVideo& video, const std::filesystem::path& dir);

Frame read_png(const std::filesystem::path& path);
void write_png(const Frame& frame, const std::filesystem::path& path);

enum class SyntheticKind { kMovingSquare, kTranslatingTexture };

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kMovingSquare;
  int n_frames = 7;
  int size = 64;
  double velocity_x = 1.0;  // pixels per frame, positive = rightwards
  double velocity_y = 0.0;  // positive = downwards
  uint64_t seed = 0;
};

/// Deterministic for a fixed spec (byte-identical across calls).
RawVideo make_synthetic_sequence(const SyntheticSpec& spec);

/// Backward flow (pixel units) relating consecutive frames of a synthetic
/// translation: frame[k+1](p) == frame[k](p + flow). Equals -velocity.
torch::Tensor synthetic_backward_flow(const SyntheticSpec& spec);

struct Padding {
  int right = 0;
  int bottom = 0;
};

/// Padding that brings (height, width) up to multiples of `multiple`.
Padding padding_for(int64_t height, int64_t width, int multiple = 16);
/// Reflect-pads on the right/bottom edges.
Frame pad_frame(const Frame& frame, Padding padding);
Frame crop_frame(const Frame& frame, int64_t height, int64_t width);

}  // namespace flowcodec
