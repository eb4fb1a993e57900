#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "flowcodec/bitstream.hpp"
#include "flowcodec/entropy_model.hpp"
#include "flowcodec/model.hpp"
#include "flowcodec/video_io.hpp"

namespace flowcodec {

/// Frames are padded to multiples of this before coding.
inline constexpr int kPadMultiple = 16;

/// Most recent reconstructions (padded, 1x3xHxW), newest last.
class DecodedFrameBuffer {
 public:
  explicit DecodedFrameBuffer(size_t capacity = 1);

  void push(torch::Tensor frame);
  const torch::Tensor& latest() const;
  bool empty() const { return frames_.empty(); }
  size_t size() const { return frames_.size(); }
  size_t capacity() const { return capacity_; }
  void clear() { frames_.clear(); }

 private:
  size_t capacity_;
  std::deque<torch::Tensor> frames_;
};

/// Model plus the coder tables derived from it. Not thread-safe (the table
/// bank fills lazily); use one per thread.
class CodecContext {
 public:
  explicit CodecContext(CodecModel model, bool separate_hyper = false);

  CodecModel model;
  /// Emit HYPER_MV / HYPER_RES packets instead of prefixing the hyper
  /// symbols to the MV / RESIDUAL / INTRA streams.
  bool separate_hyper = false;
  GaussianTableBank bank;
  std::vector<CdfTable> mv_hyper_tables;
  std::vector<CdfTable> res_hyper_tables;
  std::array<uint8_t, 8> id{};
};

struct FrameCodingResult {
  size_t index = 0;
  FrameRole role = FrameRole::kIntra;
  FrameRecord record;
  torch::Tensor reconstruction;  // padded 1x3xHxW, as stored in the DFB
  double bits_mv = 0.0;          // 8 x MV payload bytes
  double bits_res = 0.0;         // 8 x RESIDUAL or INTRA payload bytes
  /// 8 x HYPER_* payload bytes when hyper packets are separate; otherwise
  /// the estimated hyper share already contained in bits_mv + bits_res.
  double bits_hyper = 0.0;
  double bits_estimated = 0.0;   // rate-model estimate of the whole frame
  double psnr = 0.0;
  double ms_ssim = 0.0;

  bool separate_hyper = false;

  /// Total payload bits of the frame.
  double bits() const { return bits_mv + bits_res + (separate_hyper ? bits_hyper : 0.0); }
};

/// Codes one predicted frame against dfb.latest() and pushes the
/// reconstruction into `dfb`. `current` is padded, 1x3xHxW.
FrameCodingResult encode_frame_p(CodecContext& ctx, const torch::Tensor& current, DecodedFrameBuffer& dfb);
/// Codes one intra frame (residual codec with zero prediction) and pushes
/// the reconstruction into `dfb`.
FrameCodingResult encode_frame_i(CodecContext& ctx, const torch::Tensor& current, DecodedFrameBuffer& dfb);

/// Decoder counterparts. They use only the packets and the model.
torch::Tensor decode_frame_p(CodecContext& ctx, const FrameRecord& record, int64_t height, int64_t width,
                             DecodedFrameBuffer& dfb);
torch::Tensor decode_frame_i(CodecContext& ctx, const FrameRecord& record, int64_t height, int64_t width,
                             DecodedFrameBuffer& dfb);

struct CodecOptions {
  int gop_size = 12;
  int jobs = 1;  // GOPs encoded concurrently
  bool frame_crc = true;
  bool compute_quality = true;
  bool separate_hyper = false;
};

struct EncodeOutput {
  VideoBitstream bitstream;
  std::vector<FrameCodingResult> frames;
  std::vector<Frame> reconstructions;  // unpadded

  double payload_bits() const;
  double estimated_bits() const;
  /// Payload bits / (frames x width x height).
  double bpp() const;
  /// Whole container size in bits / (frames x width x height).
  double bpp_container() const;
};

EncodeOutput encode_video(const RawVideo& video, CodecModel model, const CodecOptions& options = {});

struct DecodeOutput {
  RawVideo video;
  std::vector<uint32_t> crcs;
};

/// Throws DecodeError when the model id differs from the header (unless
/// `check_model_id` is false) or when a frame checksum does not match.
DecodeOutput decode_video(const VideoBitstream& bitstream, CodecModel model, bool check_model_id = true);

/// CRC-32 of a frame rounded to 8 bits (CHW byte order).
uint32_t frame_crc(const Frame& frame);

/// Versioned per-frame encode statistics.
std::string encode_stats_json(const EncodeOutput& out, const std::string& model_id_hex, int indent = 2);

}  // namespace flowcodec
