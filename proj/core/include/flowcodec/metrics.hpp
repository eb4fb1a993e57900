#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "flowcodec/video_io.hpp"

namespace flowcodec {

/// Reported for identical frames instead of +inf.
inline constexpr double kPsnrSentinel = 99.0;

/// PSNR in dB after rounding both frames to the 8-bit grid.
double psnr(const Frame& a, const Frame& b);
/// PSNR of a mean squared error on [0, 1] data; the sentinel when mse == 0.
double psnr_from_mse(double mse);

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Number of scales used for an image whose smaller side is `min_side`:
/// the largest count (at most 5) whose coarsest level still fits the window.
int ms_ssim_scales(int64_t min_side);

/// Differentiable MS-SSIM of NxCxHxW tensors in [0, 1], averaged over
/// channels; returns a length-N tensor. With fewer than 5 scales the leading
/// weights are renormalized to sum to one. Negative per-scale terms are
/// clamped to a tiny positive value.
torch::Tensor ms_ssim(const torch::Tensor& a, const torch::Tensor& b);
double ms_ssim(const Frame& a, const Frame& b);

enum class QualityKind { kPsnrDb, kMsSsim };
std::string to_string(QualityKind kind);

struct RdPoint {
  double bpp = 0.0;
  double quality = 0.0;
  QualityKind kind = QualityKind::kPsnrDb;
};

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;  // strictly increasing bpp

  /// Sorts by bpp and validates; throws ArgumentError on fewer than 2 points,
  /// repeated bpp, mixed kinds or non-finite values.
  static RdCurve make(std::string label, std::vector<RdPoint> points);
  /// Indices i where quality drops from point i to i + 1.
  std::vector<size_t> non_monotone_steps() const;
};

/// Reads "bpp,psnr" or "bpp,ms_ssim" CSV (header required, '#' comments).
/// Errors name the offending line.
RdCurve read_rd_csv(const std::string& path);
RdCurve parse_rd_csv(const std::string& text, const std::string& label);
std::string format_rd_csv(const RdCurve& curve);

enum class PsnrAveraging { kMeanOfDb, kDbOfMeanMse };

struct FrameMetrics {
  size_t index = 0;
  double mse = 0.0;
  double psnr = 0.0;
  double ms_ssim = 0.0;
  double bits = 0.0;
};

struct SequenceMetrics {
  RdPoint psnr;
  RdPoint ms_ssim;
  std::vector<FrameMetrics> frames;
};

/// Averages per-frame metrics over the sequence; bpp = total_bits / (n W H).
/// `frame_bits` (optional) fills the per-frame bits column.
SequenceMetrics sequence_metrics(const RawVideo& original, const RawVideo& reconstructed, double total_bits,
                                 PsnrAveraging averaging = PsnrAveraging::kMeanOfDb,
                                 const std::vector<double>& frame_bits = {});

std::string format_frame_table_csv(const SequenceMetrics& m);
std::string sequence_metrics_json(const SequenceMetrics& m, int indent = 2);

struct BdbrReport {
  double percent = 0.0;  // negative = test saves rate
  double quality_low = 0.0;
  double quality_high = 0.0;
  std::array<double, 4> anchor_fit{};  // log10(rate) = c0 + c1 q + c2 q^2 + c3 q^3
  std::array<double, 4> test_fit{};
};

/// Bjontegaard delta rate: cubic fits of log10(bpp) against quality,
/// integrated over the overlapping quality interval. Needs >= 4 points per
/// curve; throws ArgumentError otherwise or when the ranges do not overlap.
BdbrReport bdbr(const RdCurve& anchor, const RdCurve& test);
std::string bdbr_json(const BdbrReport& r, const RdCurve& anchor, const RdCurve& test, int indent = 2);
/// "-10.00%" style formatting used by the CLI.
std::string format_percent(double percent);

}  // namespace flowcodec
