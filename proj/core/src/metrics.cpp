#include "flowcodec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "flowcodec/errors.hpp"

namespace flowcodec {

namespace F = torch::nn::functional;

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr double kTermFloor = 1e-10;

void check_same_size(const Frame& a, const Frame& b, const char* what) {
  if (a.empty() || b.empty() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": frame sizes differ");
  }
}

torch::Tensor gaussian_window(int64_t channels, const torch::TensorOptions& opts) {
  auto x = torch::arange(kSsimWindow, torch::kFloat64) - (kSsimWindow - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2 * kSsimSigma * kSsimSigma));
  g = g / g.sum();
  auto w = torch::outer(g, g).to(opts.dtype());
  return w.view({1, 1, kSsimWindow, kSsimWindow}).repeat({channels, 1, 1, 1});
}

}  // namespace

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

namespace {

// MSE on the [0, 1] scale, computed from integer 8-bit levels in double.
double mse_8bit(const Frame& a, const Frame& b) {
  auto la = (a.pixels() * 255.0f).round().to(torch::kFloat64);
  auto lb = (b.pixels() * 255.0f).round().to(torch::kFloat64);
  return (la - lb).pow(2).mean().item<double>() / (255.0 * 255.0);
}

}  // namespace

double psnr(const Frame& a, const Frame& b) {
  check_same_size(a, b, "psnr");
  return psnr_from_mse(mse_8bit(a, b));
}

int ms_ssim_scales(int64_t min_side) {
  int scales = 0;
  while (scales < static_cast<int>(kMsSsimWeights.size()) && (min_side >> scales) >= kSsimWindow) ++scales;
  return scales;
}

torch::Tensor ms_ssim(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 4 || a.sizes() != b.sizes()) throw ShapeError("ms_ssim: inputs must be equal-sized NxCxHxW");
  const int scales = ms_ssim_scales(std::min(a.size(2), a.size(3)));
  if (scales == 0) throw ShapeError("ms_ssim: frames smaller than the 11x11 window");
  const int64_t channels = a.size(1);
  const auto window = gaussian_window(channels, a.options());
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kMsSsimWeights[static_cast<size_t>(s)];

  auto blur = [&](const torch::Tensor& t) { return F::conv2d(t, window, F::Conv2dFuncOptions().groups(channels)); };
  auto x = a;
  auto y = b;
  torch::Tensor result;
  for (int s = 0; s < scales; ++s) {
    auto mx = blur(x), my = blur(y);
    auto sxx = blur(x * x) - mx * mx;
    auto syy = blur(y * y) - my * my;
    auto sxy = blur(x * y) - mx * my;
    auto cs = ((2 * sxy + kC2) / (sxx + syy + kC2)).mean({2, 3});
    torch::Tensor term = cs;
    if (s == scales - 1) {
      auto lum = (2 * mx * my + kC1) / (mx * mx + my * my + kC1);
      term = (lum * (2 * sxy + kC2) / (sxx + syy + kC2)).mean({2, 3});
    }
    const double w = kMsSsimWeights[static_cast<size_t>(s)] / weight_sum;
    auto factor = torch::pow(torch::clamp_min(term, kTermFloor), w);
    result = result.defined() ? result * factor : factor;
    if (s + 1 < scales) {
      x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2).stride(2));
      y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2).stride(2));
    }
  }
  return result.mean(1);
}

double ms_ssim(const Frame& a, const Frame& b) {
  check_same_size(a, b, "ms_ssim");
  if (a.bit_equal(b)) return 1.0;
  torch::NoGradGuard no_grad;
  return ms_ssim(a.batch().to(torch::kFloat64), b.batch().to(torch::kFloat64)).item<double>();
}

std::string to_string(QualityKind kind) { return kind == QualityKind::kPsnrDb ? "psnr" : "ms_ssim"; }

RdCurve RdCurve::make(std::string label, std::vector<RdPoint> points) {
  if (points.size() < 2) throw ArgumentError("rd curve '" + label + "' needs at least 2 points");
  for (const auto& p : points) {
    if (!std::isfinite(p.bpp) || !std::isfinite(p.quality) || p.bpp < 0) {
      throw ArgumentError("rd curve '" + label + "' has a non-finite or negative value");
    }
    if (p.kind != points.front().kind) throw ArgumentError("rd curve '" + label + "' mixes quality kinds");
  }
  std::sort(points.begin(), points.end(), [](const RdPoint& x, const RdPoint& y) { return x.bpp < y.bpp; });
  for (size_t i = 1; i < points.size(); ++i) {
    if (points[i].bpp <= points[i - 1].bpp) throw ArgumentError("rd curve '" + label + "' repeats a bpp value");
  }
  return {std::move(label), std::move(points)};
}

std::vector<size_t> RdCurve::non_monotone_steps() const {
  std::vector<size_t> out;
  for (size_t i = 0; i + 1 < points.size(); ++i) {
    if (points[i + 1].quality < points[i].quality) out.push_back(i);
  }
  return out;
}

RdCurve parse_rd_csv(const std::string& text, const std::string& label) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  std::optional<QualityKind> kind;
  std::vector<RdPoint> points;
  auto fail = [&](const std::string& msg) -> void {
    throw ArgumentError(label + ":" + std::to_string(number) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line.erase(std::remove_if(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; }),
               line.end());
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      fail("expected two comma-separated columns");
    }
    const auto first = line.substr(0, comma), second = line.substr(comma + 1);
    if (!kind) {
      if (first != "bpp" || (second != "psnr" && second != "ms_ssim")) {
        fail("header must be 'bpp,psnr' or 'bpp,ms_ssim'");
      }
      kind = second == "psnr" ? QualityKind::kPsnrDb : QualityKind::kMsSsim;
      continue;
    }
    RdPoint p;
    p.kind = *kind;
    try {
      size_t used = 0;
      p.bpp = std::stod(first, &used);
      if (used != first.size()) fail("malformed number '" + first + "'");
      p.quality = std::stod(second, &used);
      if (used != second.size()) fail("malformed number '" + second + "'");
    } catch (const std::logic_error&) {
      fail("malformed number in '" + line + "'");
    }
    points.push_back(p);
  }
  if (!kind) throw ArgumentError(label + ": empty RD curve file");
  return RdCurve::make(label, std::move(points));
}

RdCurve read_rd_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open RD curve " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_rd_csv(text.str(), path);
}

std::string format_rd_csv(const RdCurve& curve) {
  std::ostringstream out;
  out << "bpp," << (curve.points.empty() ? "psnr" : to_string(curve.points.front().kind)) << "\n";
  out << std::setprecision(10);
  for (const auto& p : curve.points) out << p.bpp << "," << p.quality << "\n";
  return out.str();
}

SequenceMetrics sequence_metrics(const RawVideo& original, const RawVideo& reconstructed, double total_bits,
                                 PsnrAveraging averaging, const std::vector<double>& frame_bits) {
  original.validate();
  reconstructed.validate();
  if (original.size() != reconstructed.size()) throw ShapeError("sequence_metrics: frame counts differ");
  if (original.height() != reconstructed.height() || original.width() != reconstructed.width()) {
    throw ShapeError("sequence_metrics: frame sizes differ");
  }
  if (!frame_bits.empty() && frame_bits.size() != original.size()) {
    throw ArgumentError("sequence_metrics: one bits entry per frame expected");
  }
  SequenceMetrics m;
  double psnr_sum = 0.0, mse_sum = 0.0, ssim_sum = 0.0;
  for (size_t i = 0; i < original.size(); ++i) {
    const auto a = original.frames[i].quantized_8bit();
    const auto b = reconstructed.frames[i].quantized_8bit();
    FrameMetrics f;
    f.index = i;
    f.mse = mse_8bit(a, b);
    f.psnr = psnr_from_mse(f.mse);
    f.ms_ssim = ms_ssim(a, b);
    f.bits = frame_bits.empty() ? 0.0 : frame_bits[i];
    psnr_sum += f.psnr;
    mse_sum += f.mse;
    ssim_sum += f.ms_ssim;
    m.frames.push_back(f);
  }
  const double n = static_cast<double>(original.size());
  const double bpp = total_bits / (n * static_cast<double>(original.width() * original.height()));
  const double seq_psnr = averaging == PsnrAveraging::kMeanOfDb ? psnr_sum / n : psnr_from_mse(mse_sum / n);
  m.psnr = {bpp, seq_psnr, QualityKind::kPsnrDb};
  m.ms_ssim = {bpp, ssim_sum / n, QualityKind::kMsSsim};
  return m;
}

std::string format_frame_table_csv(const SequenceMetrics& m) {
  std::ostringstream out;
  out << "index,bits,mse,psnr,ms_ssim\n" << std::setprecision(10);
  for (const auto& f : m.frames) out << f.index << "," << f.bits << "," << f.mse << "," << f.psnr << "," << f.ms_ssim << "\n";
  return out.str();
}

std::string sequence_metrics_json(const SequenceMetrics& m, int indent) {
  nlohmann::json j;
  j["schema"] = "flowcodec.eval";
  j["version"] = 1;
  j["bpp"] = m.psnr.bpp;
  j["psnr"] = m.psnr.quality;
  j["ms_ssim"] = m.ms_ssim.quality;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : m.frames) {
    j["frames"].push_back({{"index", f.index}, {"bits", f.bits}, {"mse", f.mse}, {"psnr", f.psnr}, {"ms_ssim", f.ms_ssim}});
  }
  return j.dump(indent);
}

}  // namespace flowcodec
