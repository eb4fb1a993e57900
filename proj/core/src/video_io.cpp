#include "flowcodec/video_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "flowcodec/errors.hpp"

namespace flowcodec {

namespace {

torch::Tensor as_chw(torch::Tensor pixels) {
  if (pixels.dim() == 4 && pixels.size(0) == 1) pixels = pixels.squeeze(0);
  if (pixels.dim() != 3 || pixels.size(0) != 3 || pixels.size(1) <= 0 || pixels.size(2) <= 0) {
    std::ostringstream msg;
    msg << "frame tensor must be 3xHxW, got " << pixels.sizes();
    throw ShapeError(msg.str());
  }
  return pixels.to(torch::kFloat32).contiguous();
}

uint8_t to_u8(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// 53-bit uniform in [0, 1) straight from the engine, so sequences do not
// depend on the standard library's distribution implementations.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

Frame::Frame(torch::Tensor pixels) : pixels_(as_chw(std::move(pixels))) {
  if (!torch::isfinite(pixels_).all().item<bool>()) {
    throw ArgumentError("frame contains non-finite values");
  }
  if (pixels_.min().item<float>() < 0.0f || pixels_.max().item<float>() > 1.0f) {
    throw ArgumentError("frame values must lie in [0, 1]");
  }
}

Frame Frame::zeros(int64_t height, int64_t width) {
  if (height <= 0 || width <= 0) throw ArgumentError("frame dimensions must be positive");
  return Frame(torch::zeros({3, height, width}));
}

Frame Frame::from_clamped(const torch::Tensor& pixels) {
  auto chw = as_chw(pixels.detach());
  return Frame(torch::nan_to_num(chw, 0.0).clamp(0.0, 1.0));
}

float Frame::at(int64_t channel, int64_t y, int64_t x) const {
  return pixels_.accessor<float, 3>()[channel][y][x];
}

Frame Frame::quantized_8bit() const {
  return Frame((pixels_ * 255.0f).round() / 255.0f);
}

bool Frame::bit_equal(const Frame& other) const {
  if (empty() || other.empty()) return empty() == other.empty();
  return pixels_.sizes() == other.pixels_.sizes() && torch::equal(pixels_, other.pixels_);
}

void RawVideo::validate() const {
  if (frames.empty()) throw ArgumentError("video has no frames");
  for (size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].height() != frames[0].height() || frames[i].width() != frames[0].width()) {
      std::ostringstream msg;
      msg << "frame " << i << " is " << frames[i].width() << "x" << frames[i].height()
          << ", expected " << frames[0].width() << "x" << frames[0].height();
      throw ShapeError(msg.str());
    }
  }
}

std::vector<GopSegment> segment_gops(size_t frame_count, int gop_size) {
  if (gop_size < 1) throw ArgumentError("gop_size must be >= 1");
  std::vector<GopSegment> segments;
  for (size_t start = 0; start < frame_count; start += static_cast<size_t>(gop_size)) {
    GopSegment seg;
    seg.first_frame = start;
    seg.structure.gop_size = gop_size;
    const size_t len = std::min(static_cast<size_t>(gop_size), frame_count - start);
    seg.structure.frame_roles.assign(len, FrameRole::kPredicted);
    seg.structure.frame_roles[0] = FrameRole::kIntra;
    segments.push_back(std::move(seg));
  }
  return segments;
}

std::vector<GopSegment> segment_gops(const RawVideo& video, int gop_size) {
  return segment_gops(video.size(), gop_size);
}

std::array<float, 3> yuv_to_rgb(uint8_t y, uint8_t u, uint8_t v, YuvRange range) {
  const double cb = static_cast<double>(u) - 128.0;
  const double cr = static_cast<double>(v) - 128.0;
  double r, g, b;
  if (range == YuvRange::kFull) {
    const double luma = y;
    r = luma + 1.402 * cr;
    g = luma - 0.344136 * cb - 0.714136 * cr;
    b = luma + 1.772 * cb;
  } else {
    const double luma = 1.164383 * (static_cast<double>(y) - 16.0);
    r = luma + 1.596027 * cr;
    g = luma - 0.391762 * cb - 0.812968 * cr;
    b = luma + 2.017232 * cb;
  }
  auto norm = [](double c) { return static_cast<float>(std::clamp(c / 255.0, 0.0, 1.0)); };
  return {norm(r), norm(g), norm(b)};
}

std::array<uint8_t, 3> rgb_to_yuv(float r, float g, float b, YuvRange range) {
  const double rd = r, gd = g, bd = b;
  if (range == YuvRange::kFull) {
    return {to_u8(255.0 * (0.299 * rd + 0.587 * gd + 0.114 * bd)),
            to_u8(128.0 + 255.0 * (-0.168736 * rd - 0.331264 * gd + 0.5 * bd)),
            to_u8(128.0 + 255.0 * (0.5 * rd - 0.418688 * gd - 0.081312 * bd))};
  }
  return {to_u8(16.0 + 65.481 * rd + 128.553 * gd + 24.966 * bd),
          to_u8(128.0 - 37.797 * rd - 74.203 * gd + 112.0 * bd),
          to_u8(128.0 + 112.0 * rd - 93.786 * gd - 18.214 * bd)};
}

RawVideo read_yuv420(const std::filesystem::path& path, int width, int height,
                     std::optional<int> max_frames, YuvRange range) {
  if (width <= 0 || height <= 0) throw ArgumentError("YUV dimensions must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const size_t cw = (static_cast<size_t>(width) + 1) / 2;
  const size_t ch = (static_cast<size_t>(height) + 1) / 2;
  const size_t luma_bytes = static_cast<size_t>(width) * static_cast<size_t>(height);
  const size_t frame_bytes = luma_bytes + 2 * cw * ch;
  if (bytes.empty()) throw DecodeError(path.string() + ": empty file");
  if (bytes.size() % frame_bytes != 0) {
    const size_t frame = bytes.size() / frame_bytes;
    std::ostringstream msg;
    msg << path.string() << ": truncated at frame " << frame << " (byte offset "
        << frame * frame_bytes << ", " << bytes.size() - frame * frame_bytes << " of "
        << frame_bytes << " bytes present)";
    throw DecodeError(msg.str());
  }
  size_t count = bytes.size() / frame_bytes;
  if (max_frames) count = std::min(count, static_cast<size_t>(std::max(*max_frames, 0)));

  RawVideo video;
  for (size_t f = 0; f < count; ++f) {
    const uint8_t* yp = bytes.data() + f * frame_bytes;
    const uint8_t* up = yp + luma_bytes;
    const uint8_t* vp = up + cw * ch;
    auto rgb = torch::empty({3, height, width});
    auto acc = rgb.accessor<float, 3>();
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const size_t ci = static_cast<size_t>(y / 2) * cw + static_cast<size_t>(x / 2);
        const auto px = yuv_to_rgb(yp[static_cast<size_t>(y) * width + x], up[ci], vp[ci], range);
        for (int c = 0; c < 3; ++c) acc[c][y][x] = px[c];
      }
    }
    video.frames.emplace_back(rgb);
  }
  return video;
}

void write_yuv420(const RawVideo& video, const std::filesystem::path& path, YuvRange range) {
  video.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const int64_t h = video.height(), w = video.width();
  const int64_t cw = (w + 1) / 2, ch = (h + 1) / 2;
  std::vector<uint8_t> luma(static_cast<size_t>(w * h)), cb(static_cast<size_t>(cw * ch)),
      cr(static_cast<size_t>(cw * ch));
  for (const auto& frame : video.frames) {
    auto acc = frame.pixels().accessor<float, 3>();
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        luma[static_cast<size_t>(y * w + x)] = rgb_to_yuv(acc[0][y][x], acc[1][y][x], acc[2][y][x], range)[0];
    for (int64_t cy = 0; cy < ch; ++cy) {
      for (int64_t cx = 0; cx < cw; ++cx) {
        float sum[3] = {0, 0, 0};
        int n = 0;
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            const int64_t y = 2 * cy + dy, x = 2 * cx + dx;
            if (y >= h || x >= w) continue;
            for (int c = 0; c < 3; ++c) sum[c] += acc[c][y][x];
            ++n;
          }
        const auto yuv = rgb_to_yuv(sum[0] / n, sum[1] / n, sum[2] / n, range);
        cb[static_cast<size_t>(cy * cw + cx)] = yuv[1];
        cr[static_cast<size_t>(cy * cw + cx)] = yuv[2];
      }
    }
    out.write(reinterpret_cast<const char*>(luma.data()), static_cast<std::streamsize>(luma.size()));
    out.write(reinterpret_cast<const char*>(cb.data()), static_cast<std::streamsize>(cb.size()));
    out.write(reinterpret_cast<const char*>(cr.data()), static_cast<std::streamsize>(cr.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  std::string upper;
  for (char c : name) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (upper == "MOVING_SQUARE") return SyntheticKind::kMovingSquare;
  if (upper == "TRANSLATING_TEXTURE") return SyntheticKind::kTranslatingTexture;
  throw ArgumentError("unknown synthetic kind '" + name +
                      "' (expected MOVING_SQUARE or TRANSLATING_TEXTURE)");
}

std::string to_string(SyntheticKind kind) {
  return kind == SyntheticKind::kMovingSquare ? "MOVING_SQUARE" : "TRANSLATING_TEXTURE";
}

namespace {

// Length of [a0, a1) ∩ [b0, b1).
double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

RawVideo moving_square(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const int s = spec.size;
  double bg[3], fg[3];
  for (int c = 0; c < 3; ++c) bg[c] = 0.05 + 0.15 * uniform01(rng);
  for (int c = 0; c < 3; ++c) fg[c] = 0.7 + 0.25 * uniform01(rng);
  const double side = s / 4;
  const double x0 = s / 4, y0 = s / 4;

  RawVideo video;
  for (int k = 0; k < spec.n_frames; ++k) {
    const double left = x0 + spec.velocity_x * k, top = y0 + spec.velocity_y * k;
    auto img = torch::empty({3, s, s});
    auto acc = img.accessor<float, 3>();
    for (int y = 0; y < s; ++y) {
      const double cy = overlap(y, y + 1, top, top + side);
      for (int x = 0; x < s; ++x) {
        const double cover = cy * overlap(x, x + 1, left, left + side);
        for (int c = 0; c < 3; ++c) acc[c][y][x] = static_cast<float>(bg[c] + (fg[c] - bg[c]) * cover);
      }
    }
    video.frames.emplace_back(img);
  }
  return video;
}

RawVideo translating_texture(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const int s = spec.size;
  std::vector<double> tex(static_cast<size_t>(3 * s * s));
  for (auto& v : tex) v = uniform01(rng);
  auto idx = [s](int c, int y, int x) {
    const int yy = ((y % s) + s) % s, xx = ((x % s) + s) % s;
    return static_cast<size_t>((c * s + yy) * s + xx);
  };
  // Two periodic 3x3 box blurs give texture with structure at a few pixels.
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> blurred(tex.size());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          double sum = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) sum += tex[idx(c, y + dy, x + dx)];
          blurred[idx(c, y, x)] = sum / 9.0;
        }
    tex.swap(blurred);
  }
  const auto [lo, hi] = std::minmax_element(tex.begin(), tex.end());
  const double lo_v = *lo, span = std::max(*hi - *lo, 1e-9);
  for (auto& v : tex) v = 0.1 + 0.8 * (v - lo_v) / span;

  RawVideo video;
  for (int k = 0; k < spec.n_frames; ++k) {
    const double sx = spec.velocity_x * k, sy = spec.velocity_y * k;
    auto img = torch::empty({3, s, s});
    auto acc = img.accessor<float, 3>();
    for (int y = 0; y < s; ++y) {
      const double py = y - sy;
      const double fy = std::floor(py);
      const double wy = py - fy;
      for (int x = 0; x < s; ++x) {
        const double px = x - sx;
        const double fx = std::floor(px);
        const double wx = px - fx;
        const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
        for (int c = 0; c < 3; ++c) {
          const double v = (1 - wy) * ((1 - wx) * tex[idx(c, iy, ix)] + wx * tex[idx(c, iy, ix + 1)]) +
                           wy * ((1 - wx) * tex[idx(c, iy + 1, ix)] + wx * tex[idx(c, iy + 1, ix + 1)]);
          acc[c][y][x] = static_cast<float>(v);
        }
      }
    }
    video.frames.emplace_back(img);
  }
  return video;
}

}  // namespace

RawVideo make_synthetic_sequence(const SyntheticSpec& spec) {
  if (spec.n_frames < 1) throw ArgumentError("synthetic sequence needs at least one frame");
  if (spec.size <= 0 || spec.size % 16 != 0) {
    throw ArgumentError("synthetic frame size must be a positive multiple of 16");
  }
  std::mt19937_64 rng(spec.seed);
  return spec.kind == SyntheticKind::kMovingSquare ? moving_square(spec, rng)
                                                   : translating_texture(spec, rng);
}

torch::Tensor synthetic_backward_flow(const SyntheticSpec& spec) {
  auto flow = torch::empty({2, spec.size, spec.size});
  flow[0].fill_(-spec.velocity_x);
  flow[1].fill_(-spec.velocity_y);
  return flow;
}

Padding padding_for(int64_t height, int64_t width, int multiple) {
  auto up = [multiple](int64_t v) { return static_cast<int>((multiple - v % multiple) % multiple); };
  return {up(width), up(height)};
}

Frame pad_frame(const Frame& frame, Padding padding) {
  if (padding.right == 0 && padding.bottom == 0) return frame;
  namespace F = torch::nn::functional;
  const bool reflect_ok = padding.right < frame.width() && padding.bottom < frame.height();
  auto opts = F::PadFuncOptions({0, padding.right, 0, padding.bottom});
  if (reflect_ok) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return Frame(F::pad(frame.batch(), opts).squeeze(0));
}

Frame crop_frame(const Frame& frame, int64_t height, int64_t width) {
  if (height > frame.height() || width > frame.width()) throw ShapeError("crop larger than frame");
  return Frame(frame.pixels().slice(1, 0, height).slice(2, 0, width).contiguous());
}

}  // namespace flowcodec
