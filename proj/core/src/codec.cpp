#include "flowcodec/codec.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "flowcodec/errors.hpp"
#include "flowcodec/metrics.hpp"
#include "flowcodec/quantization.hpp"
#include "flowcodec/residual_pipeline.hpp"

namespace flowcodec {

DecodedFrameBuffer::DecodedFrameBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ArgumentError("decoded frame buffer capacity must be >= 1");
}

void DecodedFrameBuffer::push(torch::Tensor frame) {
  frames_.push_back(std::move(frame));
  while (frames_.size() > capacity_) frames_.pop_front();
}

const torch::Tensor& DecodedFrameBuffer::latest() const {
  if (frames_.empty()) throw ArgumentError("decoded frame buffer is empty; a P-frame needs a reference");
  return frames_.back();
}

CodecContext::CodecContext(CodecModel m, bool separate) : model(std::move(m)), separate_hyper(separate) {
  mv_hyper_tables = factorized_tables(*model->mv_hyper->prior);
  res_hyper_tables = factorized_tables(*model->res_hyper->prior);
  id = model_id(model);
}

namespace {

struct Shapes {
  std::vector<int64_t> latent;
  std::vector<int64_t> hyper;
};

int64_t half_up(int64_t v) { return (v + 1) / 2; }

Shapes branch_shapes(int64_t height, int64_t width, int latent_ch, int hyper_ch) {
  const int64_t h = height / kPadMultiple, w = width / kPadMultiple;
  return {{1, latent_ch, h, w}, {1, hyper_ch, half_up(half_up(h)), half_up(half_up(w))}};
}

struct CodedBranch {
  std::vector<uint8_t> bytes;        // latent stream (with hyper prefix unless separate)
  std::vector<uint8_t> hyper_bytes;  // separate hyper stream
  torch::Tensor latent;              // canonical dequantized latent
  double est_latent = 0.0;
  double est_hyper = 0.0;
};

// Codes one branch. The hyper-latent is canonicalized through its symbols
// before the Gaussian parameters are derived, exactly as the decoder does.
CodedBranch code_branch(CodecContext& ctx, HyperPriorImpl& hyper, const std::vector<CdfTable>& tables,
                        const BranchLatents& b) {
  CodedBranch out;
  const auto zsym = to_symbols(b.hyper);
  const auto zc = from_symbols(zsym, b.hyper.sizes());
  const auto params = hyper.decode(zc, {b.latent.size(2), b.latent.size(3)});
  const auto ysym = to_symbols(b.latent);
  out.latent = from_symbols(ysym, b.latent.sizes());

  RangeEncoder enc;
  if (ctx.separate_hyper) {
    RangeEncoder henc;
    encode_factorized(henc, zsym, zc.sizes(), tables);
    out.hyper_bytes = henc.finish();
  } else {
    encode_factorized(enc, zsym, zc.sizes(), tables);
  }
  encode_gaussian(enc, ysym, params, ctx.bank);
  out.bytes = enc.finish();
  out.est_latent = gaussian_bits(out.latent, params).sum().item<double>();
  out.est_hyper = hyper.prior->bits(zc).sum().item<double>();
  return out;
}

torch::Tensor decode_branch(CodecContext& ctx, HyperPriorImpl& hyper, const std::vector<CdfTable>& tables,
                            const std::vector<uint8_t>& bytes, const std::vector<uint8_t>* hyper_bytes,
                            const Shapes& shapes) {
  RangeDecoder dec(bytes);
  std::vector<int32_t> zsym;
  if (hyper_bytes != nullptr) {
    RangeDecoder hdec(*hyper_bytes);
    zsym = decode_factorized(hdec, shapes.hyper, tables);
  } else {
    zsym = decode_factorized(dec, shapes.hyper, tables);
  }
  const auto zc = from_symbols(zsym, shapes.hyper);
  const auto params = hyper.decode(zc, {shapes.latent[2], shapes.latent[3]});
  return from_symbols(decode_gaussian(dec, params, ctx.bank), shapes.latent);
}

void check_padded(const torch::Tensor& t) {
  if (t.dim() != 4 || t.size(0) != 1 || t.size(1) != 3 || t.size(2) % kPadMultiple != 0 ||
      t.size(3) % kPadMultiple != 0) {
    throw ShapeError("codec: frames must be 1x3xHxW with H and W multiples of 16");
  }
}

const Packet* find_packet(const FrameRecord& record, PacketKind kind) {
  for (const auto& p : record.packets) {
    if (p.kind == kind) return &p;
  }
  return nullptr;
}

}  // namespace

FrameCodingResult encode_frame_p(CodecContext& ctx, const torch::Tensor& current, DecodedFrameBuffer& dfb) {
  check_padded(current);
  torch::NoGradGuard no_grad;
  auto& model = ctx.model;
  const auto reference = dfb.latest();

  const auto motion = model->analyse_motion(current, reference, QuantMode::kRound);
  auto mv = code_branch(ctx, *model->mv_hyper, ctx.mv_hyper_tables, motion);
  const auto prediction = model->predict(reference, mv.latent);
  const auto residual = model->analyse_residual(compute_residual(current, prediction.predicted), QuantMode::kRound);
  auto res = code_branch(ctx, *model->res_hyper, ctx.res_hyper_tables, residual);

  FrameCodingResult r;
  r.role = FrameRole::kPredicted;
  r.separate_hyper = ctx.separate_hyper;
  r.reconstruction = model->reconstruct_p(reference, prediction, res.latent);
  r.bits_mv = 8.0 * static_cast<double>(mv.bytes.size());
  r.bits_res = 8.0 * static_cast<double>(res.bytes.size());
  if (ctx.separate_hyper) {
    r.bits_hyper = 8.0 * static_cast<double>(mv.hyper_bytes.size() + res.hyper_bytes.size());
    r.record.packets.push_back({PacketKind::kHyperMv, std::move(mv.hyper_bytes)});
    r.record.packets.push_back({PacketKind::kMv, std::move(mv.bytes)});
    r.record.packets.push_back({PacketKind::kHyperRes, std::move(res.hyper_bytes)});
    r.record.packets.push_back({PacketKind::kResidual, std::move(res.bytes)});
  } else {
    r.bits_hyper = mv.est_hyper + res.est_hyper;
    r.record.packets.push_back({PacketKind::kMv, std::move(mv.bytes)});
    r.record.packets.push_back({PacketKind::kResidual, std::move(res.bytes)});
  }
  r.bits_estimated = mv.est_latent + mv.est_hyper + res.est_latent + res.est_hyper;
  dfb.push(r.reconstruction);
  return r;
}

FrameCodingResult encode_frame_i(CodecContext& ctx, const torch::Tensor& current, DecodedFrameBuffer& dfb) {
  check_padded(current);
  torch::NoGradGuard no_grad;
  auto& model = ctx.model;
  const auto latents = model->analyse_residual(current, QuantMode::kRound);
  auto res = code_branch(ctx, *model->res_hyper, ctx.res_hyper_tables, latents);

  FrameCodingResult r;
  r.role = FrameRole::kIntra;
  r.separate_hyper = ctx.separate_hyper;
  r.reconstruction = model->reconstruct_i(res.latent);
  r.bits_res = 8.0 * static_cast<double>(res.bytes.size());
  if (ctx.separate_hyper) {
    r.bits_hyper = 8.0 * static_cast<double>(res.hyper_bytes.size());
    r.record.packets.push_back({PacketKind::kHyperRes, std::move(res.hyper_bytes)});
  } else {
    r.bits_hyper = res.est_hyper;
  }
  r.record.packets.push_back({PacketKind::kIntra, std::move(res.bytes)});
  r.bits_estimated = res.est_latent + res.est_hyper;
  dfb.push(r.reconstruction);
  return r;
}

torch::Tensor decode_frame_p(CodecContext& ctx, const FrameRecord& record, int64_t height, int64_t width,
                             DecodedFrameBuffer& dfb) {
  torch::NoGradGuard no_grad;
  auto& model = ctx.model;
  const auto& cfg = model->config();
  const auto* mv = find_packet(record, PacketKind::kMv);
  const auto* res = find_packet(record, PacketKind::kResidual);
  if (mv == nullptr || res == nullptr) throw DecodeError("P-frame record lacks MV or RESIDUAL packet");
  const auto* hmv = find_packet(record, PacketKind::kHyperMv);
  const auto* hres = find_packet(record, PacketKind::kHyperRes);
  const auto reference = dfb.latest();

  const auto mv_latent =
      decode_branch(ctx, *model->mv_hyper, ctx.mv_hyper_tables, mv->payload, hmv ? &hmv->payload : nullptr,
                    branch_shapes(height, width, cfg.mv_channels, cfg.mv_hyper_channels));
  const auto prediction = model->predict(reference, mv_latent);
  const auto res_latent =
      decode_branch(ctx, *model->res_hyper, ctx.res_hyper_tables, res->payload, hres ? &hres->payload : nullptr,
                    branch_shapes(height, width, cfg.res_channels, cfg.res_hyper_channels));
  auto recon = model->reconstruct_p(reference, prediction, res_latent);
  dfb.push(recon);
  return recon;
}

torch::Tensor decode_frame_i(CodecContext& ctx, const FrameRecord& record, int64_t height, int64_t width,
                             DecodedFrameBuffer& dfb) {
  torch::NoGradGuard no_grad;
  auto& model = ctx.model;
  const auto& cfg = model->config();
  const auto* intra = find_packet(record, PacketKind::kIntra);
  if (intra == nullptr) throw DecodeError("intra frame record lacks an INTRA packet");
  const auto* hres = find_packet(record, PacketKind::kHyperRes);
  const auto latent =
      decode_branch(ctx, *model->res_hyper, ctx.res_hyper_tables, intra->payload, hres ? &hres->payload : nullptr,
                    branch_shapes(height, width, cfg.res_channels, cfg.res_hyper_channels));
  auto recon = model->reconstruct_i(latent);
  dfb.push(recon);
  return recon;
}

uint32_t frame_crc(const Frame& frame) {
  auto bytes = torch::nan_to_num(frame.pixels(), 0.0, 1.0, 0.0)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .contiguous();
  return crc32_bytes({bytes.data_ptr<uint8_t>(), static_cast<size_t>(bytes.numel())});
}

namespace {

Frame crop_reconstruction(const torch::Tensor& recon, int64_t height, int64_t width) {
  auto t = torch::nan_to_num(recon[0], 0.0, 1.0, 0.0).slice(1, 0, height).slice(2, 0, width).contiguous();
  return Frame::from_clamped(t);
}

template <class Fn>
void run_parallel(size_t tasks, int jobs, Fn&& fn) {
  const size_t workers = std::min<size_t>(tasks, static_cast<size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (size_t i = next++; i < tasks; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

EncodeOutput encode_video(const RawVideo& video, CodecModel model, const CodecOptions& options) {
  video.validate();
  if (options.gop_size < 1 || options.gop_size > 255) throw ArgumentError("gop size must be in [1, 255]");
  if (video.width() > 65535 || video.height() > 65535) throw ArgumentError("frame dimensions exceed 65535");
  if (video.size() > 0xFFFFFFFFu) throw ArgumentError("too many frames");
  model->eval();
  const auto pad = padding_for(video.height(), video.width(), kPadMultiple);

  EncodeOutput out;
  auto& h = out.bitstream.header;
  h.flags = options.frame_crc ? kFlagFrameCrc : 0;
  h.width = static_cast<uint16_t>(video.width());
  h.height = static_cast<uint16_t>(video.height());
  h.pad_right = static_cast<uint8_t>(pad.right);
  h.pad_bottom = static_cast<uint8_t>(pad.bottom);
  h.gop_size = static_cast<uint8_t>(options.gop_size);
  h.n_frames = static_cast<uint32_t>(video.size());
  h.flow_scale = model->config().flow_scale;
  h.model_id = model_id(model);

  out.frames.resize(video.size());
  out.reconstructions.resize(video.size());
  const auto segments = segment_gops(video, options.gop_size);
  run_parallel(segments.size(), options.jobs, [&](size_t s) {
    torch::NoGradGuard no_grad;
    CodecContext ctx(model, options.separate_hyper);
    DecodedFrameBuffer dfb;
    const auto& seg = segments[s];
    for (size_t k = 0; k < seg.size(); ++k) {
      const size_t idx = seg.first_frame + k;
      const auto& source = video.frames[idx];
      const auto current = pad_frame(source, pad).batch();
      auto r = seg.structure.frame_roles[k] == FrameRole::kIntra ? encode_frame_i(ctx, current, dfb)
                                                                  : encode_frame_p(ctx, current, dfb);
      r.index = idx;
      auto recon = crop_reconstruction(r.reconstruction, video.height(), video.width());
      if (options.frame_crc) r.record.crc = frame_crc(recon);
      if (options.compute_quality) {
        r.psnr = psnr(source, recon);
        r.ms_ssim = ms_ssim(source.quantized_8bit(), recon.quantized_8bit());
      }
      out.reconstructions[idx] = std::move(recon);
      out.frames[idx] = std::move(r);
    }
  });
  for (const auto& f : out.frames) out.bitstream.frames.push_back(f.record);
  return out;
}

double EncodeOutput::payload_bits() const {
  double bits = 0.0;
  for (const auto& f : frames) bits += f.bits();
  return bits;
}

double EncodeOutput::estimated_bits() const {
  double bits = 0.0;
  for (const auto& f : frames) bits += f.bits_estimated;
  return bits;
}

double EncodeOutput::bpp() const {
  const auto& h = bitstream.header;
  return payload_bits() / (static_cast<double>(h.n_frames) * h.width * h.height);
}

double EncodeOutput::bpp_container() const {
  const auto& h = bitstream.header;
  size_t bytes = container_overhead_bytes(bitstream);
  for (const auto& f : bitstream.frames) {
    for (const auto& p : f.packets) bytes += p.payload.size();
  }
  return 8.0 * static_cast<double>(bytes) / (static_cast<double>(h.n_frames) * h.width * h.height);
}

DecodeOutput decode_video(const VideoBitstream& bs, CodecModel model, bool check_model_id) {
  const auto& h = bs.header;
  if (h.version != kBitstreamVersion) throw DecodeError("unsupported bitstream version");
  if (bs.frames.size() != h.n_frames) throw DecodeError("frame count does not match the header");
  if (h.pad_right >= kPadMultiple || h.pad_bottom >= kPadMultiple ||
      (h.width + h.pad_right) % kPadMultiple != 0 || (h.height + h.pad_bottom) % kPadMultiple != 0) {
    throw DecodeError("header padding is inconsistent with the frame size");
  }
  if (h.flow_scale != model->config().flow_scale) {
    throw DecodeError("header flow scale does not match the model configuration");
  }
  model->eval();
  torch::NoGradGuard no_grad;
  CodecContext ctx(model);
  if (check_model_id && ctx.id != h.model_id) {
    throw DecodeError("model id mismatch: bitstream " + hex(h.model_id) + ", checkpoint " + hex(ctx.id));
  }
  const int64_t ph = h.height + h.pad_bottom, pw = h.width + h.pad_right;

  DecodeOutput out;
  DecodedFrameBuffer dfb;
  for (const auto& seg : segment_gops(h.n_frames, h.gop_size)) {
    dfb.clear();
    for (size_t k = 0; k < seg.size(); ++k) {
      const size_t idx = seg.first_frame + k;
      const auto& record = bs.frames[idx];
      const bool intra = seg.structure.frame_roles[k] == FrameRole::kIntra;
      if (record.packets.empty()) throw DecodeError("frame " + std::to_string(idx) + " has no packets");
      if (intra != (record.packets.back().kind == PacketKind::kIntra)) {
        throw DecodeError("frame " + std::to_string(idx) + ": packet type does not match the GOP structure");
      }
      const auto recon = intra ? decode_frame_i(ctx, record, ph, pw, dfb) : decode_frame_p(ctx, record, ph, pw, dfb);
      auto frame = crop_reconstruction(recon, h.height, h.width);
      const uint32_t crc = frame_crc(frame);
      if (h.has_crc() && crc != record.crc) {
        throw DecodeError("frame " + std::to_string(idx) +
                          ": reconstruction checksum mismatch (corrupt bitstream or decoder desync)");
      }
      out.crcs.push_back(crc);
      out.video.frames.push_back(std::move(frame));
    }
  }
  return out;
}

std::string encode_stats_json(const EncodeOutput& out, const std::string& model_id_hex, int indent) {
  using nlohmann::json;
  const auto& h = out.bitstream.header;
  json j;
  j["schema"] = "flowcodec.encode_stats";
  j["version"] = 1;
  j["width"] = h.width;
  j["height"] = h.height;
  j["n_frames"] = h.n_frames;
  j["gop_size"] = h.gop_size;
  j["model_id"] = model_id_hex;
  j["payload_bits"] = out.payload_bits();
  j["estimated_bits"] = out.estimated_bits();
  j["container_bytes"] = pack_bitstream(out.bitstream).size();
  j["overhead_bytes"] = container_overhead_bytes(out.bitstream);
  j["bpp"] = out.bpp();
  j["bpp_container"] = out.bpp_container();
  double psnr_sum = 0.0, ssim_sum = 0.0;
  size_t intra = 0;
  j["frames"] = json::array();
  for (const auto& f : out.frames) {
    psnr_sum += f.psnr;
    ssim_sum += f.ms_ssim;
    if (f.role == FrameRole::kIntra) ++intra;
    json packets = json::array();
    for (const auto& p : f.record.packets) packets.push_back({{"kind", to_string(p.kind)}, {"bytes", p.payload.size()}});
    j["frames"].push_back({{"index", f.index},
                           {"type", f.role == FrameRole::kIntra ? "I" : "P"},
                           {"bits_mv", f.bits_mv},
                           {"bits_res", f.bits_res},
                           {"bits_hyper", f.bits_hyper},
                           {"bits_total", f.bits()},
                           {"bits_estimated", f.bits_estimated},
                           {"psnr", f.psnr},
                           {"ms_ssim", f.ms_ssim},
                           {"crc32", f.record.crc},
                           {"packets", packets}});
  }
  const double n = std::max<double>(1.0, static_cast<double>(out.frames.size()));
  j["psnr"] = psnr_sum / n;
  j["ms_ssim"] = ssim_sum / n;
  j["intra_frames"] = intra;
  return j.dump(indent);
}

}  // namespace flowcodec
