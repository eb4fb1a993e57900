// flowcodec command line: train, encode, decode, eval, bdrate, synth.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "flowcodec/bitstream.hpp"
#include "flowcodec/codec.hpp"
#include "flowcodec/errors.hpp"
#include "flowcodec/metrics.hpp"
#include "flowcodec/model.hpp"
#include "flowcodec/training.hpp"
#include "flowcodec/video_io.hpp"

namespace fs = std::filesystem;
using namespace flowcodec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;

struct VideoArgs {
  std::string path;
  std::string format = "auto";  // auto | png | yuv
  int width = 0;
  int height = 0;
  std::string yuv_range = "full";
  int max_frames = 0;
};

void add_video_options(CLI::App* cmd, VideoArgs& v, const std::string& flag, const std::string& what) {
  cmd->add_option(flag, v.path, what)->required();
  cmd->add_option("--format", v.format, "Input format: auto, png (directory of frames) or yuv (8-bit 4:2:0)")
      ->check(CLI::IsMember({"auto", "png", "yuv"}));
  cmd->add_option("--width", v.width, "Frame width (yuv input)");
  cmd->add_option("--height", v.height, "Frame height (yuv input)");
  cmd->add_option("--yuv-range", v.yuv_range, "YUV sample range: full or limited")
      ->check(CLI::IsMember({"full", "limited"}));
  cmd->add_option("--max-frames", v.max_frames, "Read at most this many frames (0 = all)");
}

YuvRange yuv_range(const std::string& s) { return s == "limited" ? YuvRange::kLimited : YuvRange::kFull; }

bool is_yuv(const std::string& path, const std::string& format) {
  if (format == "yuv") return true;
  if (format == "png") return false;
  return fs::path(path).extension() == ".yuv";
}

RawVideo load_video(const VideoArgs& v) {
  if (is_yuv(v.path, v.format)) {
    if (v.width <= 0 || v.height <= 0) throw ArgumentError("yuv input needs --width and --height");
    std::optional<int> max;
    if (v.max_frames > 0) max = v.max_frames;
    return read_yuv420(v.path, v.width, v.height, max, yuv_range(v.yuv_range));
  }
  auto video = read_png_dir(v.path);
  if (v.max_frames > 0 && video.frames.size() > static_cast<size_t>(v.max_frames)) {
    video.frames.resize(static_cast<size_t>(v.max_frames));
  }
  return video;
}

void save_video(const RawVideo& video, const std::string& path, const std::string& format, YuvRange range) {
  if (is_yuv(path, format)) {
    write_yuv420(video, path, range);
  } else {
    write_png_dir(video, path);
  }
}

// Relative checkpoint paths that do not exist locally are looked up in
// $FLOWCODEC_CACHE.
std::string resolve_checkpoint(const std::string& path) {
  if (fs::exists(path)) return path;
  if (const char* cache = std::getenv("FLOWCODEC_CACHE"); cache != nullptr && fs::path(path).is_relative()) {
    const auto candidate = fs::path(cache) / path;
    if (fs::exists(candidate)) return candidate.string();
  }
  return path;
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::string output_dir;
  bool single = false;
  std::string init;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) apply_train_config(cfg, read_key_values(a.config));
  KeyValues cli;
  for (const auto& o : a.overrides) cli.push_back(parse_override(o));
  apply_train_config(cfg, cli);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  write_text((fs::path(cfg.output_dir) / "train_config.txt").string(), format_key_values(dump_train_config(cfg)));

  TrainHooks hooks;
  hooks.on_log = [](const StepLog& e) {
    std::cerr << "step " << e.step << " loss " << e.loss << " D " << e.distortion << " bpp " << e.bpp << " psnr "
              << e.psnr << " lr " << e.lr << "\n";
  };
  if (!a.single) {
    for (const auto& m : train_full(cfg, hooks)) std::cout << "alpha " << m.alpha << " -> " << m.checkpoint << "\n";
    return kExitOk;
  }
  CodecModel model{nullptr};
  if (!a.init.empty()) {
    model = load_checkpoint(resolve_checkpoint(a.init)).model;
  } else {
    model = make_model(model_config_for(cfg), cfg.seed);
  }
  auto source = make_source(cfg);
  const auto r = train_stage(model, *source, cfg, hooks);
  write_text((fs::path(cfg.output_dir) / "train_log.csv").string(), format_train_log(r.log));
  const auto path = (fs::path(cfg.output_dir) / "model.pt").string();
  save_checkpoint(path, model, training_metadata(cfg, cfg.alpha, cfg.stage, r.steps_done));
  std::cout << "checkpoint -> " << path << "\n";
  if (r.aborted) {
    std::cerr << "error: " << r.abort_reason << "\n";
    return kExitUser;
  }
  return kExitOk;
}

// ---- encode / decode ----

struct EncodeArgs {
  VideoArgs video;
  std::string checkpoint;
  int gop = 12;
  std::string output;
  std::string stats;
  std::string recon;
  int jobs = 1;
  bool no_crc = false;
  bool separate_hyper = false;
};

int cmd_encode(const EncodeArgs& a) {
  auto ckpt = load_checkpoint(resolve_checkpoint(a.checkpoint));
  const auto video = load_video(a.video);
  CodecOptions opts;
  opts.gop_size = a.gop;
  opts.jobs = a.jobs;
  opts.frame_crc = !a.no_crc;
  opts.separate_hyper = a.separate_hyper;
  const auto out = encode_video(video, ckpt.model, opts);
  const auto bytes = pack_bitstream(out.bitstream);
  write_bytes(a.output, bytes);
  const auto stats = encode_stats_json(out, hex(out.bitstream.header.model_id));
  write_text(a.stats.empty() ? a.output + ".json" : a.stats, stats + "\n");
  if (!a.recon.empty()) write_png_dir(RawVideo{out.reconstructions, video.frame_rate, 8}, a.recon);
  double psnr_sum = 0, ssim_sum = 0;
  for (const auto& f : out.frames) {
    psnr_sum += f.psnr;
    ssim_sum += f.ms_ssim;
  }
  const double n = static_cast<double>(out.frames.size());
  std::cout << "frames " << out.frames.size() << "  bytes " << bytes.size() << "  bpp " << out.bpp() << "  psnr "
            << psnr_sum / n << " dB  ms-ssim " << ssim_sum / n << "\n";
  return kExitOk;
}

struct DecodeArgs {
  std::string input;
  std::string checkpoint;
  std::string output;
  std::string format = "auto";
  std::string yuv_range = "full";
  bool skip_model_check = false;
};

int cmd_decode(const DecodeArgs& a) {
  auto ckpt = load_checkpoint(resolve_checkpoint(a.checkpoint));
  const auto bs = unpack_bitstream(read_bytes(a.input));
  const auto out = decode_video(bs, ckpt.model, !a.skip_model_check);
  save_video(out.video, a.output, a.format, yuv_range(a.yuv_range));
  std::cout << "decoded " << out.video.size() << " frames " << bs.header.width << "x" << bs.header.height << " -> "
            << a.output << "\n";
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  VideoArgs original;
  std::string reconstructed;
  std::string bitstream;
  std::string checkpoint;
  double bits = 0.0;
  std::string json;
  std::string frame_csv;
  bool db_of_mean_mse = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto original = load_video(a.original);
  RawVideo recon;
  double total_bits = a.bits;
  std::vector<double> frame_bits;
  if (!a.bitstream.empty()) {
    if (a.checkpoint.empty()) throw ArgumentError("eval --bitstream needs --checkpoint");
    auto ckpt = load_checkpoint(resolve_checkpoint(a.checkpoint));
    const auto bs = unpack_bitstream(read_bytes(a.bitstream));
    recon = decode_video(bs, ckpt.model).video;
    total_bits = 0.0;
    for (const auto& f : bs.frames) {
      double b = 0.0;
      for (const auto& p : f.packets) b += 8.0 * static_cast<double>(p.payload.size());
      frame_bits.push_back(b);
      total_bits += b;
    }
  } else if (!a.reconstructed.empty()) {
    VideoArgs r = a.original;
    r.path = a.reconstructed;
    recon = load_video(r);
  } else {
    throw ArgumentError("eval needs --reconstructed or --bitstream");
  }
  const auto m = sequence_metrics(original, recon, total_bits,
                                  a.db_of_mean_mse ? PsnrAveraging::kDbOfMeanMse : PsnrAveraging::kMeanOfDb,
                                  frame_bits);
  const auto json = sequence_metrics_json(m);
  if (!a.json.empty()) write_text(a.json, json + "\n");
  if (!a.frame_csv.empty()) write_text(a.frame_csv, format_frame_table_csv(m));
  std::cout << json << "\n";
  return kExitOk;
}

// ---- bdrate ----

int cmd_bdrate(const std::string& anchor_path, const std::string& test_path, const std::string& json_path) {
  const auto anchor = read_rd_csv(anchor_path);
  const auto test = read_rd_csv(test_path);
  for (const auto* c : {&anchor, &test}) {
    for (auto i : c->non_monotone_steps()) {
      std::cerr << "warning: " << c->label << ": quality drops between points " << i << " and " << i + 1 << "\n";
    }
  }
  const auto r = bdbr(anchor, test);
  if (!json_path.empty()) write_text(json_path, bdbr_json(r, anchor, test) + "\n");
  std::cout << format_percent(r.percent) << "\n";
  return kExitOk;
}

// ---- synth ----

struct SynthArgs {
  std::string kind;
  int frames = 7;
  int size = 64;
  double vx = 1.0;
  double vy = 0.0;
  uint64_t seed = 0;
  std::string output;
  std::string format = "auto";
};

int cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.kind = parse_synthetic_kind(a.kind);
  spec.n_frames = a.frames;
  spec.size = a.size;
  spec.velocity_x = a.vx;
  spec.velocity_y = a.vy;
  spec.seed = a.seed;
  const auto video = make_synthetic_sequence(spec);
  save_video(video, a.output, a.format, YuvRange::kFull);
  std::cout << "wrote " << video.size() << " frames of " << a.size << "x" << a.size << " -> " << a.output << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  // One intra-op thread keeps encoder and decoder arithmetic identical.
  torch::set_num_threads(1);

  CLI::App app{"flowcodec: learned video codec with flow-based motion compensation"};
  app.require_subcommand(1);
  int seed_flag = -1;

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model family (pretrain + one fine-tune per alpha)");
  train_cmd->add_option("--config", train.config, "Flat key=value training config file");
  train_cmd->add_option("--set", train.overrides, "Override a config key (key=value); repeatable");
  train_cmd->add_option("--seed", seed_flag, "Random seed (overrides the config)");
  train_cmd->add_option("--output-dir", train.output_dir, "Directory for checkpoints and logs");
  train_cmd->add_flag("--single", train.single, "Run one stage at the config alpha and write model.pt");
  train_cmd->add_option("--init", train.init, "Initial checkpoint for --single");

  EncodeArgs enc;
  auto* enc_cmd = app.add_subcommand("encode", "Encode a video into a bitstream");
  add_video_options(enc_cmd, enc.video, "--input", "Input video: PNG directory or .yuv file");
  enc_cmd->add_option("--checkpoint", enc.checkpoint, "Model checkpoint")->required();
  enc_cmd->add_option("--gop", enc.gop, "GOP size (intra period), 1-255")->check(CLI::Range(1, 255));
  enc_cmd->add_option("--output", enc.output, "Output bitstream path")->required();
  enc_cmd->add_option("--stats", enc.stats, "Stats JSON path (default: <output>.json)");
  enc_cmd->add_option("--recon", enc.recon, "Write encoder-side reconstructions as PNGs here");
  enc_cmd->add_option("--jobs", enc.jobs, "GOPs encoded in parallel")->check(CLI::PositiveNumber);
  enc_cmd->add_flag("--no-crc", enc.no_crc, "Omit per-frame reconstruction checksums");
  enc_cmd->add_flag("--separate-hyper", enc.separate_hyper, "Emit hyper-latents in their own packets");

  DecodeArgs dec;
  auto* dec_cmd = app.add_subcommand("decode", "Decode a bitstream");
  dec_cmd->add_option("--input", dec.input, "Bitstream path")->required();
  dec_cmd->add_option("--checkpoint", dec.checkpoint, "Model checkpoint")->required();
  dec_cmd->add_option("--output", dec.output, "Output PNG directory or .yuv file")->required();
  dec_cmd->add_option("--format", dec.format, "Output format: auto, png or yuv")
      ->check(CLI::IsMember({"auto", "png", "yuv"}));
  dec_cmd->add_option("--yuv-range", dec.yuv_range, "YUV sample range: full or limited")
      ->check(CLI::IsMember({"full", "limited"}));
  dec_cmd->add_flag("--skip-model-check", dec.skip_model_check, "Decode even if the model id differs");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR / MS-SSIM / bpp of a reconstruction");
  add_video_options(eval_cmd, ev.original, "--original", "Original video");
  eval_cmd->add_option("--reconstructed", ev.reconstructed, "Reconstructed video (same format as the original)");
  eval_cmd->add_option("--bitstream", ev.bitstream, "Bitstream to decode and measure");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint for --bitstream");
  eval_cmd->add_option("--bits", ev.bits, "Total coded bits for --reconstructed");
  eval_cmd->add_option("--json", ev.json, "Write the RD point JSON here as well");
  eval_cmd->add_option("--frame-csv", ev.frame_csv, "Write the per-frame table as CSV");
  eval_cmd->add_flag("--psnr-of-mean-mse", ev.db_of_mean_mse, "Sequence PSNR from the mean MSE instead of mean dB");

  std::string anchor, test, bd_json;
  auto* bd_cmd = app.add_subcommand("bdrate", "Bjontegaard delta rate between two RD curves");
  bd_cmd->add_option("--anchor", anchor, "Anchor curve CSV (bpp,psnr or bpp,ms_ssim)")->required();
  bd_cmd->add_option("--test", test, "Test curve CSV")->required();
  bd_cmd->add_option("--json", bd_json, "Write the report with fit coefficients as JSON");

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "Generate a synthetic sequence");
  syn_cmd->add_option("kind", syn.kind, "MOVING_SQUARE or TRANSLATING_TEXTURE")->required();
  syn_cmd->add_option("frames", syn.frames, "Number of frames")->check(CLI::PositiveNumber);
  syn_cmd->add_option("size", syn.size, "Frame side in pixels")->check(CLI::PositiveNumber);
  syn_cmd->add_option("--vx", syn.vx, "Horizontal velocity, pixels per frame");
  syn_cmd->add_option("--vy", syn.vy, "Vertical velocity, pixels per frame");
  syn_cmd->add_option("--seed", syn.seed, "Random seed");
  syn_cmd->add_option("--output", syn.output, "Output PNG directory or .yuv file")->required();
  syn_cmd->add_option("--format", syn.format, "Output format: auto, png or yuv")
      ->check(CLI::IsMember({"auto", "png", "yuv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUser;
  }

  try {
    if (*train_cmd) {
      if (seed_flag >= 0) train.seed = static_cast<uint64_t>(seed_flag);
      return cmd_train(train);
    }
    if (*enc_cmd) return cmd_encode(enc);
    if (*dec_cmd) return cmd_decode(dec);
    if (*eval_cmd) return cmd_eval(ev);
    if (*bd_cmd) return cmd_bdrate(anchor, test, bd_json);
    if (*syn_cmd) return cmd_synth(syn);
  } catch (const flowcodec::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const c10::Error& e) {
    std::cerr << "internal error: " << e.what_without_backtrace() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
