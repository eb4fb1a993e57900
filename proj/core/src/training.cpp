#include "flowcodec/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "flowcodec/codec.hpp"
#include "flowcodec/errors.hpp"
#include "flowcodec/flow.hpp"
#include "flowcodec/metrics.hpp"

#include "build_info.hpp"

namespace flowcodec {

std::string to_string(DistortionMode mode) { return mode == DistortionMode::kMse ? "mse" : "ms_ssim"; }
std::string to_string(TrainStage stage) { return stage == TrainStage::kPretrain ? "pretrain" : "finetune"; }

RdLossValue rd_loss(const torch::Tensor& frame, const torch::Tensor& reconstruction, const torch::Tensor& bits_mv,
                    const torch::Tensor& bits_res, double alpha, DistortionMode mode) {
  if (frame.sizes() != reconstruction.sizes() || frame.dim() != 4) {
    throw ShapeError("rd_loss: frame and reconstruction must be equal-sized NxCxHxW");
  }
  RdLossValue v;
  v.alpha = alpha;
  v.distortion = mode == DistortionMode::kMse ? (frame - reconstruction).pow(2).mean()
                                              : 1.0 - ms_ssim(frame, reconstruction).mean();
  const double pixels = static_cast<double>(frame.size(0) * frame.size(2) * frame.size(3));
  v.rate = (bits_mv + bits_res) / pixels;
  v.total = alpha * v.distortion + v.rate;
  return v;
}

namespace {

std::vector<double> parse_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw ConfigError(key + ": empty list entry");
    out.push_back(parse_double(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

template <class M>
ConfigField<TrainConfig> num(std::string key, M TrainConfig::*member) {
  return {key,
          [member, key](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<M>) {
              c.*member = parse_double(key, v);
            } else if constexpr (std::is_same_v<M, uint64_t>) {
              const int parsed = parse_int(key, v);
              if (parsed < 0) throw ConfigError(key + ": must be non-negative");
              c.*member = static_cast<uint64_t>(parsed);
            } else {
              c.*member = parse_int(key, v);
            }
          },
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<M>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

ConfigField<TrainConfig> str(std::string key, std::string TrainConfig::*member) {
  return {key, [member](TrainConfig& c, const std::string& v) { c.*member = v; },
          [member](const TrainConfig& c) { return c.*member; }};
}

const ConfigSchema<TrainConfig>& train_schema() {
  static const ConfigSchema<TrainConfig> schema({
      {"distortion",
       [](TrainConfig& c, const std::string& v) {
         if (v == "mse") {
           c.distortion = DistortionMode::kMse;
         } else if (v == "ms_ssim") {
           c.distortion = DistortionMode::kMsSsim;
         } else {
           throw ConfigError("distortion: expected mse or ms_ssim, got '" + v + "'");
         }
       },
       [](const TrainConfig& c) { return to_string(c.distortion); }},
      num("alpha", &TrainConfig::alpha),
      {"stage",
       [](TrainConfig& c, const std::string& v) {
         if (v == "pretrain") {
           c.stage = TrainStage::kPretrain;
         } else if (v == "finetune") {
           c.stage = TrainStage::kFinetune;
         } else {
           throw ConfigError("stage: expected pretrain or finetune, got '" + v + "'");
         }
       },
       [](const TrainConfig& c) { return to_string(c.stage); }},
      num("steps", &TrainConfig::steps),
      num("lr_initial", &TrainConfig::lr_initial),
      num("lr_final", &TrainConfig::lr_final),
      num("batch", &TrainConfig::batch),
      num("clip_len", &TrainConfig::clip_len),
      num("seed", &TrainConfig::seed),
      num("crop", &TrainConfig::crop),
      num("clip_norm", &TrainConfig::clip_norm),
      num("log_every", &TrainConfig::log_every),
      num("flow_warmup_steps", &TrainConfig::flow_warmup_steps),
      str("data", &TrainConfig::data),
      str("synthetic_kind", &TrainConfig::synthetic_kind),
      num("max_velocity", &TrainConfig::max_velocity),
      {"alphas", [](TrainConfig& c, const std::string& v) { c.alphas = parse_list("alphas", v); },
       [](const TrainConfig& c) { return format_list(c.alphas); }},
      num("finetune_steps", &TrainConfig::finetune_steps),
      num("finetune_lr_initial", &TrainConfig::finetune_lr_initial),
      num("finetune_lr_final", &TrainConfig::finetune_lr_final),
      str("model_preset", &TrainConfig::model_preset),
      str("output_dir", &TrainConfig::output_dir),
  });
  return schema;
}

constexpr const char* kModelPrefix = "model.";

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (finetune_steps < 0) throw ConfigError("finetune_steps must be >= 0");
  if (lr_initial <= 0 || lr_final <= 0 || lr_final > lr_initial) {
    throw ConfigError("learning rates must be positive with lr_final <= lr_initial");
  }
  if (finetune_lr_initial <= 0 || finetune_lr_final <= 0 || finetune_lr_final > finetune_lr_initial) {
    throw ConfigError("fine-tune learning rates must be positive with finetune_lr_final <= finetune_lr_initial");
  }
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (clip_len < 2) throw ConfigError("clip_len must be >= 2 (one intra and at least one predicted frame)");
  if (crop < 16 || crop % 16 != 0) throw ConfigError("crop must be a positive multiple of 16");
  if (!(alpha > 0)) throw ConfigError("alpha must be positive");
  for (double a : alphas) {
    if (!(a > 0)) throw ConfigError("alphas must be positive");
  }
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (flow_warmup_steps < 0 || flow_warmup_steps > steps) throw ConfigError("flow_warmup_steps must be in [0, steps]");
  if (max_velocity < 0) throw ConfigError("max_velocity must be >= 0");
  (void)model_config_for(*this);
}

void apply_train_config(TrainConfig& cfg, const KeyValues& kv) {
  const auto& schema = train_schema();
  for (const auto& [k, v] : kv) {
    if (k.rfind(kModelPrefix, 0) == 0) {
      const auto key = k.substr(std::char_traits<char>::length(kModelPrefix));
      if (!model_config_schema().has(key)) {
        auto valid = model_config_schema().keys();
        for (auto& name : valid) name = kModelPrefix + name;
        throw_unknown_key(k, valid);
      }
      bool replaced = false;
      for (auto& entry : cfg.model_overrides) {
        if (entry.first == key) {
          entry.second = v;
          replaced = true;
        }
      }
      if (!replaced) cfg.model_overrides.emplace_back(key, v);
      continue;
    }
    if (!schema.has(k)) {
      auto valid = schema.keys();
      for (const auto& m : model_config_schema().keys()) valid.push_back(kModelPrefix + m);
      throw_unknown_key(k, valid);
    }
    schema.set(cfg, k, v);
  }
}

KeyValues dump_train_config(const TrainConfig& cfg) {
  auto out = train_schema().dump(cfg);
  for (const auto& [k, v] : cfg.model_overrides) out.emplace_back(kModelPrefix + k, v);
  return out;
}

std::vector<std::string> train_config_keys() {
  auto keys = train_schema().keys();
  for (const auto& m : model_config_schema().keys()) keys.push_back(kModelPrefix + m);
  return keys;
}

ModelConfig model_config_for(const TrainConfig& cfg) {
  auto mc = ModelConfig::preset(cfg.model_preset);
  model_config_schema().apply(mc, cfg.model_overrides);
  mc.validate();
  return mc;
}

CodecModel make_model(const ModelConfig& config, uint64_t seed) {
  torch::manual_seed(seed);
  return CodecModel(config);
}

namespace {

class SyntheticSource : public ClipSource {
 public:
  SyntheticSource(int size, std::vector<SyntheticKind> kinds, double max_velocity)
      : size_(size), kinds_(std::move(kinds)), max_velocity_(max_velocity) {}

  std::vector<torch::Tensor> sample(int batch, int clip_len, std::mt19937_64& rng) override {
    std::uniform_real_distribution<double> vel(-max_velocity_, max_velocity_);
    std::uniform_int_distribution<size_t> kind(0, kinds_.size() - 1);
    std::vector<std::vector<torch::Tensor>> per_t(static_cast<size_t>(clip_len));
    for (int b = 0; b < batch; ++b) {
      SyntheticSpec spec;
      spec.kind = kinds_[kind(rng)];
      spec.n_frames = clip_len;
      spec.size = size_;
      spec.velocity_x = vel(rng);
      spec.velocity_y = vel(rng);
      spec.seed = rng();
      const auto video = make_synthetic_sequence(spec);
      for (int t = 0; t < clip_len; ++t) per_t[static_cast<size_t>(t)].push_back(video.frames[static_cast<size_t>(t)].pixels());
    }
    std::vector<torch::Tensor> out;
    for (auto& frames : per_t) out.push_back(torch::stack(frames));
    return out;
  }

 private:
  int size_;
  std::vector<SyntheticKind> kinds_;
  double max_velocity_;
};

class VideoSource : public ClipSource {
 public:
  VideoSource(std::vector<RawVideo> videos, int crop) : videos_(std::move(videos)), crop_(crop) {
    if (videos_.empty()) throw ArgumentError("training data: no videos");
    for (const auto& v : videos_) {
      v.validate();
      if (v.height() < crop_ || v.width() < crop_) {
        throw ArgumentError("training data: video smaller than the crop size " + std::to_string(crop_));
      }
    }
  }

  std::vector<torch::Tensor> sample(int batch, int clip_len, std::mt19937_64& rng) override {
    std::vector<size_t> eligible;
    for (size_t i = 0; i < videos_.size(); ++i) {
      if (videos_[i].size() >= static_cast<size_t>(clip_len)) eligible.push_back(i);
    }
    if (eligible.empty()) throw ArgumentError("training data: no video has clip_len frames");
    std::uniform_int_distribution<size_t> pick(0, eligible.size() - 1);
    std::vector<std::vector<torch::Tensor>> per_t(static_cast<size_t>(clip_len));
    for (int b = 0; b < batch; ++b) {
      const auto& v = videos_[eligible[pick(rng)]];
      const auto start = std::uniform_int_distribution<size_t>(0, v.size() - static_cast<size_t>(clip_len))(rng);
      const auto y = std::uniform_int_distribution<int64_t>(0, v.height() - crop_)(rng);
      const auto x = std::uniform_int_distribution<int64_t>(0, v.width() - crop_)(rng);
      for (int t = 0; t < clip_len; ++t) {
        per_t[static_cast<size_t>(t)].push_back(
            v.frames[start + static_cast<size_t>(t)].pixels().slice(1, y, y + crop_).slice(2, x, x + crop_));
      }
    }
    std::vector<torch::Tensor> out;
    for (auto& frames : per_t) out.push_back(torch::stack(frames));
    return out;
  }

 private:
  std::vector<RawVideo> videos_;
  int crop_;
};

}  // namespace

std::unique_ptr<ClipSource> make_synthetic_source(int size, const std::string& kind, double max_velocity) {
  std::vector<SyntheticKind> kinds;
  if (kind == "mixed") {
    kinds = {SyntheticKind::kMovingSquare, SyntheticKind::kTranslatingTexture};
  } else {
    kinds = {parse_synthetic_kind(kind)};
  }
  return std::make_unique<SyntheticSource>(size, std::move(kinds), max_velocity);
}

std::unique_ptr<ClipSource> make_video_source(std::vector<RawVideo> videos, int crop) {
  return std::make_unique<VideoSource>(std::move(videos), crop);
}

std::unique_ptr<ClipSource> make_png_corpus_source(const std::string& dir, int crop) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("training corpus directory not found: " + dir);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) dirs.push_back(dir);  // a single sequence
  std::vector<RawVideo> videos;
  for (const auto& d : dirs) videos.push_back(read_png_dir(d));
  return make_video_source(std::move(videos), crop);
}

std::unique_ptr<ClipSource> make_source(const TrainConfig& cfg) {
  if (cfg.data == "synthetic") return make_synthetic_source(cfg.crop, cfg.synthetic_kind, cfg.max_velocity);
  return make_png_corpus_source(cfg.data, cfg.crop);
}

namespace {

std::vector<torch::Tensor> trainable(CodecModel& model) {
  std::vector<torch::Tensor> out;
  for (auto& p : model->parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

bool all_finite(const std::vector<torch::Tensor>& ts) {
  for (const auto& t : ts) {
    if (t.defined() && !torch::isfinite(t).all().item<bool>()) return false;
  }
  return true;
}

}  // namespace

TrainResult train_stage(CodecModel& model, ClipSource& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  torch::manual_seed(cfg.seed);
  std::mt19937_64 rng(cfg.seed);
  model->train();

  auto params = trainable(model);
  if (params.empty()) throw ConfigError("train_stage: model has no trainable parameters");
  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(cfg.lr_initial));

  TrainResult result;
  std::vector<torch::Tensor> last_good;
  auto snapshot = [&] {
    torch::NoGradGuard no_grad;
    last_good.clear();
    for (const auto& p : params) last_good.push_back(p.detach().clone());
  };
  auto restore = [&] {
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < params.size(); ++i) params[i].copy_(last_good[i]);
  };
  snapshot();

  double sum_loss = 0, sum_d = 0, sum_bpp = 0, sum_mse = 0;
  int window = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    const double lr = cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * frac;
    for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

    const auto clip = data.sample(cfg.batch, cfg.clip_len, rng);
    optimizer.zero_grad();
    torch::Tensor loss, distortion, rate, mse;
    if (step < cfg.flow_warmup_steps) {
      // Photometric warm-up of the flow network on ground-truth pairs.
      loss = torch::zeros({});
      for (size_t t = 1; t < clip.size(); ++t) {
        auto flow = model->flow(clip[t], clip[t - 1]);
        loss = loss + (warp(clip[t - 1], flow) - clip[t]).pow(2).mean();
      }
      loss = loss / static_cast<double>(clip.size() - 1);
      distortion = loss.detach();
      mse = distortion;
      rate = torch::zeros({});
    } else {
      auto step_i = model->forward_i(clip[0], QuantMode::kNoise);
      auto value = rd_loss(clip[0], step_i.reconstruction, step_i.bits_mv, step_i.bits_res, cfg.alpha, cfg.distortion);
      loss = value.total;
      distortion = value.distortion;
      rate = value.rate;
      mse = (clip[0] - step_i.reconstruction).pow(2).mean();
      DecodedFrameBuffer dfb;
      dfb.push(step_i.reconstruction);
      auto previous = step_i.reconstruction;
      for (size_t t = 1; t < clip.size(); ++t) {
        const auto reference = dfb.latest();
        if (hooks.on_reference) hooks.on_reference(static_cast<int>(t), reference, previous, clip[t - 1]);
        auto s = model->forward_p(clip[t], reference, QuantMode::kNoise);
        auto v = rd_loss(clip[t], s.reconstruction, s.bits_mv, s.bits_res, cfg.alpha, cfg.distortion);
        loss = loss + v.total;
        distortion = distortion + v.distortion;
        rate = rate + v.rate;
        mse = mse + (clip[t] - s.reconstruction).pow(2).mean();
        dfb.push(s.reconstruction);
        previous = s.reconstruction;
      }
      const double n = static_cast<double>(clip.size());
      loss = loss / n;
      distortion = distortion / n;
      rate = rate / n;
      mse = mse / n;
    }

    const double loss_value = loss.item<double>();
    bool finite = std::isfinite(loss_value);
    if (finite) {
      loss.backward();
      std::vector<torch::Tensor> grads;
      for (const auto& p : params) grads.push_back(p.grad());
      finite = all_finite(grads);
    }
    if (!finite) {
      restore();
      result.aborted = true;
      result.abort_reason = "non-finite loss or gradient at step " + std::to_string(step) +
                            "; weights restored to the last good state";
      break;
    }
    torch::nn::utils::clip_grad_norm_(params, cfg.clip_norm);
    optimizer.step();
    if (!all_finite(params)) {
      restore();
      result.aborted = true;
      result.abort_reason = "non-finite weights after step " + std::to_string(step);
      break;
    }
    if (step % 100 == 99) snapshot();
    result.steps_done = step + 1;

    sum_loss += loss_value;
    sum_d += distortion.item<double>();
    sum_bpp += rate.item<double>();
    sum_mse += mse.item<double>();
    ++window;
    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      StepLog entry{step + 1, sum_loss / window, sum_d / window, sum_bpp / window,
                    psnr_from_mse(sum_mse / window), lr};
      result.log.push_back(entry);
      if (hooks.on_log) hooks.on_log(entry);
      sum_loss = sum_d = sum_bpp = sum_mse = 0;
      window = 0;
    }
  }
  model->eval();
  return result;
}

std::string format_train_log(const std::vector<StepLog>& log) {
  std::ostringstream out;
  out << "step,loss,distortion,bpp,psnr,lr\n" << std::setprecision(9);
  for (const auto& e : log) {
    out << e.step << "," << e.loss << "," << e.distortion << "," << e.bpp << "," << e.psnr << "," << e.lr << "\n";
  }
  return out.str();
}

Metadata training_metadata(const TrainConfig& cfg, double alpha, TrainStage stage, int steps_done) {
  Metadata m;
  for (const auto& [k, v] : dump_train_config(cfg)) m["train." + k] = v;
  m["alpha"] = format_double(alpha);
  m["stage"] = to_string(stage);
  m["steps_done"] = std::to_string(steps_done);
  m["git_describe"] = FLOWCODEC_GIT_DESCRIBE;
  return m;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<TrainedModel> train_full(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const auto config = model_config_for(cfg);
  auto pretrained = make_model(config, cfg.seed);
  auto source = make_source(cfg);

  TrainConfig pre = cfg;
  pre.stage = TrainStage::kPretrain;
  auto pre_result = train_stage(pretrained, *source, pre, hooks);
  write_text(fs::path(cfg.output_dir) / "pretrain_log.csv", format_train_log(pre_result.log));
  if (pre_result.aborted) throw Error("pretraining aborted: " + pre_result.abort_reason);
  const auto pre_path = (fs::path(cfg.output_dir) / "pretrain.pt").string();
  save_checkpoint(pre_path, pretrained, training_metadata(pre, pre.alpha, pre.stage, pre_result.steps_done));

  std::vector<TrainedModel> out;
  for (size_t i = 0; i < cfg.alphas.size(); ++i) {
    const double alpha = cfg.alphas[i];
    auto model = make_model(config, cfg.seed);
    copy_weights(model, pretrained);
    int steps_done = 0;
    TrainConfig fine = cfg;
    fine.stage = TrainStage::kFinetune;
    fine.alpha = alpha;
    if (cfg.finetune_steps > 0) {
      fine.steps = cfg.finetune_steps;
      fine.lr_initial = cfg.finetune_lr_initial;
      fine.lr_final = cfg.finetune_lr_final;
      fine.flow_warmup_steps = 0;
      fine.seed = cfg.seed + 1 + i;
      auto r = train_stage(model, *source, fine, hooks);
      const auto tag = format_double(alpha);
      write_text(fs::path(cfg.output_dir) / ("finetune_alpha_" + tag + "_log.csv"), format_train_log(r.log));
      if (r.aborted) throw Error("fine-tuning at alpha " + tag + " aborted: " + r.abort_reason);
      steps_done = r.steps_done;
    }
    const auto path = (fs::path(cfg.output_dir) / ("alpha_" + format_double(alpha) + ".pt")).string();
    save_checkpoint(path, model, training_metadata(fine, alpha, TrainStage::kFinetune, steps_done));
    out.push_back({alpha, path, model});
  }
  return out;
}

ClipEvaluation evaluate_clip(CodecModel& model, const RawVideo& clip, double alpha) {
  clip.validate();
  torch::NoGradGuard no_grad;
  model->eval();
  const auto pad = padding_for(clip.height(), clip.width(), 16);
  const int64_t h = clip.height(), w = clip.width();
  ClipEvaluation e;
  double bits = 0.0, psnr_sum = 0.0, loss_sum = 0.0;
  torch::Tensor reference;
  for (size_t t = 0; t < clip.size(); ++t) {
    const auto current = pad_frame(clip.frames[t], pad).batch();
    auto s = t == 0 ? model->forward_i(current, QuantMode::kRound)
                    : model->forward_p(current, reference, QuantMode::kRound);
    reference = s.reconstruction;
    const double frame_bits = (s.bits_mv + s.bits_res).item<double>();
    bits += frame_bits;
    const auto recon = Frame::from_clamped(s.reconstruction[0].slice(1, 0, h).slice(2, 0, w).contiguous());
    psnr_sum += psnr(clip.frames[t], recon);
    const double mse = (recon.pixels() - clip.frames[t].pixels()).pow(2).mean().item<double>();
    loss_sum += alpha * mse + frame_bits / static_cast<double>(h * w);
  }
  const double n = static_cast<double>(clip.size());
  e.psnr = psnr_sum / n;
  e.bpp_estimated = bits / (n * static_cast<double>(h * w));
  e.loss = loss_sum / n;
  return e;
}

}  // namespace flowcodec
