#include "flowcodec/model.hpp"

#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "flowcodec/errors.hpp"
#include "flowcodec/quantization.hpp"

namespace flowcodec {

using nlohmann::json;

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.mv_channels = 48;
  c.mv_hyper_channels = 32;
  c.res_channels = 64;
  c.res_hyper_channels = 32;
  c.flow.widths = {16, 24, 32};
  c.mv_filter.width = 16;
  c.compensation = {32, 2};
  c.res_filter = {32, 3};
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "default") return {};
  if (name == "toy") return toy();
  throw ConfigError("unknown model preset '" + name + "' (expected default or toy)");
}

namespace {

template <class T>
ConfigField<T> int_field(std::string key, int T::*member) {
  return {key, [member, key](T& c, const std::string& v) { c.*member = parse_int(key, v); },
          [member](const T& c) { return std::to_string(c.*member); }};
}

ConfigField<ModelConfig> nested_int(std::string key, std::function<int&(ModelConfig&)> ref) {
  return {key, [ref, key](ModelConfig& c, const std::string& v) { ref(c) = parse_int(key, v); },
          [ref](const ModelConfig& c) { return std::to_string(ref(const_cast<ModelConfig&>(c))); }};
}

ConfigField<ModelConfig> bool_field(std::string key, bool ModelConfig::*member) {
  return {key, [member, key](ModelConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
          [member](const ModelConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

}  // namespace

const ConfigSchema<ModelConfig>& model_config_schema() {
  static const ConfigSchema<ModelConfig> schema({
      int_field("mv_channels", &ModelConfig::mv_channels),
      int_field("mv_hyper_channels", &ModelConfig::mv_hyper_channels),
      int_field("res_channels", &ModelConfig::res_channels),
      int_field("res_hyper_channels", &ModelConfig::res_hyper_channels),
      nested_int("flow_width0", [](ModelConfig& c) -> int& { return c.flow.widths[0]; }),
      nested_int("flow_width1", [](ModelConfig& c) -> int& { return c.flow.widths[1]; }),
      nested_int("flow_width2", [](ModelConfig& c) -> int& { return c.flow.widths[2]; }),
      nested_int("flow_kernel", [](ModelConfig& c) -> int& { return c.flow.kernel; }),
      nested_int("mvf_width", [](ModelConfig& c) -> int& { return c.mv_filter.width; }),
      nested_int("mcdr_width", [](ModelConfig& c) -> int& { return c.compensation.width; }),
      nested_int("mcdr_blocks", [](ModelConfig& c) -> int& { return c.compensation.blocks; }),
      nested_int("rf_width", [](ModelConfig& c) -> int& { return c.res_filter.width; }),
      nested_int("rf_blocks", [](ModelConfig& c) -> int& { return c.res_filter.blocks; }),
      {"flow_scale",
       [](ModelConfig& c, const std::string& v) { c.flow_scale = static_cast<float>(parse_double("flow_scale", v)); },
       [](const ModelConfig& c) { return format_double(c.flow_scale); }},
      bool_field("mv_filter_enabled", &ModelConfig::mv_filter_enabled),
      bool_field("res_filter_enabled", &ModelConfig::res_filter_enabled),
  });
  return schema;
}

void ModelConfig::validate() const {
  auto positive = [](int v) { return v >= 1; };
  bool ok = positive(mv_channels) && positive(res_channels) && positive(mv_hyper_channels) &&
            positive(res_hyper_channels) && positive(mv_filter.width) && positive(compensation.width) &&
            positive(res_filter.width) && compensation.blocks >= 0 && res_filter.blocks >= 0 && flow_scale > 0;
  for (int w : flow.widths) ok = ok && positive(w);
  if (!ok) throw ConfigError("model config: widths, channel counts and flow_scale must be positive");
  if (flow.kernel < 1 || flow.kernel % 2 == 0) throw ConfigError("model config: flow_kernel must be odd");
}

CodecModelImpl::CodecModelImpl(const ModelConfig& config) : config_(config) {
  config.validate();
  flow = register_module("flow", FlowEstimator(config.flow));
  mv_encoder = register_module("mv_encoder", MvEncoder(config.mv_channels, config.flow_scale));
  mv_decoder = register_module("mv_decoder", MvDecoder(config.mv_channels, config.flow_scale));
  mv_hyper = register_module("mv_hyper", HyperPrior(config.mv_channels, config.mv_hyper_channels));
  mv_filter = register_module("mv_filter", MvFilter(config.mv_filter, config.flow_scale));
  compensation = register_module("compensation", MotionCompensation(config.compensation, config.flow_scale));
  res_encoder = register_module("res_encoder", ResEncoder(config.res_channels));
  res_decoder = register_module("res_decoder", ResDecoder(config.res_channels));
  res_hyper = register_module("res_hyper", HyperPrior(config.res_channels, config.res_hyper_channels));
  res_filter = register_module("res_filter", ResidualFilter(config.res_filter));
  apply_filter_switches();
}

void CodecModelImpl::apply_filter_switches() {
  torch::NoGradGuard no_grad;
  if (!config_.mv_filter_enabled) {
    zero_parameters(*mv_filter);
    set_trainable(*mv_filter, false);
  }
  if (!config_.res_filter_enabled) {
    zero_parameters(*res_filter);
    set_trainable(*res_filter, false);
  }
}

torch::Tensor CodecModelImpl::quantize(const torch::Tensor& z, QuantMode mode) {
  return mode == QuantMode::kNoise ? quantize_train(z) : quantize_infer(z);
}

BranchLatents CodecModelImpl::analyse_motion(const torch::Tensor& current, const torch::Tensor& reference,
                                             QuantMode mode, torch::Tensor* raw_flow) {
  auto o = flow(current, reference);
  if (raw_flow != nullptr) *raw_flow = o;
  auto y = mv_encoder(o);
  auto zq = quantize(mv_hyper->encode(y), mode);
  return {quantize(y, mode), zq, mv_hyper->decode(zq, {y.size(2), y.size(3)})};
}

BranchLatents CodecModelImpl::analyse_residual(const torch::Tensor& residual, QuantMode mode) {
  auto y = res_encoder(residual);
  auto zq = quantize(res_hyper->encode(y), mode);
  return {quantize(y, mode), zq, res_hyper->decode(zq, {y.size(2), y.size(3)})};
}

EntropyParams CodecModelImpl::motion_params(const torch::Tensor& hyper, std::pair<int64_t, int64_t> latent_hw) {
  return mv_hyper->decode(hyper, latent_hw);
}

EntropyParams CodecModelImpl::residual_params(const torch::Tensor& hyper, std::pair<int64_t, int64_t> latent_hw) {
  return res_hyper->decode(hyper, latent_hw);
}

Prediction CodecModelImpl::predict(const torch::Tensor& reference, const torch::Tensor& motion_latent) {
  auto decoded = mv_decoder(motion_latent);
  auto filtered = mv_filter(decoded, reference);
  return {filtered, compensation(reference, filtered)};
}

torch::Tensor CodecModelImpl::reconstruct_p(const torch::Tensor& reference, const Prediction& prediction,
                                            const torch::Tensor& residual_latent) {
  auto decoded = res_decoder(residual_latent);
  auto filtered = res_filter(decoded, prediction.predicted, reference, prediction.flow);
  return reconstruct(prediction.predicted, filtered);
}

torch::Tensor CodecModelImpl::reconstruct_i(const torch::Tensor& residual_latent) {
  return torch::clamp(res_decoder(residual_latent), 0.0, 1.0);
}

torch::Tensor CodecModelImpl::branch_bits(HyperPriorImpl& hyper, const BranchLatents& b, torch::Tensor* hyper_bits) {
  auto hb = hyper.prior->bits(b.hyper).sum();
  if (hyper_bits != nullptr) *hyper_bits = hb;
  return estimate_bits(b.latent, b.params) + hb;
}

FrameStep CodecModelImpl::forward_p(const torch::Tensor& current, const torch::Tensor& reference, QuantMode mode) {
  FrameStep out;
  auto motion = analyse_motion(current, reference, mode);
  auto prediction = predict(reference, motion.latent);
  auto residual = analyse_residual(compute_residual(current, prediction.predicted), mode);
  torch::Tensor hyper_mv, hyper_res;
  out.bits_mv = branch_bits(*mv_hyper, motion, &hyper_mv);
  out.bits_res = branch_bits(*res_hyper, residual, &hyper_res);
  out.bits_hyper = hyper_mv + hyper_res;
  out.reconstruction = reconstruct_p(reference, prediction, residual.latent);
  out.flow = prediction.flow;
  out.predicted = prediction.predicted;
  return out;
}

FrameStep CodecModelImpl::forward_i(const torch::Tensor& current, QuantMode mode) {
  FrameStep out;
  auto residual = analyse_residual(current, mode);
  out.bits_res = branch_bits(*res_hyper, residual, &out.bits_hyper);
  out.bits_mv = torch::zeros({}, current.options());
  out.reconstruction = reconstruct_i(residual.latent);
  return out;
}

namespace {

json metadata_json(CodecModel& model, const Metadata& metadata) {
  json j;
  j["format"] = 1;
  json mc = json::object();
  for (const auto& [k, v] : model_config_schema().dump(model->config())) mc[k] = v;
  j["model_config"] = mc;
  json meta = json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  j["metadata"] = meta;
  return j;
}

}  // namespace

void save_checkpoint(const std::string& path, CodecModel& model, const Metadata& metadata) {
  torch::serialize::OutputArchive archive;
  for (const auto& p : model->named_parameters()) archive.write("param/" + p.key(), p.value().detach());
  for (const auto& b : model->named_buffers()) archive.write("buffer/" + b.key(), b.value().detach());
  archive.write("meta", c10::IValue(metadata_json(model, metadata).dump()));
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  const std::string tmp = path + ".tmp";
  try {
    archive.save_to(tmp);
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path + ": " + e.what_without_backtrace());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write checkpoint " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("checkpoint not found: " + path);
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path);
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + path + ": " + e.what_without_backtrace());
  }
  c10::IValue meta_value;
  if (!archive.try_read("meta", meta_value) || !meta_value.isString()) {
    throw ConfigError("checkpoint " + path + " has no metadata record");
  }
  json j;
  try {
    j = json::parse(meta_value.toStringRef());
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint " + path + ": malformed metadata: " + e.what());
  }
  if (j.value("format", 0) != 1) throw ConfigError("checkpoint " + path + ": unsupported format");

  ModelConfig config;
  KeyValues kv;
  for (const auto& [k, v] : j.at("model_config").items()) kv.emplace_back(k, v.get<std::string>());
  model_config_schema().apply(config, kv);

  Checkpoint out;
  out.model = CodecModel(config);
  for (const auto& [k, v] : j.at("metadata").items()) out.metadata[k] = v.get<std::string>();

  std::set<std::string> expected;
  torch::NoGradGuard no_grad;
  auto load_into = [&](const std::string& key, torch::Tensor& target) {
    expected.insert(key);
    torch::Tensor value;
    if (!archive.try_read(key, value)) throw ConfigError("checkpoint " + path + " is missing tensor " + key);
    if (value.sizes() != target.sizes()) {
      std::ostringstream msg;
      msg << "checkpoint " << path << ": tensor " << key << " has shape " << value.sizes() << ", expected "
          << target.sizes();
      throw ConfigError(msg.str());
    }
    target.copy_(value);
  };
  for (auto& p : out.model->named_parameters()) load_into("param/" + p.key(), p.value());
  for (auto& b : out.model->named_buffers()) load_into("buffer/" + b.key(), b.value());
  for (const auto& key : archive.keys()) {
    if (key != "meta" && expected.count(key) == 0) {
      throw ConfigError("checkpoint " + path + " has unexpected tensor " + key);
    }
  }
  out.model->apply_filter_switches();
  return out;
}

std::array<uint8_t, 8> model_id(CodecModel& model) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("model_id: SHA-256 unavailable");
  }
  auto feed = [&](const void* data, size_t n) { EVP_DigestUpdate(ctx, data, n); };
  for (const auto& p : model->named_parameters()) {
    feed(p.key().data(), p.key().size());
    for (const auto s : p.value().sizes()) {
      const int64_t dim = s;
      feed(&dim, sizeof(dim));
    }
    auto data = p.value().detach().to(torch::kFloat32).contiguous();
    feed(data.data_ptr(), static_cast<size_t>(data.numel()) * sizeof(float));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::array<uint8_t, 8> id{};
  std::copy(digest, digest + id.size(), id.begin());
  return id;
}

std::string hex(std::span<const uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 15]);
  }
  return out;
}

void copy_weights(CodecModel& dst, CodecModel& src) {
  torch::NoGradGuard no_grad;
  auto sp = src->named_parameters();
  for (auto& p : dst->named_parameters()) p.value().copy_(sp[p.key()]);
  auto sb = src->named_buffers();
  for (auto& b : dst->named_buffers()) b.value().copy_(sb[b.key()]);
}

}  // namespace flowcodec
