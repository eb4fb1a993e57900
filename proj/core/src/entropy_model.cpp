#include "flowcodec/entropy_model.hpp"

#include <cmath>
#include <sstream>

#include "flowcodec/errors.hpp"
#include "flowcodec/layers.hpp"

namespace flowcodec {

namespace F = torch::nn::functional;

namespace {

torch::Tensor std_normal_cdf(const torch::Tensor& x) { return 0.5 * torch::erfc(x * (-M_SQRT1_2)); }

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

}  // namespace

torch::Tensor gaussian_bits(const torch::Tensor& q, const EntropyParams& p) {
  if (q.sizes() != p.mean.sizes() || q.sizes() != p.scale.sizes()) {
    std::ostringstream msg;
    msg << "estimate_bits: latent " << q.sizes() << " vs mean " << p.mean.sizes() << " / scale "
        << p.scale.sizes();
    throw ShapeError(msg.str());
  }
  auto scale = torch::clamp_min(p.scale, kScaleFloor);
  // Evaluate on the lower tail (|q - mean|) for precision far from the mean.
  auto v = torch::abs(q - p.mean);
  auto upper = std_normal_cdf((0.5 - v) / scale);
  auto lower = std_normal_cdf((-0.5 - v) / scale);
  auto mass = torch::clamp_min(upper - lower, kProbabilityFloor);
  return -torch::log2(mass);
}

torch::Tensor estimate_bits(const torch::Tensor& q, const EntropyParams& p) { return gaussian_bits(q, p).sum(); }

FactorizedPriorImpl::FactorizedPriorImpl(int channels, double init_scale) : channels_(channels) {
  const int bins = kSupportMax - kSupportMin + 1;
  auto k = torch::arange(kSupportMin, kSupportMax + 1, torch::kFloat32) / init_scale;
  logits = register_parameter("logits", (-0.5 * k * k).unsqueeze(0).repeat({channels, 1}));
  (void)bins;
}

torch::Tensor FactorizedPriorImpl::pmf() { return torch::softmax(logits, 1); }

torch::Tensor FactorizedPriorImpl::bits(const torch::Tensor& values) {
  check_channels(values, channels_, "factorized prior");
  const int64_t n = values.size(0), c = channels_, hw = values.size(2) * values.size(3);
  const int64_t bins = kSupportMax - kSupportMin + 1;
  auto probs = pmf().to(values.dtype());
  auto knots = torch::cat({torch::zeros({c, 1}, probs.options()), torch::cumsum(probs, 1)}, 1);
  auto knots_e = knots.unsqueeze(0).expand({n, c, bins + 1});
  auto probs_e = probs.unsqueeze(0).expand({n, c, bins});

  auto flat = values.reshape({n, c, hw});
  auto cdf_at = [&](const torch::Tensor& t) {
    auto clamped = t.clamp(0, static_cast<double>(bins));
    auto idx = clamped.detach().nan_to_num(0.0, 0.0, 0.0).floor().clamp(0, static_cast<double>(bins - 1)).to(torch::kLong);
    auto frac = clamped - idx.to(clamped.dtype());
    return knots_e.gather(2, idx) + frac * probs_e.gather(2, idx);
  };
  // Knot j sits at kSupportMin - 0.5 + j.
  auto t_hi = flat - (kSupportMin - 1);
  auto mass = cdf_at(t_hi) - cdf_at(t_hi - 1.0);
  return -torch::log2(torch::clamp_min(mass, kProbabilityFloor)).view(values.sizes());
}

HyperPriorImpl::HyperPriorImpl(int latent_channels, int hyper_channels)
    : latent_channels_(latent_channels), hyper_channels_(hyper_channels) {
  enc1 = register_module("enc1", make_conv(latent_channels, {3, hyper_channels, 2, 1}));
  enc2 = register_module("enc2", make_conv(hyper_channels, {3, hyper_channels, 2, 1}));
  dec1 = register_module("dec1", make_deconv(hyper_channels, hyper_channels, 3, 2));
  dec2 = register_module("dec2", make_deconv(hyper_channels, 2 * latent_channels, 3, 2));
  prior = register_module("prior", FactorizedPrior(hyper_channels));
}

torch::Tensor HyperPriorImpl::encode(const torch::Tensor& latent) {
  check_channels(latent, latent_channels_, "hyper_encode");
  return enc2(torch::relu(enc1(torch::abs(latent))));
}

EntropyParams HyperPriorImpl::decode(const torch::Tensor& hyper, std::pair<int64_t, int64_t> latent_hw) {
  check_channels(hyper, hyper_channels_, "hyper_decode");
  auto out = dec2(torch::relu(dec1(hyper)));
  if (out.size(2) < latent_hw.first || out.size(3) < latent_hw.second) {
    throw ShapeError("hyper_decode: hyper-latent too small for the requested latent size");
  }
  out = out.slice(2, 0, latent_hw.first).slice(3, 0, latent_hw.second);
  auto mean = out.slice(1, 0, latent_channels_);
  auto scale = F::softplus(out.slice(1, latent_channels_, 2 * latent_channels_)) + kScaleFloor;
  return {mean, scale};
}

GaussianTableBank::Choice GaussianTableBank::choose(double mean, double scale) {
  if (!std::isfinite(mean)) mean = 0.0;
  if (!std::isfinite(scale)) scale = kScaleMax;
  mean = std::clamp(mean, -1e9, 1e9);
  const double center = std::floor(mean + 0.5);
  const double delta = mean - center;  // [-0.5, 0.5)
  const auto offset_idx = static_cast<uint32_t>(
      std::clamp(std::lround((delta + 0.5) * (kOffsetLevels - 1)), 0L, long{kOffsetLevels - 1}));
  const double step = std::log(kScaleMax / kScaleMin) / (kScaleLevels - 1);
  const double s = std::clamp(scale, kScaleMin, kScaleMax);
  const auto scale_idx = static_cast<uint32_t>(
      std::clamp(std::lround(std::log(s / kScaleMin) / step), 0L, long{kScaleLevels - 1}));
  return {static_cast<int32_t>(center), scale_idx * kOffsetLevels + offset_idx};
}

const CdfTable& GaussianTableBank::table(uint32_t index) {
  if (auto it = cache_.find(index); it != cache_.end()) return it->second;
  const uint32_t scale_idx = index / kOffsetLevels, offset_idx = index % kOffsetLevels;
  if (scale_idx >= static_cast<uint32_t>(kScaleLevels)) throw ArgumentError("gaussian table index out of range");
  const double step = std::log(kScaleMax / kScaleMin) / (kScaleLevels - 1);
  const double sigma = kScaleMin * std::exp(step * scale_idx);
  const double delta = static_cast<double>(offset_idx) / (kOffsetLevels - 1) - 0.5;
  const int32_t half = static_cast<int32_t>(std::clamp(std::ceil(8.0 * sigma + 1.0), 1.0, 64.0));
  const int32_t lo = std::max(-half, kSupportMin), hi = std::min(half, kSupportMax);
  std::vector<double> pmf;
  pmf.reserve(static_cast<size_t>(hi - lo + 1));
  for (int32_t s = lo; s <= hi; ++s) {
    const double v = std::abs(s - delta);
    pmf.push_back(std_normal_cdf((0.5 - v) / sigma) - std_normal_cdf((-0.5 - v) / sigma));
  }
  return cache_.emplace(index, make_cdf_table(pmf, lo)).first->second;
}

namespace {

std::vector<double> flat_doubles(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().view(-1);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

void encode_gaussian(RangeEncoder& enc, std::span<const int32_t> symbols, const EntropyParams& params,
                     GaussianTableBank& bank) {
  const auto mean = flat_doubles(params.mean);
  const auto scale = flat_doubles(params.scale);
  if (mean.size() != symbols.size() || scale.size() != symbols.size()) {
    throw ShapeError("encode_gaussian: parameter count does not match symbol count");
  }
  for (size_t i = 0; i < symbols.size(); ++i) {
    const auto choice = bank.choose(mean[i], scale[i]);
    const int64_t rel = int64_t{symbols[i]} - choice.center;
    enc.encode_symbol(static_cast<int32_t>(std::clamp<int64_t>(rel, INT32_MIN, INT32_MAX)), bank.table(choice.table));
  }
}

std::vector<int32_t> decode_gaussian(RangeDecoder& dec, const EntropyParams& params, GaussianTableBank& bank) {
  const auto mean = flat_doubles(params.mean);
  const auto scale = flat_doubles(params.scale);
  std::vector<int32_t> out(mean.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const auto choice = bank.choose(mean[i], scale[i]);
    const int64_t v = int64_t{dec.decode_symbol(bank.table(choice.table))} + choice.center;
    out[i] = static_cast<int32_t>(std::clamp<int64_t>(v, INT32_MIN, INT32_MAX));
  }
  return out;
}

std::vector<CdfTable> factorized_tables(FactorizedPriorImpl& prior) {
  torch::NoGradGuard no_grad;
  auto pmf = prior.pmf().to(torch::kFloat64).contiguous();
  std::vector<CdfTable> tables;
  const int64_t bins = pmf.size(1);
  for (int64_t c = 0; c < pmf.size(0); ++c) {
    const double* row = pmf[c].data_ptr<double>();
    tables.push_back(make_cdf_table({row, static_cast<size_t>(bins)}, kSupportMin));
  }
  return tables;
}

namespace {

size_t channel_of(size_t i, at::IntArrayRef shape) {
  const auto hw = static_cast<size_t>(shape[2] * shape[3]);
  return (i / hw) % static_cast<size_t>(shape[1]);
}

}  // namespace

void encode_factorized(RangeEncoder& enc, std::span<const int32_t> symbols, at::IntArrayRef shape,
                       std::span<const CdfTable> tables) {
  if (shape.size() != 4 || static_cast<size_t>(shape[1]) != tables.size()) {
    throw ShapeError("encode_factorized: one table per channel of an NxCxHxW tensor");
  }
  for (size_t i = 0; i < symbols.size(); ++i) enc.encode_symbol(symbols[i], tables[channel_of(i, shape)]);
}

std::vector<int32_t> decode_factorized(RangeDecoder& dec, at::IntArrayRef shape, std::span<const CdfTable> tables) {
  if (shape.size() != 4 || static_cast<size_t>(shape[1]) != tables.size()) {
    throw ShapeError("decode_factorized: one table per channel of an NxCxHxW tensor");
  }
  const auto count = static_cast<size_t>(shape[0] * shape[1] * shape[2] * shape[3]);
  std::vector<int32_t> out(count);
  for (size_t i = 0; i < count; ++i) out[i] = dec.decode_symbol(tables[channel_of(i, shape)]);
  return out;
}

}  // namespace flowcodec
