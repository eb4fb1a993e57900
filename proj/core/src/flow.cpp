#include "flowcodec/flow.hpp"

#include <sstream>

#include "flowcodec/errors.hpp"

namespace flowcodec {

torch::Tensor warp(const torch::Tensor& input, const torch::Tensor& flow) {
  if (input.dim() != 4 || flow.dim() != 4 || flow.size(1) != 2 || input.size(0) != flow.size(0) ||
      input.size(2) != flow.size(2) || input.size(3) != flow.size(3)) {
    std::ostringstream msg;
    msg << "warp: input " << input.sizes() << " and flow " << flow.sizes() << " do not match";
    throw ShapeError(msg.str());
  }
  const int64_t n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  const auto opts = flow.options();

  auto grid_x = torch::arange(w, opts).view({1, 1, w});
  auto grid_y = torch::arange(h, opts).view({1, h, 1});
  auto x = (grid_x + flow.select(1, 0)).clamp(0, w - 1);
  auto y = (grid_y + flow.select(1, 1)).clamp(0, h - 1);

  // Non-finite coordinates index pixel 0; the NaN weights still reach the output.
  auto x0 = x.detach().nan_to_num(0.0, 0.0, 0.0).floor();
  auto y0 = y.detach().nan_to_num(0.0, 0.0, 0.0).floor();
  auto wx = x - x0;
  auto wy = y - y0;

  auto ix0 = x0.to(torch::kLong);
  auto iy0 = y0.to(torch::kLong);
  auto ix1 = (ix0 + 1).clamp_max(w - 1);
  auto iy1 = (iy0 + 1).clamp_max(h - 1);

  auto flat = input.reshape({n, c, h * w});
  auto sample = [&](const torch::Tensor& iy, const torch::Tensor& ix) {
    auto idx = (iy * w + ix).reshape({n, 1, h * w}).expand({n, c, h * w});
    return flat.gather(2, idx).view({n, c, h, w});
  };
  auto v00 = sample(iy0, ix0);
  auto v01 = sample(iy0, ix1);
  auto v10 = sample(iy1, ix0);
  auto v11 = sample(iy1, ix1);

  wx = wx.unsqueeze(1);
  wy = wy.unsqueeze(1);
  return (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
}

FlowEstimatorImpl::FlowEstimatorImpl(const FlowEstimatorConfig& config) : config_(config) {
  extract_convs_ = register_module("extract", torch::nn::ModuleList());
  extract_acts_ = register_module("extract_act", torch::nn::ModuleList());
  head_in_ = register_module("head_in", torch::nn::ModuleList());
  head_act_ = register_module("head_act", torch::nn::ModuleList());
  head_out_ = register_module("head_out", torch::nn::ModuleList());

  int in = 3;
  for (size_t level = 0; level < config_.widths.size(); ++level) {
    const int width = config_.widths[level];
    const int stride = level == 0 ? 1 : 2;
    extract_convs_->push_back(make_conv(in, {config_.kernel, width, stride, 1}));
    extract_acts_->push_back(Prelu(width));
    head_in_->push_back(make_conv(2 * width + 2, {config_.kernel, width, 1, 1}));
    head_act_->push_back(Prelu(width));
    head_out_->push_back(make_conv(width, {config_.kernel, 2, 1, 1}));
    in = width;
  }
  zero_heads();
}

void FlowEstimatorImpl::zero_heads() {
  for (const auto& m : *head_out_) zero_parameters(*m);
}

std::vector<torch::Tensor> FlowEstimatorImpl::features(const torch::Tensor& image) {
  std::vector<torch::Tensor> out;
  auto x = image;
  for (size_t level = 0; level < extract_convs_->size(); ++level) {
    x = extract_acts_[level]->as<PreluImpl>()->forward(
        extract_convs_[level]->as<torch::nn::Conv2dImpl>()->forward(x));
    out.push_back(x);
  }
  return out;
}

torch::Tensor FlowEstimatorImpl::forward(const torch::Tensor& current, const torch::Tensor& reference) {
  check_channels(current, 3, "estimate_flow(current)");
  check_channels(reference, 3, "estimate_flow(reference)");
  if (current.sizes() != reference.sizes()) throw ShapeError("estimate_flow: frame sizes differ");
  if (current.size(2) % 4 != 0 || current.size(3) % 4 != 0) {
    throw ShapeError("estimate_flow: frame dimensions must be multiples of 4");
  }
  const auto fc = features(current);
  const auto fr = features(reference);
  const int levels = static_cast<int>(fc.size());

  torch::Tensor flow;
  for (int level = levels - 1; level >= 0; --level) {
    const auto& cur = fc[static_cast<size_t>(level)];
    if (!flow.defined()) {
      flow = torch::zeros({cur.size(0), 2, cur.size(2), cur.size(3)}, cur.options());
    } else {
      flow = upsample2x(flow, UpsampleMode::kBilinear) * 2.0;
    }
    auto warped = warp(fr[static_cast<size_t>(level)], flow);
    auto h = head_in_[static_cast<size_t>(level)]->as<torch::nn::Conv2dImpl>()->forward(
        torch::cat({cur, warped, flow}, 1));
    h = head_act_[static_cast<size_t>(level)]->as<PreluImpl>()->forward(h);
    flow = flow + head_out_[static_cast<size_t>(level)]->as<torch::nn::Conv2dImpl>()->forward(h);
  }
  return flow;
}

double mean_endpoint_error(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes() || a.dim() != 4 || a.size(1) != 2) {
    throw ShapeError("mean_endpoint_error: flows must share an N x 2 x H x W shape");
  }
  return (a - b).pow(2).sum(1).sqrt().mean().item<double>();
}

}  // namespace flowcodec
