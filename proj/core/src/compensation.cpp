#include "flowcodec/compensation.hpp"

#include "flowcodec/errors.hpp"
#include "flowcodec/flow.hpp"

namespace flowcodec {

MotionCompensationImpl::MotionCompensationImpl(const CompensationConfig& config, float flow_scale)
    : flow_scale_(flow_scale) {
  head = register_module("head", make_conv(8, {3, config.width, 1, 1}));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < config.blocks; ++i) blocks->push_back(ResidualBlock(config.width));
  tail = register_module("tail", make_conv(config.width, {3, 3, 1, 1}));
}

torch::Tensor MotionCompensationImpl::forward(const torch::Tensor& reference, const torch::Tensor& flow) {
  check_channels(reference, 3, "motion_compensate(reference)");
  check_channels(flow, 2, "motion_compensate(flow)");
  auto warped = warp(reference, flow);
  auto x = head(torch::cat({warped, reference, flow / flow_scale_}, 1));
  for (const auto& block : *blocks) x = block->as<ResidualBlockImpl>()->forward(x);
  return warped + tail(x);
}

}  // namespace flowcodec
