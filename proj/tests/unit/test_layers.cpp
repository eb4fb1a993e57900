#include <gtest/gtest.h>

#include "flowcodec/errors.hpp"
#include "flowcodec/layers.hpp"
#include "support/oracles.hpp"

using namespace flowcodec;
using namespace flowcodec::testing;

namespace {

double max_abs(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

GdnParams random_gdn(int c) {
  return {torch::rand({c}, torch::kFloat64) + 0.1, torch::rand({c, c}, torch::kFloat64) * 0.5};
}

}  // namespace

TEST(Prelu, MatchesClosedForm) {
  torch::manual_seed(1);
  auto x = torch::randn({2, 4, 5, 6}, torch::kFloat64);
  auto slope = torch::rand({4}, torch::kFloat64) - 0.5;
  EXPECT_LT(max_abs(flowcodec::prelu(x, slope), prelu_tensor_ref(x, slope)), 1e-12);
}

TEST(Prelu, ScalarSlopeAndLimits) {
  auto x = torch::tensor({-2.0, -0.5, 0.0, 3.0}, torch::kFloat64).view({1, 1, 2, 2});
  auto y = flowcodec::prelu(x, torch::tensor({0.25}, torch::kFloat64));
  EXPECT_DOUBLE_EQ(y.view(-1)[0].item<double>(), -0.5);
  EXPECT_DOUBLE_EQ(y.view(-1)[3].item<double>(), 3.0);
  // slope 1 is the identity, slope 0 is ReLU
  EXPECT_TRUE(flowcodec::prelu(x, torch::ones({1}, torch::kFloat64)).equal(x));
  EXPECT_TRUE(flowcodec::prelu(x, torch::zeros({1}, torch::kFloat64)).equal(torch::relu(x)));
}

TEST(Prelu, RejectsChannelMismatch) {
  EXPECT_THROW(flowcodec::prelu(torch::zeros({1, 3, 2, 2}), torch::zeros({4})), ShapeError);
}

TEST(Gdn, ForwardAndInverseMatchLoops) {
  torch::manual_seed(2);
  auto x = torch::randn({2, 5, 4, 3}, torch::kFloat64);
  const auto p = random_gdn(5);
  EXPECT_LT(max_abs(gdn_forward(x, p), gdn_ref(x, p.beta, p.gamma, false)), 1e-12);
  EXPECT_LT(max_abs(igdn_forward(x, p), gdn_ref(x, p.beta, p.gamma, true)), 1e-12);
}

TEST(Gdn, ModuleParametersStayFeasible) {
  Gdn gdn(4, false);
  {
    torch::NoGradGuard g;
    for (auto& p : gdn->parameters()) p.uniform_(-3, 3);
  }
  const auto p = gdn->params();
  EXPECT_GE(p.beta.min().item<double>(), kBetaFloor);
  EXPECT_GE(p.gamma.min().item<double>(), 0.0);
}

TEST(Gdn, SetParamsRoundTrips) {
  torch::manual_seed(3);
  Gdn gdn(3, true);
  gdn->to(torch::kFloat64);
  const auto p = random_gdn(3);
  gdn->set_params(p);
  EXPECT_LT(max_abs(gdn->params().beta, p.beta), 1e-12);
  EXPECT_LT(max_abs(gdn->params().gamma, p.gamma), 1e-12);
  auto x = torch::randn({1, 3, 4, 4}, torch::kFloat64);
  EXPECT_LT(max_abs(gdn->forward(x), gdn_ref(x, p.beta, p.gamma, true)), 1e-12);
}

TEST(Gdn, ZeroGammaUnitBetaIsIdentity) {
  auto x = torch::randn({1, 3, 4, 4}, torch::kFloat64);
  GdnParams p{torch::ones({3}, torch::kFloat64), torch::zeros({3, 3}, torch::kFloat64)};
  EXPECT_LT(max_abs(gdn_forward(x, p), x), 1e-15);
  EXPECT_LT(max_abs(igdn_forward(x, p), x), 1e-15);
}

TEST(ResidualBlock, MatchesLoopOracle) {
  torch::manual_seed(4);
  ResidualBlock block(3);
  block->to(torch::kFloat64);
  {
    torch::NoGradGuard g;
    block->act1->slope.uniform_(-0.5, 0.5);
    block->act2->slope.uniform_(-0.5, 0.5);
    block->act_out->slope.uniform_(-0.5, 0.5);
  }
  auto x = torch::randn({2, 3, 6, 5}, torch::kFloat64);
  auto r = conv_ref(x, block->conv1->weight, block->conv1->bias);
  r = prelu_tensor_ref(r, block->act1->slope);
  r = conv_ref(r, block->conv2->weight, block->conv2->bias);
  r = prelu_tensor_ref(r, block->act2->slope);
  r = conv_ref(r, block->conv3->weight, block->conv3->bias);
  auto expected = prelu_tensor_ref(x + r, block->act_out->slope);
  EXPECT_LT(max_abs(block->forward(x), expected), 1e-12);
}

TEST(ResidualBlock, ZeroWeightsReduceToActivation) {
  ResidualBlock block(2);
  zero_parameters(*block);
  auto x = torch::randn({1, 2, 4, 4});
  EXPECT_TRUE(block->forward(x).equal(torch::relu(x)));
}

TEST(ResGdnBlock, ZeroConvolutionsAreIdentity) {
  ResGdnBlock block(4, false);
  {
    torch::NoGradGuard g;
    block->conv2->weight.zero_();
    block->conv2->bias.zero_();
  }
  auto x = torch::randn({1, 4, 8, 8});
  EXPECT_TRUE(block->forward(x).equal(x));
}

TEST(Layers, ConvAndDeconvShapes) {
  auto conv = make_conv(3, ConvSpec{5, 8, 2, 1});
  auto deconv = make_deconv(8, 3, 5, 2);
  auto x = torch::randn({1, 3, 32, 48});
  auto y = conv(x);
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 8, 16, 24}));
  EXPECT_EQ(deconv(y).sizes(), x.sizes());
  auto dil = make_conv(3, ConvSpec{3, 4, 1, 4});
  EXPECT_EQ(dil(x).sizes(), (std::vector<int64_t>{1, 4, 32, 48}));
}

TEST(Layers, DilatedConvMatchesLoops) {
  torch::manual_seed(5);
  auto conv = make_conv(2, ConvSpec{3, 3, 1, 2});
  conv->to(torch::kFloat64);
  auto x = torch::randn({1, 2, 7, 9}, torch::kFloat64);
  EXPECT_LT(max_abs(conv(x), conv_ref(x, conv->weight, conv->bias, 2)), 1e-12);
}

TEST(Layers, Upsample) {
  auto x = torch::arange(4, torch::kFloat32).view({1, 1, 2, 2});
  auto n = upsample2x(x, UpsampleMode::kNearest);
  EXPECT_EQ(n.sizes(), (std::vector<int64_t>{1, 1, 4, 4}));
  EXPECT_EQ(n[0][0][1][1].item<float>(), 0.0f);
  EXPECT_EQ(n[0][0][3][3].item<float>(), 3.0f);
  auto b = upsample2x(torch::ones({1, 2, 3, 5}), UpsampleMode::kBilinear);
  EXPECT_TRUE(b.equal(torch::ones({1, 2, 6, 10})));
}

TEST(Layers, CheckChannels) {
  EXPECT_NO_THROW(check_channels(torch::zeros({1, 3, 2, 2}), 3, "t"));
  EXPECT_THROW(check_channels(torch::zeros({1, 4, 2, 2}), 3, "t"), ShapeError);
  EXPECT_THROW(check_channels(torch::zeros({3, 2, 2}), 3, "t"), ShapeError);
}

TEST(Layers, SetTrainable) {
  ResidualBlock block(2);
  set_trainable(*block, false);
  for (const auto& p : block->parameters()) EXPECT_FALSE(p.requires_grad());
  set_trainable(*block, true);
  for (const auto& p : block->parameters()) EXPECT_TRUE(p.requires_grad());
}

TEST(Gradients, LayersMatchFiniteDifferences) {
  torch::manual_seed(6);
  auto x = torch::randn({1, 3, 4, 4}, torch::kFloat64);
  auto slope = torch::rand({3}, torch::kFloat64);
  auto beta = torch::rand({3}, torch::kFloat64) + 0.2;
  auto gamma = torch::rand({3, 3}, torch::kFloat64) * 0.3;
  auto weights = torch::randn({1, 3, 4, 4}, torch::kFloat64);

  EXPECT_LT(gradient_check([&](const auto& in) { return (flowcodec::prelu(in[0], in[1]) * weights).sum(); }, {x, slope}),
            1e-3);
  EXPECT_LT(gradient_check([&](const auto& in) { return (gdn_forward(in[0], {in[1], in[2]}) * weights).sum(); },
                           {x, beta, gamma}),
            1e-3);
  EXPECT_LT(gradient_check([&](const auto& in) { return (igdn_forward(in[0], {in[1], in[2]}) * weights).sum(); },
                           {x, beta, gamma}),
            1e-3);
}
