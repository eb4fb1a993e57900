#include <gtest/gtest.h>

#include "flowcodec/errors.hpp"
#include "flowcodec/flow.hpp"
#include "flowcodec/video_io.hpp"
#include "support/oracles.hpp"

using namespace flowcodec;
using namespace flowcodec::testing;

TEST(Warp, MatchesLoopOracle) {
  torch::manual_seed(11);
  auto img = torch::rand({2, 3, 9, 11}, torch::kFloat64);
  auto flow = torch::randn({2, 2, 9, 11}, torch::kFloat64) * 3.0;  // includes out-of-image samples
  EXPECT_LT((warp(img, flow) - warp_ref(img, flow)).abs().max().item<double>(), 1e-12);
}

TEST(Warp, ZeroFlowIsBitExact) {
  auto img = torch::rand({1, 3, 16, 16});
  EXPECT_TRUE(warp(img, torch::zeros({1, 2, 16, 16})).equal(img));
}

TEST(Warp, IntegerFlowShifts) {
  auto img = torch::rand({1, 1, 8, 8}, torch::kFloat64);
  auto flow = torch::zeros({1, 2, 8, 8}, torch::kFloat64);
  flow[0][0].fill_(2.0);   // sample two pixels to the right
  flow[0][1].fill_(-1.0);  // and one pixel above
  auto out = warp(img, flow);
  for (int y = 1; y < 8; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(out[0][0][y][x].item<double>(), img[0][0][y - 1][x + 2].item<double>());
}

TEST(Warp, BorderClamp) {
  auto img = torch::rand({1, 1, 4, 4}, torch::kFloat64);
  auto flow = torch::full({1, 2, 4, 4}, -100.0, torch::kFloat64);
  auto out = warp(img, flow);
  EXPECT_TRUE(out.eq(img[0][0][0][0]).all().item<bool>());
}

TEST(Warp, SyntheticTranslationIsExplainedByBackwardFlow) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::kTranslatingTexture;
  spec.n_frames = 2;
  spec.size = 32;
  spec.velocity_x = 2.0;
  spec.velocity_y = -1.0;
  const auto video = make_synthetic_sequence(spec);
  auto flow = synthetic_backward_flow(spec).unsqueeze(0);
  EXPECT_FLOAT_EQ(flow[0][0][5][5].item<float>(), -2.0f);
  auto pred = warp(video.frames[0].batch(), flow);
  // Away from the clamped border the prediction is exact.
  auto diff = (pred - video.frames[1].batch()).abs().slice(2, 0, 31).slice(3, 2, 32);
  EXPECT_LT(diff.max().item<float>(), 1e-6f);
}

TEST(Warp, RejectsMismatchedShapes) {
  EXPECT_THROW(warp(torch::zeros({1, 3, 8, 8}), torch::zeros({1, 2, 8, 7})), ShapeError);
  EXPECT_THROW(warp(torch::zeros({1, 3, 8, 8}), torch::zeros({1, 3, 8, 8})), ShapeError);
}

TEST(Gradients, WarpMatchesFiniteDifferences) {
  torch::manual_seed(12);
  auto img = torch::rand({1, 2, 6, 7}, torch::kFloat64);
  auto flow = torch::rand({1, 2, 6, 7}, torch::kFloat64) * 0.8 + 0.1;  // fractional, off the grid lines
  auto weights = torch::randn({1, 2, 6, 7}, torch::kFloat64);
  EXPECT_LT(gradient_check([&](const auto& in) { return (warp(in[0], in[1]) * weights).sum(); }, {img, flow}),
            1e-3);
}

TEST(FlowEstimator, ShapesAndZeroHeads) {
  torch::manual_seed(13);
  FlowEstimator net(FlowEstimatorConfig{{8, 8, 8}, 3});
  auto a = torch::rand({2, 3, 32, 48});
  auto b = torch::rand({2, 3, 32, 48});
  auto flow = net->forward(a, b);
  EXPECT_EQ(flow.sizes(), (std::vector<int64_t>{2, 2, 32, 48}));
  EXPECT_TRUE(torch::isfinite(flow).all().item<bool>());
  net->zero_heads();
  EXPECT_TRUE(net->forward(a, a).eq(0).all().item<bool>());
}

TEST(FlowEstimator, RejectsSizesNotDivisibleByFour) {
  FlowEstimator net(FlowEstimatorConfig{{8, 8, 8}, 3});
  EXPECT_THROW(net->forward(torch::rand({1, 3, 30, 32}), torch::rand({1, 3, 30, 32})), ShapeError);
}

TEST(FlowEstimator, EndpointError) {
  auto a = torch::zeros({1, 2, 4, 4});
  auto b = torch::zeros({1, 2, 4, 4});
  b.select(1, 0).fill_(3.0);
  b.select(1, 1).fill_(4.0);
  EXPECT_DOUBLE_EQ(mean_endpoint_error(a, b), 5.0);
}

TEST(Warp, NonFiniteFlowPropagatesInsteadOfThrowing) {
  auto img = torch::rand({1, 3, 4, 4});
  auto flow = torch::zeros({1, 2, 4, 4});
  flow[0][0][1][1] = NAN;
  auto out = warp(img, flow);
  EXPECT_TRUE(std::isnan(out[0][0][1][1].item<float>()));
  EXPECT_EQ(out[0][0][2][2].item<float>(), img[0][0][2][2].item<float>());
}
