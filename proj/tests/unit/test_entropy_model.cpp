#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "flowcodec/entropy_model.hpp"
#include "flowcodec/errors.hpp"
#include "flowcodec/quantization.hpp"
#include "support/oracles.hpp"

using namespace flowcodec;
using namespace flowcodec::testing;

namespace {

EntropyParams params_like(const torch::Tensor& mean, const torch::Tensor& scale) { return {mean, scale}; }

double bits_of(double q, double mu, double sigma) {
  auto t = [](double v) { return torch::tensor({v}, torch::kFloat64); };
  return gaussian_bits(t(q), params_like(t(mu), t(sigma))).item<double>();
}

}  // namespace

TEST(GaussianBits, MatchesScipyReference) {
  // tests/oracles/gen_oracles.py
  EXPECT_NEAR(bits_of(0, 0.0, 1.0), 1.384866534291, 1e-9);
  EXPECT_NEAR(bits_of(3, 0.2, 0.7), 10.944566470419, 1e-9);
  EXPECT_NEAR(bits_of(-2, 0.4, 2.5), 3.313256353925, 1e-9);
  EXPECT_NEAR(bits_of(40, 0.0, 1.0), 16.0, 1e-12);   // probability floor
  EXPECT_NEAR(bits_of(1, 0.0, 1e-4), 16.0, 1e-12);   // scale floor, then probability floor
}

TEST(GaussianBits, SymmetricAndMonotone) {
  for (double mu : {-1.3, 0.0, 0.49}) {
    double prev = 0;
    for (int d = 0; d < 8; ++d) {
      const double b = bits_of(std::round(mu) + d, mu, 1.5);
      EXPECT_GE(b, prev - 1e-12);
      prev = b;
    }
  }
  EXPECT_NEAR(bits_of(2, 0.0, 1.0), bits_of(-2, 0.0, 1.0), 1e-12);
  EXPECT_LE(bits_of(500, 0.0, 1.0), 16.0);
}

TEST(GaussianBits, SumsToOneOverIntegers) {
  for (double sigma : {0.3, 1.0, 7.0})
    for (double mu : {0.0, 0.37}) {
      // Floored tail bins carry 2^-16 each; the rest hold the true mass.
      double total = 0;
      int floored = 0;
      for (int q = -80; q <= 80; ++q) {
        const double b = bits_of(q, mu, sigma);
        if (b >= 16.0 - 1e-12) {
          ++floored;
        } else {
          total += std::exp2(-b);
        }
      }
      EXPECT_LE(total, 1.0 + 1e-9);
      EXPECT_GE(total, 1.0 - floored * std::exp2(-16.0) - 1e-9);
    }
}

TEST(GaussianBits, ShapeMismatchThrows) {
  EXPECT_THROW(gaussian_bits(torch::zeros({2}), {torch::zeros({3}), torch::ones({3})}), ShapeError);
}

TEST(Gradients, EstimateBitsMatchesFiniteDifferences) {
  torch::manual_seed(31);
  auto q = torch::randn({1, 2, 3, 3}, torch::kFloat64) * 2;
  auto mean = torch::randn({1, 2, 3, 3}, torch::kFloat64);
  auto scale = torch::rand({1, 2, 3, 3}, torch::kFloat64) * 2 + 0.3;
  EXPECT_LT(gradient_check([](const auto& in) { return estimate_bits(in[0], {in[1], in[2]}); }, {q, mean, scale}),
            1e-3);
}

TEST(Quantization, RoundingAndNoise) {
  auto z = torch::tensor({-2.5, -1.5, -0.5, 0.49, 0.5, 1.5, 2.51});
  auto q = quantize_infer(z);
  EXPECT_TRUE(q.equal(torch::tensor({-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0}).to(q.dtype())));
  auto gen = at::detail::createCPUGenerator(5);
  auto big = torch::randn({10000});
  auto noisy = quantize_train(big, gen);
  auto d = noisy - big;
  EXPECT_LE(d.max().item<float>(), 0.5f);
  EXPECT_GE(d.min().item<float>(), -0.5f);
  EXPECT_NEAR(d.mean().item<float>(), 0.0f, 0.02f);
  EXPECT_NEAR(d.var().item<float>(), 1.0f / 12.0f, 0.005f);
}

TEST(Quantization, NoiseHasIdentityGradient) {
  auto z = torch::randn({5}, torch::requires_grad());
  quantize_train(z).sum().backward();
  EXPECT_TRUE(z.grad().equal(torch::ones({5})));
}

TEST(Quantization, SymbolsRoundTrip) {
  auto q = quantize_infer(torch::randn({2, 3, 4, 5}) * 50);
  const auto s = to_symbols(q);
  EXPECT_EQ(s.size(), 120u);
  EXPECT_TRUE(from_symbols(s, q.sizes()).equal(q));
  EXPECT_THROW(to_symbols(torch::tensor({1e12})), ArgumentError);
}

TEST(FactorizedPrior, PmfAndBitsAgreeAtIntegers) {
  torch::manual_seed(32);
  FactorizedPrior prior(3);
  {
    torch::NoGradGuard g;
    prior->logits.add_(torch::randn_like(prior->logits));
  }
  auto pmf = prior->pmf();
  EXPECT_LT((pmf.sum(1) - 1).abs().max().item<float>(), 1e-5f);
  auto values = torch::zeros({1, 3, 1, 3});
  values[0][0][0][0] = -64;
  values[0][1][0][1] = 5;
  values[0][2][0][2] = 63;
  auto bits = prior->bits(values);
  auto expect = [&](int c, int v) { return -std::log2(std::max(pmf[c][v - kSupportMin].item<double>(), kProbabilityFloor)); };
  EXPECT_NEAR(bits[0][0][0][0].item<double>(), expect(0, -64), 1e-4);
  EXPECT_NEAR(bits[0][1][0][1].item<double>(), expect(1, 5), 1e-4);
  EXPECT_NEAR(bits[0][2][0][2].item<double>(), expect(2, 63), 1e-4);
  // Outside the support the mass is floored.
  values[0][0][0][0] = 200;
  EXPECT_NEAR(prior->bits(values)[0][0][0][0].item<double>(), 16.0, 1e-6);
}

TEST(Gradients, FactorizedPriorMatchesFiniteDifferences) {
  torch::manual_seed(33);
  FactorizedPrior prior(2);
  prior->to(torch::kFloat64);
  auto values = torch::rand({1, 2, 2, 2}, torch::kFloat64) * 6 - 3 + 0.13;  // noisy, off the knots
  auto logits = prior->logits.detach().clone();
  // bits() reads the public logits member, so substituting it routes the
  // check through the learned table as well.
  auto loss = [&](const std::vector<torch::Tensor>& in) {
    prior->logits = in[1];
    return prior->bits(in[0]).sum();
  };
  EXPECT_LT(gradient_check(loss, {values, logits}), 1e-3);
}

TEST(HyperPrior, ShapesAndScaleFloor) {
  torch::manual_seed(34);
  HyperPrior hp(8, 4);
  auto latent = torch::randn({2, 8, 5, 7});
  auto z = hp->encode(latent);
  EXPECT_EQ(z.sizes(), (std::vector<int64_t>{2, 4, 2, 2}));
  auto p = hp->decode(quantize_infer(z), {5, 7});
  EXPECT_EQ(p.mean.sizes(), latent.sizes());
  EXPECT_GE(p.scale.min().item<float>(), static_cast<float>(kScaleFloor));
  EXPECT_THROW(hp->decode(torch::zeros({1, 4, 1, 1}), {5, 7}), ShapeError);
}

TEST(TableBank, ChoiceRules) {
  GaussianTableBank bank;
  EXPECT_EQ(bank.choose(2.49, 1.0).center, 2);
  EXPECT_EQ(bank.choose(2.5, 1.0).center, 3);
  EXPECT_EQ(bank.choose(-0.5, 1.0).center, 0);
  EXPECT_EQ(bank.choose(-0.51, 1.0).center, -1);
  // Same fractional part and scale share a table.
  EXPECT_EQ(bank.choose(0.25, 0.8).table, bank.choose(7.25, 0.8).table);
  EXPECT_NE(bank.choose(0.25, 0.8).table, bank.choose(0.25, 3.0).table);
  // Out-of-grid scales are clamped.
  EXPECT_EQ(bank.choose(0, 1e-9).table, bank.choose(0, GaussianTableBank::kScaleMin).table);
  EXPECT_EQ(bank.choose(0, 1e9).table, bank.choose(0, GaussianTableBank::kScaleMax).table);
  EXPECT_THROW(bank.table(GaussianTableBank::kScaleLevels * GaussianTableBank::kOffsetLevels), ArgumentError);
}

TEST(TableBank, TablesAreSortedAndCached) {
  GaussianTableBank bank;
  const auto idx = bank.choose(0.1, 2.0).table;
  const auto& t1 = bank.table(idx);
  const auto& t2 = bank.table(idx);
  EXPECT_EQ(&t1, &t2);
  EXPECT_LE(t1.min_symbol(), -17);
  EXPECT_GE(t1.max_symbol(), 17);
  const auto& wide = bank.table(bank.choose(0.0, 60.0).table);
  EXPECT_EQ(wide.min_symbol(), kSupportMin);
  EXPECT_EQ(wide.max_symbol(), kSupportMax);
}

TEST(GaussianCoding, RoundTripIncludingTails) {
  torch::manual_seed(35);
  const std::vector<int64_t> shape{1, 4, 6, 6};
  auto mean = torch::randn(shape) * 3;
  auto scale = torch::rand(shape) * 5 + 0.05;
  auto q = quantize_infer(mean + scale * torch::randn(shape));
  q.view(-1)[0] = 5000;  // escape
  q.view(-1)[1] = -5000;
  const auto symbols = to_symbols(q);
  GaussianTableBank bank;
  RangeEncoder enc;
  encode_gaussian(enc, symbols, {mean, scale}, bank);
  const auto bytes = enc.finish();
  GaussianTableBank fresh;
  RangeDecoder dec(bytes);
  EXPECT_EQ(decode_gaussian(dec, {mean, scale}, fresh), symbols);
}

TEST(GaussianCoding, CodedSizeMatchesEstimateOnSyntheticLatents) {
  // Latents drawn from known Gaussians: the coder should stay within 2% of
  // the model estimate.
  torch::manual_seed(36);
  const std::vector<int64_t> shape{1, 16, 32, 32};
  auto mean = torch::randn(shape) * 2;
  auto scale = torch::exp(torch::rand(shape) * 3 - 0.5);  // ~0.6 .. 12
  auto q = quantize_infer(mean + scale * torch::randn(shape));
  const double estimate = estimate_bits(q, {mean, scale}).item<double>();
  GaussianTableBank bank;
  RangeEncoder enc;
  encode_gaussian(enc, to_symbols(q), {mean, scale}, bank);
  const double actual = 8.0 * static_cast<double>(enc.finish().size());
  EXPECT_LT(std::abs(actual - estimate) / estimate, 0.02) << actual << " vs " << estimate;
}

TEST(FactorizedCoding, RoundTrip) {
  torch::manual_seed(37);
  FactorizedPrior prior(3);
  const auto tables = factorized_tables(*prior);
  ASSERT_EQ(tables.size(), 3u);
  auto q = quantize_infer(torch::randn({1, 3, 4, 5}) * 6);
  q.view(-1)[7] = 300;
  const auto symbols = to_symbols(q);
  RangeEncoder enc;
  encode_factorized(enc, symbols, q.sizes(), tables);
  const auto bytes = enc.finish();
  RangeDecoder dec(bytes);
  EXPECT_EQ(decode_factorized(dec, q.sizes(), tables), symbols);
  EXPECT_THROW(encode_factorized(enc, symbols, {1, 4, 4, 5}, tables), ShapeError);
}
