#include <cmath>
#include <random>

#include <benchmark/benchmark.h>

#include "flowcodec/codec.hpp"
#include "flowcodec/entropy_model.hpp"
#include "flowcodec/flow.hpp"
#include "flowcodec/quantization.hpp"
#include "flowcodec/range_coder.hpp"
#include "support/micro_model.hpp"

using namespace flowcodec;

namespace {

CdfTable laplace_table(double b) {
  std::vector<double> pmf;
  for (int k = -32; k <= 32; ++k) pmf.push_back(std::exp(-std::abs(k) / b));
  return make_cdf_table(pmf, -32);
}

std::vector<int32_t> laplace_symbols(size_t n, double b) {
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(1.0 / b);
  std::bernoulli_distribution sign(0.5);
  std::vector<int32_t> out(n);
  for (auto& s : out) s = static_cast<int32_t>(std::min(32.0, std::round(e(rng)))) * (sign(rng) ? 1 : -1);
  return out;
}

void BM_RangeEncode(benchmark::State& state) {
  const auto table = laplace_table(3.0);
  const auto symbols = laplace_symbols(static_cast<size_t>(state.range(0)), 3.0);
  for (auto _ : state) {
    RangeEncoder enc;
    for (int32_t s : symbols) enc.encode_symbol(s, table);
    benchmark::DoNotOptimize(enc.finish());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RangeEncode)->Arg(1 << 16);

void BM_RangeDecode(benchmark::State& state) {
  const auto table = laplace_table(3.0);
  const auto symbols = laplace_symbols(static_cast<size_t>(state.range(0)), 3.0);
  RangeEncoder enc;
  for (int32_t s : symbols) enc.encode_symbol(s, table);
  const auto bytes = enc.finish();
  for (auto _ : state) {
    RangeDecoder dec(bytes);
    int64_t sum = 0;
    for (size_t i = 0; i < symbols.size(); ++i) sum += dec.decode_symbol(table);
    benchmark::DoNotOptimize(sum);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RangeDecode)->Arg(1 << 16);

void BM_GaussianEncode(benchmark::State& state) {
  torch::manual_seed(2);
  const std::vector<int64_t> shape{1, 32, 16, 16};
  auto mean = torch::randn(shape) * 2;
  auto scale = torch::exp(torch::rand(shape) * 3 - 0.5);
  const auto symbols = to_symbols(quantize_infer(mean + scale * torch::randn(shape)));
  GaussianTableBank bank;
  for (auto _ : state) {
    RangeEncoder enc;
    encode_gaussian(enc, symbols, {mean, scale}, bank);
    benchmark::DoNotOptimize(enc.finish());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(symbols.size()));
}
BENCHMARK(BM_GaussianEncode);

void BM_Warp(benchmark::State& state) {
  torch::set_num_threads(1);
  const int64_t s = state.range(0);
  auto img = torch::rand({1, 3, s, s});
  auto flow = torch::randn({1, 2, s, s}) * 2;
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(warp(img, flow));
  state.SetItemsProcessed(state.iterations() * s * s);
}
BENCHMARK(BM_Warp)->Arg(64)->Arg(256);

void BM_ToyForwardP(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::manual_seed(3);
  CodecModel model(ModelConfig::preset("toy"));
  model->eval();
  auto cur = torch::rand({1, 3, 64, 64});
  auto ref = torch::rand({1, 3, 64, 64});
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(model->forward_p(cur, ref, QuantMode::kRound).reconstruction);
}
BENCHMARK(BM_ToyForwardP)->Unit(benchmark::kMillisecond);

void BM_EncodeVideoMicro(benchmark::State& state) {
  torch::set_num_threads(1);
  auto model = testing::micro_model(4);
  const auto video = testing::moving_square(7, 64);
  CodecOptions opts;
  opts.gop_size = 7;
  for (auto _ : state) benchmark::DoNotOptimize(encode_video(video, model, opts).payload_bits());
}
BENCHMARK(BM_EncodeVideoMicro)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
