// OpenMP kernels against the serial reference, on shapes taken from the
// 64px denoiser (batch 16). Run with --benchmark_filter to pick a kernel.

#include <benchmark/benchmark.h>

#include "repaintlab/ndcore/kernels.hpp"
#include "repaintlab/ndcore/reference.hpp"
#include "repaintlab/rng.hpp"

using namespace repaintlab;
using nd::NdArray;

namespace {

NdArray<float> randn(nd::Shape shape, std::uint64_t seed) {
  NdArray<float> a(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(a.span());
  return a;
}

struct ConvCase {
  NdArray<float> x, w, b;
  std::size_t stride;
};

ConvCase conv_case(const benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  return {randn({16, c, hw, hw}, 1), randn({c, c, 3, 3}, 2), randn({c}, 3), 1};
}

void BM_Conv2d_Fast(benchmark::State& state) {
  const auto k = conv_case(state);
  for (auto _ : state) benchmark::DoNotOptimize(nd::kernels::conv2d(k.x, k.w, &k.b, k.stride, 1));
  state.SetItemsProcessed(state.iterations() * 16);
}

void BM_Conv2d_Reference(benchmark::State& state) {
  const auto k = conv_case(state);
  for (auto _ : state) benchmark::DoNotOptimize(nd::reference::conv2d(k.x, k.w, &k.b, k.stride, 1));
  state.SetItemsProcessed(state.iterations() * 16);
}

void BM_GroupNorm_Fast(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
  const auto x = randn({16, c, hw, hw}, 4), g = randn({c}, 5), b = randn({c}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(nd::kernels::group_norm(x, 8, g, b, 1e-5f));
}

void BM_GroupNorm_Reference(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
  const auto x = randn({16, c, hw, hw}, 4), g = randn({c}, 5), b = randn({c}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(nd::reference::group_norm(x, 8, g, b, 1e-5f));
}

struct AttnCase {
  NdArray<float> x, qkv_w, qkv_b, out_w, out_b;
};

AttnCase attn_case(const benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
  return {randn({16, c, hw, hw}, 7), randn({3 * c, c}, 8), randn({3 * c}, 9), randn({c, c}, 10), randn({c}, 11)};
}

void BM_Attention_Fast(benchmark::State& state) {
  const auto a = attn_case(state);
  for (auto _ : state) benchmark::DoNotOptimize(nd::kernels::self_attention(a.x, a.qkv_w, a.qkv_b, a.out_w, a.out_b, 1));
}

void BM_Attention_Reference(benchmark::State& state) {
  const auto a = attn_case(state);
  for (auto _ : state)
    benchmark::DoNotOptimize(nd::reference::self_attention(a.x, a.qkv_w, a.qkv_b, a.out_w, a.out_b, 1));
}

void BM_Linear_Fast(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = randn({16, n}, 12), w = randn({n, n}, 13), b = randn({n}, 14);
  for (auto _ : state) benchmark::DoNotOptimize(nd::kernels::linear(x, w, &b));
}

void BM_Linear_Reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = randn({16, n}, 12), w = randn({n, n}, 13), b = randn({n}, 14);
  for (auto _ : state) benchmark::DoNotOptimize(nd::reference::linear(x, w, &b));
}

}  // namespace

// {channels, spatial}
BENCHMARK(BM_Conv2d_Fast)->Args({32, 64})->Args({64, 32})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2d_Reference)->Args({32, 64})->Args({64, 32})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GroupNorm_Fast)->Args({32, 64})->Args({64, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GroupNorm_Reference)->Args({32, 64})->Args({64, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention_Fast)->Args({64, 16})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention_Reference)->Args({64, 16})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Linear_Fast)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Linear_Reference)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
