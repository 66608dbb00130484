#include <benchmark/benchmark.h>

#include "nseg/ops.hpp"
#include "nseg/rng.hpp"

using namespace nseg;

namespace {

TensorF random_tensor(Shape s, std::uint64_t seed) {
  SplitMix64 rng(seed);
  TensorF t(s);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_conv2d_forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const TensorF in = random_tensor(Shape{1, c, 64, 64}, 1);
  const ConvParams<float> params(random_tensor(Shape{c, c, 3, 3}, 2));
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_forward(in, params));
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * 64 * 64);
}
BENCHMARK(BM_conv2d_forward)->Arg(8)->Arg(16)->Arg(32);

void BM_conv2d_backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const TensorF in = random_tensor(Shape{1, c, 64, 64}, 3);
  const ConvParams<float> params(random_tensor(Shape{c, c, 3, 3}, 4));
  const TensorF gout = random_tensor(Shape{1, c, 64, 64}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_backward(in, params, gout));
  }
}
BENCHMARK(BM_conv2d_backward)->Arg(8)->Arg(16)->Arg(32);

void BM_batchnorm_train(benchmark::State& state) {
  const TensorF in = random_tensor(Shape{4, 16, 64, 64}, 6);
  const BatchNormParams<float> bn(16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(batchnorm_forward(in, bn, Mode::train));
  }
}
BENCHMARK(BM_batchnorm_train);

void BM_maxpool(benchmark::State& state) {
  const TensorF in = random_tensor(Shape{4, 16, 64, 64}, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(maxpool2x2_forward(in));
  }
}
BENCHMARK(BM_maxpool);

void BM_bce(benchmark::State& state) {
  SplitMix64 rng(8);
  TensorF pred(Shape{4, 1, 64, 64});
  TensorF target(Shape{4, 1, 64, 64});
  for (auto& v : pred.data) v = static_cast<float>(rng.uniform(0.01, 0.99));
  for (auto& v : target.data) v = rng.coin() ? 1.0f : 0.0f;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bce_loss(pred, target));
  }
}
BENCHMARK(BM_bce);

}  // namespace

BENCHMARK_MAIN();
