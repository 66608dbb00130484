#include <benchmark/benchmark.h>

#include "nseg/model.hpp"
#include "nseg/ops.hpp"
#include "nseg/rng.hpp"

using namespace nseg;

namespace {

GraphConfig desk_config() {
  GraphConfig cfg;
  cfg.depth = 4;
  cfg.base_channels = 8;
  return cfg;
}

TensorF random_batch(int n, int side, std::uint64_t seed) {
  SplitMix64 rng(seed);
  TensorF t(Shape{n, 1, side, side});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

void BM_model_forward_infer(benchmark::State& state) {
  const auto model = NestedUNetF::build(desk_config(), 1);
  const TensorF batch = random_batch(static_cast<int>(state.range(0)), 64, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(batch, Mode::infer));
  }
}
BENCHMARK(BM_model_forward_infer)->Arg(1)->Arg(4);

void BM_model_train_step(benchmark::State& state) {
  auto model = NestedUNetF::build(desk_config(), 3);
  const TensorF batch = random_batch(4, 64, 4);
  SplitMix64 rng(5);
  TensorF mask(batch.shape);
  for (auto& v : mask.data) v = rng.coin() ? 1.0f : 0.0f;
  const auto heads = model.active_head_positions();
  const float scale = 1.0f / static_cast<float>(heads.size());

  for (auto _ : state) {
    const ForwardTrace<float> trace = model.forward_trace(batch);
    std::vector<TensorF> head_grads;
    for (const int j : heads) {
      BceResult<float> bce = bce_loss(trace.head_probs.at(j), mask);
      for (float& g : bce.grad_pred.data) g *= scale;
      head_grads.push_back(std::move(bce.grad_pred));
    }
    benchmark::DoNotOptimize(model.backward(trace, head_grads));
  }
}
BENCHMARK(BM_model_train_step);

void BM_prune_forward(benchmark::State& state) {
  const auto model = NestedUNetF::build(desk_config(), 6);
  const auto pruned = model.prune(static_cast<int>(state.range(0)));
  const TensorF batch = random_batch(1, 64, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pruned.forward(batch, Mode::infer));
  }
}
BENCHMARK(BM_prune_forward)->Arg(1)->Arg(2)->Arg(3);

}  // namespace

BENCHMARK_MAIN();
