#include <benchmark/benchmark.h>

#include "mrsgd/network.hpp"
#include "mrsgd/partition.hpp"
#include "mrsgd/rng.hpp"
#include "mrsgd/tensor.hpp"

using namespace mrsgd;

namespace {

Tensor filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  RngStream rng(seed, 0);
  Tensor t({r, c});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = filled(n, n, 1), b = filled(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(4)->Range(16, 256);

void BM_MnistForward(benchmark::State& state) {
  Network net = Network::dense({784, 512, 10}, Activation::relu, Activation::softmax, true, RngStream(3, 0));
  const Tensor x = filled(64, 784, 4);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_MnistForward);

void BM_MnistBackward(benchmark::State& state) {
  Network net = Network::dense({784, 512, 10}, Activation::relu, Activation::softmax, true, RngStream(5, 0));
  const Tensor x = filled(64, 784, 6);
  std::vector<std::int64_t> labels(64);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int64_t>(i % 10);
  const Tensor t = one_hot(labels, 10);
  net.forward(x);
  const bool truncated = state.range(0) != 0;
  for (auto _ : state) {
    if (truncated) {
      benchmark::DoNotOptimize(net.backward_from(1, LossKind::cross_entropy, t));
    } else {
      benchmark::DoNotOptimize(net.backward_full(LossKind::cross_entropy, t));
    }
  }
}
BENCHMARK(BM_MnistBackward)->Arg(0)->Arg(1);

void BM_Philox(benchmark::State& state) {
  RngStream rng(7, 0);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    rng.fill_bernoulli(out.data(), out.size(), 0.8);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Philox)->Arg(1 << 12)->Arg(1 << 18);

void BM_ResampleMask(benchmark::State& state) {
  const Network net = Network::dense({784, 512, 10}, Activation::relu, Activation::softmax, true, RngStream(8, 0));
  RngStream rng(9, 0);
  const Partition p = sample_random_subset(net, {0.8, 0.5}, rng, 5, false);
  for (auto _ : state) benchmark::DoNotOptimize(p.resample(rng));
}
BENCHMARK(BM_ResampleMask);

}  // namespace
BENCHMARK_MAIN();
