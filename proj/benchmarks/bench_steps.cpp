#include <benchmark/benchmark.h>

#include <vector>

#include "mrsgd/network.hpp"
#include "mrsgd/optimizer.hpp"
#include "mrsgd/partition.hpp"
#include "mrsgd/rng.hpp"

using namespace mrsgd;

namespace {

std::vector<Batch> batches(std::size_t count, std::size_t rows, std::size_t in, std::size_t classes) {
  RngStream rng(11, 0);
  std::vector<Batch> out;
  for (std::size_t b = 0; b < count; ++b) {
    Tensor x({rows, in});
    for (double& v : x.values()) v = rng.uniform();
    std::vector<std::int64_t> labels(rows);
    for (auto& y : labels) y = static_cast<std::int64_t>(rng.uniform_index(classes));
    out.push_back({std::move(x), one_hot(labels, classes)});
  }
  return out;
}

// Deep narrow MLP: k vanilla steps vs one multirate macro step with a
// one-layer fast suffix.
void BM_DeepStep(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const bool multirate = state.range(1) != 0;
  std::vector<std::size_t> widths{64};
  for (int i = 0; i < 7; ++i) widths.push_back(128);
  widths.push_back(10);
  Network net = Network::dense(widths, Activation::relu, Activation::softmax, true, RngStream(12, 0));
  NetworkObjective obj(net, LossKind::cross_entropy);
  OptState s = OptState::zeros(net.layout());
  const Partition part = layerwise(net, 1);
  MultirateConfig cfg;
  cfg.h = 1e-3;
  cfg.k = k;
  cfg.momentum = 0.9;
  const auto data = batches(k, 32, 64, 10);
  for (auto _ : state) {
    if (multirate) {
      macro_step(obj, s, part, cfg, data);
    } else {
      for (const Batch& b : data) vanilla_step(obj, s, b, cfg);
    }
  }
}
BENCHMARK(BM_DeepStep)->ArgsProduct({{1, 5, 10}, {0, 1}});

void BM_RandomSubsetCycle(benchmark::State& state) {
  Network net = Network::dense({784, 512, 10}, Activation::relu, Activation::softmax, true, RngStream(13, 0));
  NetworkObjective obj(net, LossKind::cross_entropy);
  OptState s = OptState::zeros(net.layout(), RngStream(14, 0));
  MultirateConfig cfg;
  cfg.h = 0.1;
  cfg.k = 5;
  Partition part = sample_random_subset(net, {0.8, 0.5}, s.rng, cfg.k, false);
  const auto data = batches(cfg.k + 1, 64, 784, 10);
  for (auto _ : state) random_subset_cycle(obj, s, part, cfg, data);
}
BENCHMARK(BM_RandomSubsetCycle)->Unit(benchmark::kMillisecond);

}  // namespace
