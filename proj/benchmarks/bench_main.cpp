#include <benchmark/benchmark.h>

#include <random>

#include "bronchograde/augment.hpp"
#include "bronchograde/interpret.hpp"
#include "bronchograde/metrics.hpp"

using namespace bronchograde;

namespace {

Image noise(int size) {
  std::mt19937 gen(7);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(size) * size * 3);
  for (auto& p : px) p = static_cast<std::uint8_t>(gen());
  return Image(size, size, std::move(px));
}

void BM_Rotate90(benchmark::State& state) {
  const auto img = noise(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(augment::rotate(img, 90));
}
BENCHMARK(BM_Rotate90)->Arg(64)->Arg(256);

void BM_Scale(benchmark::State& state) {
  const auto img = noise(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(augment::scale(img, 1.3, 1.2));
}
BENCHMARK(BM_Scale)->Arg(64)->Arg(256);

void BM_Crop(benchmark::State& state) {
  const auto img = noise(256);
  for (auto _ : state) benchmark::DoNotOptimize(augment::crop(img, {0.1, 0.2, 0.7, 0.6}));
}
BENCHMARK(BM_Crop);

void BM_Metrics(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937 gen(3);
  std::vector<int> truth(n), pred(n);
  for (std::size_t i = 0; i < n; ++i) truth[i] = 1 + static_cast<int>(gen() % 6), pred[i] = 1 + static_cast<int>(gen() % 6);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::compute_metrics(metrics::confusion_matrix(truth, pred)));
}
BENCHMARK(BM_Metrics)->Arg(1000)->Arg(100000);

void BM_Spectrum(benchmark::State& state) {
  const auto img = noise(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(interpret::frequency_spectrum(img));
}
BENCHMARK(BM_Spectrum)->Arg(64)->Arg(256);

void BM_GradCamFromMaps(benchmark::State& state) {
  const int c = 64, h = 8, w = 8;
  std::mt19937 gen(5);
  std::normal_distribution<double> nd;
  FeatureMaps a{c, h, w, std::vector<double>(c * h * w)}, g{c, h, w, std::vector<double>(c * h * w)};
  for (auto& v : a.data) v = std::abs(nd(gen));
  for (auto& v : g.data) v = nd(gen);
  for (auto _ : state) benchmark::DoNotOptimize(interpret::grad_cam_from_maps(a, g, 256, 256));
}
BENCHMARK(BM_GradCamFromMaps);

}  // namespace

BENCHMARK_MAIN();
