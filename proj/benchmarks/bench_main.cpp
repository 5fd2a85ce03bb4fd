#include <benchmark/benchmark.h>

#include "adlj/autodiff.hpp"
#include "adlj/bev_grid.hpp"
#include "adlj/config.hpp"
#include "adlj/rng.hpp"
#include "adlj/spectrum.hpp"
#include "adlj/trainer.hpp"

using namespace adlj;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Forward and backward of one stride-2 encoder stage, [C,X,Y,Z] = [8,s,s,8].
void BM_Conv3dStage(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto input = random_tensor({1, 8, s, s, 8}, rng);
  auto kernel = random_tensor({8, 8, 3, 3, 3}, rng);
  auto bias = random_tensor({8}, rng);
  for (auto _ : state) {
    ad::Tape tape;
    auto y = ad::conv3d(tape.constant(input), tape.parameter(kernel), tape.parameter(bias), 2, 1);
    tape.backward(ad::sum(y));
    benchmark::DoNotOptimize(kernel.data.data());
  }
}
BENCHMARK(BM_Conv3dStage)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Voxelize(benchmark::State& state) {
  const auto config = profile("desk");
  const auto data = synthetic_dataset(config, 1);
  for (auto _ : state) benchmark::DoNotOptimize(voxelize(data.clouds[0], config.grid));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * data.clouds[0].points.size()));
}
BENCHMARK(BM_Voxelize)->Unit(benchmark::kMicrosecond);

void BM_JacobiSpectrum(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t e = 16;
  Rng rng(2);
  std::vector<double> rows(m * e);
  for (auto& v : rows) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(svd_spectrum(rows, m, e));
}
BENCHMARK(BM_JacobiSpectrum)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

// One optimizer step of the desk profile, including masking and the EMA update.
void BM_TrainStep(benchmark::State& state) {
  auto config = profile("desk");
  config.scenes = 16;
  const auto data = load_dataset(config);
  Trainer trainer(config, data);
  for (auto _ : state) {
    if (trainer.done()) {
      state.PauseTiming();
      trainer = Trainer(config, data);
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(trainer.step());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
