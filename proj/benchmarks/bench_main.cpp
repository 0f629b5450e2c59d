#include <benchmark/benchmark.h>

#include <random>

#include "energyfc/dataset.hpp"
#include "energyfc/nn.hpp"
#include "energyfc/optimizer.hpp"

namespace {

using namespace energyfc;

NetworkConfig lstmp(int h_cell, int h_out) {
  NetworkConfig c;
  c.cell_size = h_cell;
  c.output_size = h_out;
  return c;
}

Eigen::MatrixXd random_steps(const NetworkConfig& c, Eigen::Index batch) {
  return Eigen::MatrixXd::Random(c.seq_len * batch, c.input_size);
}

void BM_ForwardBatch(benchmark::State& state) {
  const auto config = lstmp(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto params = init_params(config, 1);
  const auto steps = random_steps(config, 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_batch(config, params, steps, nullptr));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_ForwardBatch)->Args({32, 1})->Args({64, 10})->Args({64, 50})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto config = lstmp(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  auto params = init_params(config, 1);
  const auto steps = random_steps(config, 256);
  const Eigen::MatrixXd target = Eigen::MatrixXd::Random(256, config.output_size);
  Gradients grads = NetworkParams::zeros(config);
  AdamState adam = AdamState::zeros(config);
  Hyperparams hp;
  BatchTape tape;
  Eigen::MatrixXd d_pred;
  for (auto _ : state) {
    const Eigen::MatrixXd pred = forward_batch(config, params, steps, &tape);
    benchmark::DoNotOptimize(mse_loss_batch(pred, target, &d_pred));
    grads.set_zero();
    backward_batch(config, params, tape, d_pred, grads);
    clip_global_norm(grads, hp.clip_norm);
    adam_step(params, grads, adam, hp);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_TrainStep)->Args({2, 1})->Args({32, 1})->Args({64, 10})->Args({64, 50})->Unit(benchmark::kMillisecond);

void BM_Downsample(benchmark::State& state) {
  RawTrace raw;
  raw.currents_ua.resize(static_cast<std::size_t>(state.range(0)));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 11329.68);
  for (auto& x : raw.currents_ua) x = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(downsample(raw, 100));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Downsample)->Arg(1'000'000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
