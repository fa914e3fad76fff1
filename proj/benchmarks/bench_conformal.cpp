#include <benchmark/benchmark.h>

#include "flowcp/conformal.hpp"
#include "flowcp/rng.hpp"

using namespace flowcp;

static void ConformalQuantile(benchmark::State& state) {
  num::RngStream rng(1);
  std::vector<double> scores(static_cast<std::size_t>(state.range(0)));
  for (auto& s : scores) s = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(num::conformal_quantile(scores, 0.1));
  }
}
BENCHMARK(ConformalQuantile)->Range(128, 1 << 16);

static void TransformSet(benchmark::State& state) {
  num::RngStream rng(2);
  flow::FlowConfig config;
  config.joint_dim = 3;
  config.cond_dim = 4;
  config.n_layers = 4;
  config.hidden_width = 32;
  config.hidden_depth = 1;
  auto fp = flow::make_flow(config, rng);
  auto flat = flow::flatten(fp);
  for (auto& w : flat) w += 0.1 * rng.normal();
  flow::assign_params(fp, flat);

  conformal::QuantileModel model;
  model.alpha = 0.1;
  model.net = num::make_mlp(2, {32, 32}, 2, rng);

  conformal::CalibrationResult calib;
  calib.scores = {0.1, 0.2, 0.3};
  calib.tau = 0.25;
  calib.alpha = 0.1;
  calib.n = 3;

  const std::vector<double> x = {0.4, -0.6};
  const std::vector<double> eta = {0.1, -0.2, 0.3, 0.0};
  const conformal::GridSpec grid{-4.0, 4.0, static_cast<std::size_t>(state.range(0))};

  for (auto _ : state) {
    auto set = conformal::transform_set(fp, model, calib, x, eta, grid);
    benchmark::DoNotOptimize(set.measure);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(TransformSet)->Arg(128)->Arg(512);
