#include <benchmark/benchmark.h>

#include "flowcp/flow.hpp"
#include "flowcp/rng.hpp"
#include "flowcp/stats.hpp"

using namespace flowcp;

namespace {

flow::FlowParams bench_flow_params(std::size_t layers, std::size_t hidden, std::size_t depth) {
  num::RngStream rng(1);
  flow::FlowConfig config;
  config.joint_dim = 3;
  config.cond_dim = 4;
  config.n_layers = layers;
  config.hidden_width = hidden;
  config.hidden_depth = depth;
  auto fp = flow::make_flow(config, rng);
  auto flat = flow::flatten(fp);
  for (auto& w : flat) w += 0.1 * rng.normal();
  flow::assign_params(fp, flat);
  return fp;
}

}  // namespace

static void FlowForwardBatch(benchmark::State& state) {
  const auto fp = bench_flow_params(static_cast<std::size_t>(state.range(0)), 32, 1);
  num::RngStream rng(2);
  const std::size_t n = 512;
  num::Tensor2 vs(n, 3);
  for (auto& v : vs.data()) v = rng.normal();
  const std::vector<double> eta = {0.1, -0.2, 0.3, 0.0};

  num::Tensor2 out;
  std::vector<double> logdets;
  for (auto _ : state) {
    flow::flow_forward_batch(fp, vs, eta, out, logdets);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(FlowForwardBatch)->Arg(4)->Arg(6);

static void FlowNllGrad(benchmark::State& state) {
  const auto fp = bench_flow_params(4, static_cast<std::size_t>(state.range(0)), 2);
  num::RngStream rng(3);
  const std::size_t n = 64;
  num::Tensor2 batch(n, 3);
  num::Tensor2 etas(n, 4);
  for (auto& v : batch.data()) v = rng.normal();
  for (auto& v : etas.data()) v = rng.normal();
  const auto ref = flow::ReferenceSpec::unit(3);

  flow::FlowGrads grads;
  for (auto _ : state) {
    const double loss = flow::flow_nll_grad(fp, batch, etas, ref, grads);
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(FlowNllGrad)->Arg(32)->Arg(64);

static void FlowInverse(benchmark::State& state) {
  const auto fp = bench_flow_params(6, 64, 2);
  num::RngStream rng(4);
  std::vector<double> v = {rng.normal(), rng.normal(), rng.normal()};
  const std::vector<double> eta = {0.1, -0.2, 0.3, 0.0};
  for (auto _ : state) {
    auto out = flow::flow_inverse(fp, v, eta);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(FlowInverse);
