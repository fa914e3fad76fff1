#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "flowcp/errors.hpp"
#include "flowcp/flow.hpp"
#include "flowcp/model_io.hpp"
#include "flowcp/optim.hpp"
#include "flowcp/stats.hpp"
#include "support/oracles.hpp"

using namespace flowcp;

namespace {

// A coupling layer whose subnets are constant: s_raw such that the squashed
// log-scale equals `log_scale`, shift identically `shift`.
flow::CouplingLayer rigged_layer(double log_scale, double shift, double clamp = 4.0) {
  flow::CouplingLayer layer;
  layer.mask = {1, 0};
  layer.scale_clamp = clamp;
  const double s_raw = clamp * std::atanh(log_scale / clamp);
  layer.scale_net.layers.push_back({num::Tensor2(1, 1), {s_raw}});
  layer.shift_net.layers.push_back({num::Tensor2(1, 1), {shift}});
  return layer;
}

flow::FlowParams random_flow(std::size_t joint_dim, std::size_t cond_dim, num::RngStream& rng,
                             double perturb = 0.5) {
  flow::FlowConfig config;
  config.joint_dim = joint_dim;
  config.cond_dim = cond_dim;
  config.n_layers = 4;
  config.hidden_width = 8;
  config.hidden_depth = 1;
  auto fp = flow::make_flow(config, rng);
  auto flat = flow::flatten(fp);
  for (auto& w : flat) w += perturb * rng.normal();
  flow::assign_params(fp, flat);
  return fp;
}

}  // namespace

TEST_CASE("coupling_forward: zero-initialized nets give the identity") {
  num::RngStream rng(1);
  flow::FlowConfig config;
  config.joint_dim = 3;
  config.cond_dim = 2;
  config.n_layers = 1;
  const auto fp = flow::make_flow(config, rng);
  const std::vector<double> z = {0.3, -1.2, 2.0};
  const std::vector<double> eta = {0.5, -0.5};
  const auto [zp, logdet] = flow::coupling_forward(fp.layers[0], z, eta);
  CHECK(zp == z);
  CHECK(logdet == 0.0);
}

TEST_CASE("coupling_forward: constant log-scale ln2 doubles the coordinate") {
  const auto layer = rigged_layer(std::log(2.0), 0.0);
  const std::vector<double> z = {0.7, 1.5};
  const auto [zp, logdet] = flow::coupling_forward(layer, z, {});
  CHECK(zp[0] == doctest::Approx(0.7));
  CHECK(zp[1] == doctest::Approx(3.0));
  CHECK(logdet == doctest::Approx(0.6931).epsilon(1e-4));

  const auto back = flow::coupling_inverse(layer, zp, {});
  CHECK(back[0] == doctest::Approx(z[0]).epsilon(1e-12));
  CHECK(back[1] == doctest::Approx(z[1]).epsilon(1e-12));
}

TEST_CASE("coupling_forward: logdet matches the finite-difference Jacobian") {
  num::RngStream rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    auto fp = random_flow(2, 0, rng);
    const auto& layer = fp.layers[0];
    std::vector<double> z = {rng.normal(), rng.normal()};

    const auto [zp, logdet] = flow::coupling_forward(layer, z, {});
    (void)zp;

    const double h = 1e-6;
    num::Tensor2 jac(2, 2);
    for (std::size_t j = 0; j < 2; ++j) {
      auto up = z, down = z;
      up[j] += h;
      down[j] -= h;
      const auto fu = flow::coupling_forward(layer, up, {}).first;
      const auto fd = flow::coupling_forward(layer, down, {}).first;
      for (std::size_t i = 0; i < 2; ++i) jac(i, j) = (fu[i] - fd[i]) / (2.0 * h);
    }
    const double det = testing::determinant(jac);
    CHECK(std::abs(logdet - std::log(std::abs(det))) <= 1e-5);
  }
}

TEST_CASE("coupling_inverse: round trip on random layers") {
  num::RngStream rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto fp = random_flow(2, 3, rng);
    const std::vector<double> z = {rng.normal(), rng.normal()};
    const std::vector<double> eta = {rng.normal(), rng.normal(), rng.normal()};
    const auto [zp, logdet] = flow::coupling_forward(fp.layers[0], z, eta);
    (void)logdet;
    const auto back = flow::coupling_inverse(fp.layers[0], zp, eta);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(back[i] - z[i]) <= 1e-9);
  }
}

TEST_CASE("flow_forward: identity at init, composition matches single layer") {
  num::RngStream rng(3);
  flow::FlowConfig config;
  config.joint_dim = 4;
  config.cond_dim = 0;
  config.n_layers = 6;
  const auto fp = flow::make_flow(config, rng);
  const std::vector<double> v = {1.0, -2.0, 0.25, 3.0};
  const auto [out, logdet] = flow::flow_forward(fp, v, {});
  CHECK(out == v);
  CHECK(logdet == 0.0);

  flow::FlowParams single;
  single.joint_dim = 2;
  single.cond_dim = 0;
  single.layers.push_back(rigged_layer(std::log(2.0), 0.25));
  const std::vector<double> z = {0.5, 1.0};
  const auto [a, ld_a] = flow::flow_forward(single, z, {});
  const auto [b, ld_b] = flow::coupling_forward(single.layers[0], z, {});
  CHECK(a == b);
  CHECK(ld_a == ld_b);
}

TEST_CASE("flow bijectivity: inverse(forward(v)) == v within 1e-9") {
  num::RngStream rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.uniform_below(3);
    const std::size_t c = rng.uniform_below(3);
    auto fp = random_flow(m, c, rng);
    std::vector<double> v(m), eta(c);
    for (auto& x : v) x = rng.normal();
    for (auto& x : eta) x = rng.normal();
    const auto [fwd, logdet] = flow::flow_forward(fp, v, eta);
    (void)logdet;
    const auto back = flow::flow_inverse(fp, fwd, eta);
    for (std::size_t i = 0; i < m; ++i) CHECK(std::abs(back[i] - v[i]) <= 1e-9);
  }
}

TEST_CASE("flow_nll: density values against the analytic reference") {
  num::RngStream rng(5);
  flow::FlowConfig config;
  config.joint_dim = 2;
  const auto fp = flow::make_flow(config, rng);  // identity
  const auto ref = flow::ReferenceSpec::unit(2);

  // Single point at the mode: NLL = log(2*pi).
  num::Tensor2 origin(1, 2);
  num::Tensor2 eta0(1, 0);
  CHECK(flow::flow_nll(fp, origin, eta0, ref) == doctest::Approx(std::log(2.0 * M_PI)));

  // Batch from the reference itself: expected NLL is the entropy
  // m/2*(log 2pi + 1) = 2.8379 for m=2.
  num::RngStream sampler(2025);
  const std::size_t n = 10000;
  const auto draws =
      num::gaussian_sample(sampler, std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0}, n);
  num::Tensor2 etas(n, 0);
  CHECK(flow::flow_nll(fp, draws, etas, ref) == doctest::Approx(2.8379).epsilon(0.05 / 2.8379));
}

TEST_CASE("flow_nll_grad: matches central finite differences") {
  num::RngStream rng(31);
  flow::FlowConfig config;
  config.joint_dim = 2;
  config.cond_dim = 2;
  config.n_layers = 2;
  config.hidden_width = 4;
  config.hidden_depth = 1;
  auto fp = flow::make_flow(config, rng);
  auto flat = flow::flatten(fp);
  for (auto& w : flat) w += 0.3 * rng.normal();
  flow::assign_params(fp, flat);

  const std::size_t batch_n = 8;
  num::Tensor2 batch(batch_n, 2);
  num::Tensor2 etas(batch_n, 2);
  for (std::size_t i = 0; i < batch_n; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      batch(i, j) = rng.normal();
      etas(i, j) = rng.normal();
    }
  }
  const auto ref = flow::ReferenceSpec::unit(2);

  flow::FlowGrads grads;
  flow::flow_nll_grad(fp, batch, etas, ref, grads);
  const auto grad_flat = flow::flatten(grads);

  const auto loss = [&](const std::vector<double>& p) {
    flow::FlowParams probe = fp;
    flow::assign_params(probe, p);
    return flow::flow_nll(probe, batch, etas, ref);
  };
  const auto fd = testing::finite_difference_grad(loss, flat, 1e-5);
  REQUIRE(fd.size() == grad_flat.size());
  for (std::size_t i = 0; i < fd.size(); ++i) {
    CHECK(testing::close_rel(grad_flat[i], fd[i], 1e-4));
  }

  // Repeated calls are bitwise identical.
  flow::FlowGrads again;
  flow::flow_nll_grad(fp, batch, etas, ref, again);
  CHECK(flow::flatten(again) == grad_flat);
}

TEST_CASE("flow_nll_grad: near-stationary at the identity on reference samples") {
  num::RngStream rng(8);
  flow::FlowConfig config;
  config.joint_dim = 2;
  config.n_layers = 2;
  config.hidden_width = 8;
  config.hidden_depth = 1;
  const auto fp = flow::make_flow(config, rng);
  const auto ref = flow::ReferenceSpec::unit(2);

  num::RngStream sampler(555);
  const std::size_t n = 10000;
  const auto draws =
      num::gaussian_sample(sampler, std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0}, n);
  num::Tensor2 etas(n, 0);
  flow::FlowGrads grads;
  flow::flow_nll_grad(fp, draws, etas, ref, grads);
  double norm2 = 0.0;
  for (double g : flow::flatten(grads)) norm2 += g * g;
  CHECK(std::sqrt(norm2) < 0.1);
}

TEST_CASE("flow training: monotone early loss and centering of shifted data") {
  // Toy set: shifted Gaussian in joint space.
  num::RngStream sampler(101);
  const std::size_t n = 256;
  const auto batch = num::gaussian_sample(sampler, std::vector<double>{1.0, -0.5},
                                          std::vector<double>{1.0, 1.0}, n);
  num::Tensor2 etas(n, 0);
  const auto ref = flow::ReferenceSpec::unit(2);

  num::RngStream rng(12);
  flow::FlowConfig config;
  config.joint_dim = 2;
  config.n_layers = 4;
  config.hidden_width = 16;
  config.hidden_depth = 1;
  auto fp = flow::make_flow(config, rng);

  auto params = flow::flatten(fp);
  num::OptimizerState opt(params.size());
  const num::AdamConfig adam{5e-3, 0.9, 0.999, 1e-8};

  double prev = flow::flow_nll(fp, batch, etas, ref);
  std::vector<double> losses = {prev};
  for (int step = 0; step < 300; ++step) {
    flow::FlowGrads grads;
    flow::flow_nll_grad(fp, batch, etas, ref, grads);
    num::adam_step(params, flow::flatten(grads), opt, adam);
    flow::assign_params(fp, params);
    losses.push_back(flow::flow_nll(fp, batch, etas, ref));
  }
  for (int step = 0; step < 50; ++step) {
    CHECK(losses[step + 1] < losses[step]);
  }

  // Pushed-forward sample mean lands near the reference mean.
  num::Tensor2 pushed;
  std::vector<double> logdets;
  flow::flow_forward_rows(fp, batch, etas, pushed, logdets);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < pushed.rows(); ++i) mean += pushed(i, j);
    mean /= static_cast<double>(pushed.rows());
    CHECK(std::abs(mean) < 0.1);
  }
}

TEST_CASE("conditioner: trained flow responds to eta, ablation ignores it") {
  num::RngStream rng(77);
  auto fp = random_flow(2, 3, rng, 0.4);
  const std::vector<double> v = {0.2, -0.8};
  const std::vector<double> eta1 = {1.0, 0.0, -1.0};
  const std::vector<double> eta2 = {-1.0, 0.5, 1.0};
  const auto [a, la] = flow::flow_forward(fp, v, eta1);
  const auto [b, lb] = flow::flow_forward(fp, v, eta2);
  (void)la;
  (void)lb;
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 0.0);

  auto ablated = random_flow(2, 0, rng, 0.4);
  const auto [c, lc] = flow::flow_forward(ablated, v, {});
  const auto [d, ld] = flow::flow_forward(ablated, v, {});
  (void)lc;
  (void)ld;
  CHECK(c == d);
  CHECK_THROWS_AS(flow::flow_forward(ablated, v, eta1), ShapeError);
}

TEST_CASE("checkpoint: save/load round-trips weights bit-exactly") {
  num::RngStream rng(202);
  auto fp = random_flow(3, 4, rng);
  const auto path = std::filesystem::temp_directory_path() / "flowcp_test_ckpt.json";
  io::save_flow(fp, path.string());
  const auto loaded = io::load_flow(path.string());
  CHECK(flow::flatten(loaded) == flow::flatten(fp));
  CHECK(loaded.joint_dim == fp.joint_dim);
  CHECK(loaded.cond_dim == fp.cond_dim);
  CHECK(io::flow_config_hash(loaded) == io::flow_config_hash(fp));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(io::load_flow("/nonexistent/path.json"), IoError);
}
