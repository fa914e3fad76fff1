#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "flowcp/conformal.hpp"
#include "flowcp/errors.hpp"
#include "flowcp/flow.hpp"
#include "support/oracles.hpp"

using namespace flowcp;

namespace {

// Net with zero weights and chosen biases: constant heads everywhere.
conformal::QuantileModel rigged_model(double q_lo, double q_hi, double alpha = 0.1,
                                      std::size_t input_dim = 1) {
  conformal::QuantileModel model;
  model.alpha = alpha;
  const double gap = q_hi - q_lo;
  REQUIRE(gap > 0.0);
  const double raw_gap = std::log(std::expm1(gap));
  model.net.layers.push_back({num::Tensor2(2, input_dim), {q_lo, raw_gap}});
  return model;
}

conformal::CalibrationResult fixed_tau(double tau, double alpha = 0.1) {
  conformal::CalibrationResult result;
  result.tau = tau;
  result.alpha = alpha;
  result.scores = {tau};
  result.n = 1;
  return result;
}

flow::FlowParams identity_flow(std::size_t joint_dim, std::size_t cond_dim = 0) {
  num::RngStream rng(1);
  flow::FlowConfig config;
  config.joint_dim = joint_dim;
  config.cond_dim = cond_dim;
  config.n_layers = 4;
  config.hidden_width = 8;
  config.hidden_depth = 1;
  return flow::make_flow(config, rng);
}

}  // namespace

TEST_CASE("pinball_loss: definition cases") {
  CHECK(conformal::pinball_loss(0.0, 1.0, 0.9) == doctest::Approx(0.9));
  CHECK(conformal::pinball_loss(0.0, -1.0, 0.9) == doctest::Approx(0.1));
  num::RngStream rng(4);
  for (int i = 0; i < 10; ++i) {
    const double pred = rng.normal();
    const double y = rng.normal();
    CHECK(conformal::pinball_loss(pred, y, 0.5) == doctest::Approx(0.5 * std::abs(y - pred)));
  }
}

TEST_CASE("cqr_score: distance outside the raw band, negative inside") {
  const auto model = rigged_model(-1.0, 1.0);
  const std::vector<double> x = {0.3};
  CHECK(conformal::cqr_score(model, x, 2.0) == doctest::Approx(1.0));
  CHECK(conformal::cqr_score(model, x, 0.0) == doctest::Approx(-1.0));
  CHECK(conformal::cqr_score(model, x, -3.0) == doctest::Approx(2.0));
}

TEST_CASE("calibrate: quantile arithmetic and degeneracies") {
  // Heads pinned at 0 make the score |y|.
  auto model = rigged_model(-1e-9, 1e-9);
  num::Tensor2 xs(10, 1);
  std::vector<double> ys;
  for (int i = 1; i <= 10; ++i) ys.push_back(i);
  auto result = conformal::calibrate(model, xs, ys, 0.1);
  CHECK(result.tau == doctest::Approx(10.0));
  CHECK(result.n == 10);

  // Points already inside a wide band give a negative threshold.
  const auto wide = rigged_model(-5.0, 5.0);
  num::Tensor2 xs2(4, 1);
  const std::vector<double> inside = {0.0, 1.0, -1.0, 2.0};
  const auto res2 = conformal::calibrate(wide, xs2, inside, 0.5);
  CHECK(res2.tau < 0.0);

  // Small-n degeneracy: rank exceeds n.
  num::Tensor2 xs3(2, 1);
  const std::vector<double> two = {0.5, 1.5};
  const auto res3 = conformal::calibrate(model, xs3, two, 0.05);
  CHECK(std::isinf(res3.tau));

  num::Tensor2 empty(0, 1);
  CHECK_THROWS_AS(conformal::calibrate(model, empty, std::vector<double>{}, 0.1), ArgumentError);
}

TEST_CASE("reference_interval: widening, shrinking, unbounded") {
  const auto model = rigged_model(-1.6, 1.6);
  const std::vector<double> x = {0.0};

  auto iv = conformal::reference_interval(model, x, fixed_tau(0.2));
  CHECK(iv.lo == doctest::Approx(-1.8));
  CHECK(iv.hi == doctest::Approx(1.8));
  CHECK(iv.width() == doctest::Approx(3.6));

  iv = conformal::reference_interval(model, x, fixed_tau(-0.1));
  CHECK(iv.lo == doctest::Approx(-1.5));
  CHECK(iv.hi == doctest::Approx(1.5));

  iv = conformal::reference_interval(model, x,
                                     fixed_tau(std::numeric_limits<double>::infinity()));
  CHECK(iv.unbounded);
  CHECK(iv.contains(1e12));
}

TEST_CASE("train_quantile_model: heads match the inverse normal CDF oracle") {
  const auto ref = flow::ReferenceSpec::unit(3);
  conformal::QuantileTrainConfig cfg;  // defaults tuned for this bound
  num::RngStream rng(11);
  const auto model = conformal::train_quantile_model(ref, 0.1, cfg, rng);

  // Probe grid across the reference bulk.
  double worst_lo = 0.0, worst_hi = 0.0;
  double lo_min = 1e300, lo_max = -1e300, hi_min = 1e300, hi_max = -1e300;
  for (double a = -2.0; a <= 2.01; a += 0.25) {
    for (double b = -2.0; b <= 2.01; b += 0.25) {
      const auto [q_lo, q_hi] = model.predict(std::vector<double>{a, b});
      CHECK(q_lo <= q_hi);
      worst_lo = std::max(worst_lo, std::abs(q_lo - (-1.6449)));
      worst_hi = std::max(worst_hi, std::abs(q_hi - 1.6449));
      lo_min = std::min(lo_min, q_lo);
      lo_max = std::max(lo_max, q_lo);
      hi_min = std::min(hi_min, q_hi);
      hi_max = std::max(hi_max, q_hi);
    }
  }
  CHECK(worst_lo <= 0.1);
  CHECK(worst_hi <= 0.1);
  // On the diagonal reference the heads are approximately constant in x:
  // all the adaptivity of the pullback sets comes from the flow.
  CHECK(lo_max - lo_min <= 0.15);
  CHECK(hi_max - hi_min <= 0.15);
}

TEST_CASE("train_quantile_model: alpha=0.5 heads sit at the quartiles") {
  // Head levels are alpha/2 and 1-alpha/2, so alpha=0.5 trains the
  // quartiles: the inverse normal CDF oracle gives -+0.6745.
  const auto ref = flow::ReferenceSpec::unit(2);
  conformal::QuantileTrainConfig cfg;
  num::RngStream rng(13);
  const auto model = conformal::train_quantile_model(ref, 0.5, cfg, rng);
  for (double a = -2.0; a <= 2.01; a += 0.25) {
    const auto [q_lo, q_hi] = model.predict(std::vector<double>{a});
    CHECK(std::abs(q_lo - (-0.6745)) <= 0.1);
    CHECK(std::abs(q_hi - 0.6745) <= 0.1);
  }
}

TEST_CASE("transform_set: identity flow reduces to the reference interval") {
  const auto fp = identity_flow(2);
  const auto model = rigged_model(-1.0, 1.0);
  const auto calib = fixed_tau(0.3);
  const std::vector<double> x = {0.4};
  const conformal::GridSpec grid{-3.0, 3.0, 61};

  const auto set = conformal::transform_set(fp, model, calib, x, {}, grid);
  const auto iv = conformal::reference_interval(model, x, calib);
  std::size_t accepted = 0;
  for (std::size_t g = 0; g < grid.n_points; ++g) {
    CHECK(set.accepted[g] == static_cast<std::uint8_t>(iv.contains(grid.point(g))));
    accepted += set.accepted[g];
  }
  CHECK(set.measure == doctest::Approx(grid.spacing() * static_cast<double>(accepted)));
}

TEST_CASE("transform_set: cell-by-cell agreement with a brute-force oracle") {
  num::RngStream rng(2001);
  auto fp = identity_flow(3, 2);
  auto flat = flow::flatten(fp);
  for (auto& w : flat) w += 0.4 * rng.normal();
  flow::assign_params(fp, flat);

  const auto model = rigged_model(-1.2, 1.2, 0.1, 2);
  const auto calib = fixed_tau(0.15);
  const conformal::GridSpec grid{-4.0, 4.0, 101};

  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<double> x = {rng.normal(), rng.normal()};
    const std::vector<double> eta = {rng.normal(), rng.normal()};
    const auto set = conformal::transform_set(fp, model, calib, x, eta, grid);

    for (std::size_t g = 0; g < grid.n_points; ++g) {
      // Independent recomputation through the single-vector ops.
      const std::vector<double> joint = {x[0], x[1], grid.point(g)};
      const auto [pushed, logdet] = flow::flow_forward(fp, joint, eta);
      (void)logdet;
      const std::vector<double> xt = {pushed[0], pushed[1]};
      const auto iv = conformal::reference_interval(model, xt, calib);
      CHECK(set.accepted[g] == static_cast<std::uint8_t>(iv.contains(pushed[2])));
    }
  }
}

TEST_CASE("transform_set: larger tau never removes accepted cells") {
  num::RngStream rng(303);
  auto fp = identity_flow(2, 0);
  auto flat = flow::flatten(fp);
  for (auto& w : flat) w += 0.5 * rng.normal();
  flow::assign_params(fp, flat);

  const auto model = rigged_model(-0.8, 0.8);
  const conformal::GridSpec grid{-3.0, 3.0, 121};
  const std::vector<double> x = {0.2};

  const auto small = conformal::transform_set(fp, model, fixed_tau(0.05), x, {}, grid);
  const auto large = conformal::transform_set(fp, model, fixed_tau(0.6), x, {}, grid);
  for (std::size_t g = 0; g < grid.n_points; ++g) {
    if (small.accepted[g]) CHECK(large.accepted[g]);
  }
  CHECK(large.measure >= small.measure);
}

TEST_CASE("transform_set: non-monotone flows yield faithful disconnected sets") {
  // Search a fixed seed list for a flow whose pullback of the band is
  // disconnected; the representation must report it as-is.
  const auto model = rigged_model(-0.6, 0.6);
  const auto calib = fixed_tau(0.0);
  const conformal::GridSpec grid{-3.0, 3.0, 201};

  bool found = false;
  for (std::uint64_t seed = 0; seed < 30 && !found; ++seed) {
    num::RngStream rng(seed);
    auto fp = identity_flow(2, 0);
    auto flat = flow::flatten(fp);
    for (auto& w : flat) w += 1.2 * rng.normal();
    flow::assign_params(fp, flat);

    const std::vector<double> x = {0.5};
    const auto set = conformal::transform_set(fp, model, calib, x, {}, grid);
    const auto runs = set.accepted_intervals();
    if (runs.size() >= 2) {
      found = true;
      std::size_t count = 0;
      for (auto a : set.accepted) count += a;
      CHECK(set.measure == doctest::Approx(grid.spacing() * static_cast<double>(count)));
      // contains() must agree with the runs.
      for (const auto& [lo, hi] : runs) {
        CHECK(set.contains(lo));
        CHECK(set.contains(hi));
      }
    }
  }
  CHECK(found);
}

TEST_CASE("transform_set: infinite tau accepts the whole grid and is flagged") {
  const auto fp = identity_flow(2);
  const auto model = rigged_model(-1.0, 1.0);
  const auto calib = fixed_tau(std::numeric_limits<double>::infinity());
  const conformal::GridSpec grid{-2.0, 2.0, 41};
  const auto set = conformal::transform_set(fp, model, calib, std::vector<double>{0.0}, {}, grid);
  CHECK(set.unbounded);
  CHECK(set.measure == doctest::Approx(grid.spacing() * 41));
  for (auto a : set.accepted) CHECK(a == 1);
}

TEST_CASE("coverage_and_size: boundary cases") {
  conformal::GridSpec grid{0.0, 1.0, 11};
  conformal::PredictionSet full;
  full.grid = grid;
  full.accepted.assign(11, 1);
  full.measure = grid.spacing() * 11;
  conformal::PredictionSet empty;
  empty.grid = grid;
  empty.accepted.assign(11, 0);
  empty.measure = 0.0;

  std::vector<conformal::PredictionSet> sets = {full, full, full};
  const std::vector<double> ys = {0.1, 0.5, 0.9};
  auto summary = conformal::coverage_and_size(sets, ys);
  CHECK(summary.coverage == doctest::Approx(1.0));

  sets = {empty, empty};
  summary = conformal::coverage_and_size(sets, std::vector<double>{0.2, 0.4});
  CHECK(summary.coverage == doctest::Approx(0.0));
  CHECK(summary.avg_size == doctest::Approx(0.0));

  CHECK_THROWS_AS(
      conformal::coverage_and_size(std::vector<conformal::PredictionSet>{}, std::vector<double>{}),
      ArgumentError);
}

TEST_CASE("split conformal coverage: quick Monte Carlo sanity") {
  // Exchangeable draws; the acceptance suite runs the full 1000-trial
  // version with tight bounds, this is a fast smoke check.
  num::RngStream rng(42);
  const auto make_xy = [&](std::size_t n, num::Tensor2& x, std::vector<double>& y) {
    x = num::Tensor2(n, 1);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = rng.normal();
      y[i] = std::sin(2.0 * x(i, 0)) + 0.3 * rng.normal();
    }
  };

  num::Tensor2 train_x;
  std::vector<double> train_y;
  make_xy(2000, train_x, train_y);
  conformal::QuantileTrainConfig cfg;
  cfg.steps = 600;
  cfg.batch_size = 256;
  const auto model = conformal::train_quantile_regressor(train_x, train_y, 0.1, cfg, rng);

  double coverage_sum = 0.0;
  const int trials = 60;
  for (int t = 0; t < trials; ++t) {
    num::Tensor2 cx, tx;
    std::vector<double> cy, ty;
    make_xy(100, cx, cy);
    make_xy(200, tx, ty);
    const auto calib = conformal::calibrate(model, cx, cy, 0.1);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < ty.size(); ++i) {
      const auto iv = conformal::reference_interval(model, tx.row(i), calib);
      covered += iv.contains(ty[i]) ? 1 : 0;
    }
    coverage_sum += static_cast<double>(covered) / static_cast<double>(ty.size());
  }
  const double mean_coverage = coverage_sum / trials;
  CHECK(mean_coverage > 0.87);
  CHECK(mean_coverage < 0.94);
}

TEST_CASE("calibrate_on_reference: shared threshold in reference mode") {
  const auto ref = flow::ReferenceSpec::unit(3);
  const auto model = rigged_model(-1.6449, 1.6449);
  num::RngStream rng(7);
  const auto result = conformal::calibrate_on_reference(model, ref, 500, 0.1, rng);
  CHECK(result.mode == conformal::CalibrationMode::ReferenceSamples);
  CHECK(result.n == 500);
  // The rigged band is already the 90% band, so tau should be near zero.
  CHECK(std::abs(result.tau) < 0.25);
}

TEST_CASE("prediction set CSV export") {
  conformal::GridSpec grid{0.0, 1.0, 5};
  conformal::PredictionSet set;
  set.grid = grid;
  set.accepted = {1, 1, 0, 1, 0};
  set.measure = grid.spacing() * 3;

  std::ostringstream os;
  conformal::write_sets_csv_header(os);
  conformal::append_sets_csv(os, 7, std::vector<conformal::PredictionSet>{set},
                             std::vector<double>{0.25});
  const auto text = os.str();
  CHECK(text.find("client_id,point_id,y_true,measure,covered,accepted_intervals") == 0);
  CHECK(text.find("7,0,0.25,") != std::string::npos);
  CHECK(text.find("0:0.25|0.75:0.75") != std::string::npos);
}
