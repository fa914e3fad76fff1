#include "flowcp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "flowcp/errors.hpp"
#include "flowcp/optim.hpp"

namespace flowcp::conformal {

namespace {

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// d pinball(pred, y, level) / d pred.
double pinball_grad(double pred, double y, double level) {
  return (y >= pred) ? -level : (1.0 - level);
}

std::pair<double, double> heads_from_output(std::span<const double> out) {
  const double q_lo = out[0];
  return {q_lo, q_lo + softplus(out[1])};
}

}  // namespace

double pinball_loss(double pred, double y, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("pinball_loss: level must be in (0,1)");
  return (y >= pred) ? level * (y - pred) : (1.0 - level) * (pred - y);
}

std::pair<double, double> QuantileModel::predict(std::span<const double> x) const {
  return heads_from_output(num::mlp_forward(net, x));
}

std::pair<double, double> QuantileModel::predict_scratch(std::span<const double> x,
                                                         std::vector<double>& out,
                                                         std::vector<double>& tmp) const {
  num::mlp_forward_scratch(net, x, out, tmp);
  return heads_from_output(out);
}

QuantileModel train_quantile_regressor(const num::Tensor2& x, std::span<const double> y,
                                       double alpha, const QuantileTrainConfig& config,
                                       num::RngStream& rng) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("train_quantile_regressor: bad alpha");
  if (x.rows() == 0 || x.rows() != y.size()) {
    throw ShapeError("train_quantile_regressor: rows of x must match y");
  }
  const double lo_level = alpha / 2.0;
  const double hi_level = 1.0 - alpha / 2.0;

  QuantileModel model;
  model.alpha = alpha;
  model.net = num::make_mlp(x.cols(), config.hidden, 2, rng, true);

  std::vector<double> params;
  num::flatten_append(model.net, params);
  num::OptimizerState opt(params.size());

  const std::size_t n = x.rows();
  const std::size_t batch = std::min(config.batch_size, n);
  num::MlpCache cache;
  num::AdamConfig adam;
  std::vector<double> grad_flat;
  std::vector<double> upstream(2);

  // Averaging the tail of the trajectory removes most of the minibatch
  // jitter around the pinball optimum.
  const auto tail_begin = static_cast<std::size_t>(
      (1.0 - config.tail_average_frac) * static_cast<double>(config.steps));
  std::vector<double> tail_sum(params.size(), 0.0);
  std::size_t tail_count = 0;

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto pick = rng.sample_without_replacement(n, batch);
    num::MlpParams grads = num::zeros_like(model.net);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (const std::size_t i : pick) {
      const auto out = num::mlp_forward(model.net, x.row(i), cache);
      const auto [q_lo, q_hi] = heads_from_output(out);
      loss += pinball_loss(q_lo, y[i], lo_level) + pinball_loss(q_hi, y[i], hi_level);
      const double g_lo = pinball_grad(q_lo, y[i], lo_level) * inv_b;
      const double g_hi = pinball_grad(q_hi, y[i], hi_level) * inv_b;
      // q_hi = q_lo + softplus(raw_gap): the lo output carries both heads.
      upstream[0] = g_lo + g_hi;
      upstream[1] = g_hi * sigmoid(out[1]);
      num::mlp_backward(model.net, cache, upstream, grads);
    }
    loss *= inv_b;
    if (!std::isfinite(loss)) {
      throw TrainingError("train_quantile_regressor: divergent loss at step " +
                          std::to_string(step));
    }
    adam.lr = config.lr;
    if (static_cast<double>(step) >= config.lr_decay_at * static_cast<double>(config.steps)) {
      adam.lr *= config.lr_decay;
    }
    grad_flat.clear();
    num::flatten_append(grads, grad_flat);
    num::adam_step(params, grad_flat, opt, adam);
    if (config.weight_decay > 0.0) {
      const double shrink = 1.0 - adam.lr * config.weight_decay;
      std::size_t offset = 0;
      for (const auto& layer : model.net.layers) {
        for (std::size_t i = 0; i < layer.weight.size(); ++i) params[offset + i] *= shrink;
        offset += layer.weight.size() + layer.bias.size();
      }
    }
    std::size_t offset = 0;
    num::unflatten_consume(model.net, params, offset);

    if (step >= tail_begin) {
      for (std::size_t i = 0; i < params.size(); ++i) tail_sum[i] += params[i];
      ++tail_count;
    }
  }
  if (tail_count > 0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] = tail_sum[i] / static_cast<double>(tail_count);
    }
    std::size_t offset = 0;
    num::unflatten_consume(model.net, params, offset);
  }
  return model;
}

QuantileModel train_quantile_model(const flow::ReferenceSpec& ref, double alpha,
                                   const QuantileTrainConfig& config, num::RngStream& rng) {
  if (ref.dim() < 2) throw ArgumentError("train_quantile_model: reference dim must be >= 2");
  std::vector<double> mean(ref.dim(), 0.0);
  std::vector<double> stddev(ref.dim());
  for (std::size_t j = 0; j < ref.dim(); ++j) stddev[j] = std::sqrt(ref.var[j]);
  const num::Tensor2 draws = num::gaussian_sample(rng, mean, stddev, config.n_samples);

  const std::size_t d = ref.dim() - 1;
  num::Tensor2 x(draws.rows(), d);
  std::vector<double> y(draws.rows());
  for (std::size_t i = 0; i < draws.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = draws(i, j);
    y[i] = draws(i, d);
  }
  return train_quantile_regressor(x, y, alpha, config, rng);
}

double cqr_score(const QuantileModel& model, std::span<const double> xt, double yt) {
  const auto [q_lo, q_hi] = model.predict(xt);
  return std::max(q_lo - yt, yt - q_hi);
}

CalibrationResult calibrate(const QuantileModel& model, const num::Tensor2& xt,
                            std::span<const double> yt, double alpha, CalibrationMode mode) {
  if (xt.rows() == 0) throw ArgumentError("calibrate: empty calibration set");
  if (xt.rows() != yt.size()) throw ShapeError("calibrate: xt rows must match yt length");

  CalibrationResult result;
  result.alpha = alpha;
  result.mode = mode;
  result.n = xt.rows();
  result.scores.resize(xt.rows());
  std::vector<double> out, tmp;
  for (std::size_t i = 0; i < xt.rows(); ++i) {
    const auto [q_lo, q_hi] = model.predict_scratch(xt.row(i), out, tmp);
    result.scores[i] = std::max(q_lo - yt[i], yt[i] - q_hi);
  }
  result.tau = num::conformal_quantile(result.scores, alpha);
  return result;
}

CalibrationResult calibrate_on_reference(const QuantileModel& model, const flow::ReferenceSpec& ref,
                                         std::size_t n, double alpha, num::RngStream& rng) {
  if (n == 0) throw ArgumentError("calibrate_on_reference: n must be positive");
  std::vector<double> mean(ref.dim(), 0.0);
  std::vector<double> stddev(ref.dim());
  for (std::size_t j = 0; j < ref.dim(); ++j) stddev[j] = std::sqrt(ref.var[j]);
  const num::Tensor2 draws = num::gaussian_sample(rng, mean, stddev, n);

  const std::size_t d = ref.dim() - 1;
  num::Tensor2 xt(n, d);
  std::vector<double> yt(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) xt(i, j) = draws(i, j);
    yt[i] = draws(i, d);
  }
  return calibrate(model, xt, yt, alpha, CalibrationMode::ReferenceSamples);
}

Interval reference_interval(const QuantileModel& model, std::span<const double> xt,
                            const CalibrationResult& result) {
  const auto [q_lo, q_hi] = model.predict(xt);
  if (std::isinf(result.tau)) {
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            true};
  }
  return {q_lo - result.tau, q_hi + result.tau, false};
}

double GridSpec::spacing() const {
  if (n_points < 2) throw ArgumentError("GridSpec: need at least 2 points");
  return (y_max - y_min) / static_cast<double>(n_points - 1);
}

GridSpec grid_for_labels(std::span<const double> labels, std::size_t n_points, double pad) {
  if (labels.empty()) throw ArgumentError("grid_for_labels: empty labels");
  double lo = labels[0];
  double hi = labels[0];
  for (double v : labels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double range = hi - lo;
  if (range <= 0.0) range = 1.0;
  return {lo - pad * range, hi + pad * range, n_points};
}

bool PredictionSet::contains(double y) const {
  const double h = grid.spacing();
  const double pos = (y - grid.y_min) / h;
  const auto idx = static_cast<long long>(std::llround(pos));
  if (idx < 0 || idx >= static_cast<long long>(accepted.size())) return false;
  return accepted[static_cast<std::size_t>(idx)] != 0;
}

std::vector<std::pair<double, double>> PredictionSet::accepted_intervals() const {
  std::vector<std::pair<double, double>> runs;
  std::size_t i = 0;
  while (i < accepted.size()) {
    if (!accepted[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < accepted.size() && accepted[j + 1]) ++j;
    runs.emplace_back(grid.point(i), grid.point(j));
    i = j + 1;
  }
  return runs;
}

PredictionSet transform_set(const flow::FlowParams& flow, const QuantileModel& model,
                            const CalibrationResult& result, std::span<const double> x,
                            std::span<const double> eta, const GridSpec& grid) {
  if (grid.n_points < 2) throw ArgumentError("transform_set: grid needs at least 2 points");
  if (x.size() + 1 != flow.joint_dim) {
    throw ShapeError("transform_set: feature length plus label must match flow joint dim");
  }
  const std::size_t m = flow.joint_dim;
  const std::size_t g = grid.n_points;

  num::Tensor2 candidates(g, m);
  for (std::size_t i = 0; i < g; ++i) {
    auto row = candidates.row(i);
    for (std::size_t j = 0; j + 1 < m; ++j) row[j] = x[j];
    row[m - 1] = grid.point(i);
  }

  num::Tensor2 pushed;
  std::vector<double> logdets;
  flow_forward_batch(flow, candidates, eta, pushed, logdets);

  PredictionSet set;
  set.grid = grid;
  set.accepted.assign(g, 0);
  set.unbounded = std::isinf(result.tau);

  std::vector<double> out, tmp;
  for (std::size_t i = 0; i < g; ++i) {
    const auto row = pushed.row(i);
    bool ok = std::isfinite(logdets[i]);
    for (std::size_t j = 0; ok && j < m; ++j) ok = std::isfinite(row[j]);
    if (!ok) {
      ++set.numeric_failures;
      continue;
    }
    if (set.unbounded) {
      set.accepted[i] = 1;
      continue;
    }
    const auto xt = row.first(m - 1);
    const double yt = row[m - 1];
    const auto [q_lo, q_hi] = model.predict_scratch(xt, out, tmp);
    if (yt >= q_lo - result.tau && yt <= q_hi + result.tau) set.accepted[i] = 1;
  }

  std::size_t count = 0;
  for (auto a : set.accepted) count += a;
  set.measure = grid.spacing() * static_cast<double>(count);
  return set;
}

CoverageSummary coverage_and_size(std::span<const PredictionSet> sets,
                                  std::span<const double> y_true) {
  if (sets.empty()) throw ArgumentError("coverage_and_size: empty input");
  if (sets.size() != y_true.size()) {
    throw ShapeError("coverage_and_size: sets and labels must align");
  }
  double covered = 0.0;
  double size = 0.0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    covered += sets[i].contains(y_true[i]) ? 1.0 : 0.0;
    size += sets[i].measure;
  }
  const auto n = static_cast<double>(sets.size());
  return {covered / n, size / n};
}

void write_sets_csv_header(std::ostream& os) {
  os << "client_id,point_id,y_true,measure,covered,accepted_intervals\n";
}

void append_sets_csv(std::ostream& os, int client_id, std::span<const PredictionSet> sets,
                     std::span<const double> y_true) {
  if (sets.size() != y_true.size()) throw ShapeError("append_sets_csv: size mismatch");
  os.precision(17);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    os << client_id << ',' << i << ',' << y_true[i] << ',' << sets[i].measure << ','
       << (sets[i].contains(y_true[i]) ? 1 : 0) << ',';
    const auto runs = sets[i].accepted_intervals();
    for (std::size_t r = 0; r < runs.size(); ++r) {
      if (r) os << '|';
      os << runs[r].first << ':' << runs[r].second;
    }
    os << '\n';
  }
}

}  // namespace flowcp::conformal
