#include "flowcp/federated.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "flowcp/errors.hpp"
#include "flowcp/model_io.hpp"

namespace flowcp::fed {

Client::Client(ClientSpec spec)
    : spec_(std::move(spec)),
      cond_rng_(spec_.rng.substream(num::rng_tags::kConditioner)),
      batch_rng_(spec_.rng.substream(num::rng_tags::kBatching)) {
  if (!(spec_.cond_std > 0.0)) throw ArgumentError("Client: cond_std must be positive");
}

std::vector<double> Client::draw_conditioner() {
  std::vector<double> eta(spec_.cond_mean.size());
  for (std::size_t j = 0; j < eta.size(); ++j) {
    eta[j] = cond_rng_.normal(spec_.cond_mean[j], spec_.cond_std);
  }
  return eta;
}

ClientUpdate Client::local_update(const flow::FlowParams& broadcast,
                                  const LocalUpdateConfig& config,
                                  const flow::ReferenceSpec& ref) {
  ClientUpdate update;
  update.client_id = spec_.id;
  const std::size_t n = spec_.train.n();
  if (n == 0) {
    update.ok = false;
    return update;
  }
  const std::size_t d = spec_.train.dim();
  const std::size_t batch = std::min(config.batch_size, n);

  try {
    flow::FlowParams local = broadcast;
    const std::vector<double> base = flow::flatten(local);
    std::vector<double> params = base;
    num::OptimizerState opt(params.size());

    num::Tensor2 rows(batch, d + 1);
    num::Tensor2 etas(batch, local.cond_dim);
    flow::FlowGrads grads;
    num::Tensor2 eta_grads;

    double loss_acc = 0.0;
    for (std::size_t step = 0; step < config.steps; ++step) {
      const auto pick = batch_rng_.sample_without_replacement(n, batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t i = pick[b];
        auto row = rows.row(b);
        for (std::size_t j = 0; j < d; ++j) row[j] = spec_.train.x(i, j);
        row[d] = spec_.train.y[i];
      }
      if (config.per_batch_conditioner) {
        const auto eta = draw_conditioner();
        for (std::size_t b = 0; b < batch; ++b) {
          auto er = etas.row(b);
          for (std::size_t j = 0; j < eta.size(); ++j) er[j] = eta[j];
        }
      } else {
        for (std::size_t b = 0; b < batch; ++b) {
          const auto eta = draw_conditioner();
          auto er = etas.row(b);
          for (std::size_t j = 0; j < eta.size(); ++j) er[j] = eta[j];
        }
      }

      num::Tensor2* eg = config.learn_cond_mean && local.cond_dim > 0 ? &eta_grads : nullptr;
      const double loss = flow::flow_nll_grad(local, rows, etas, ref, grads, eg);
      loss_acc += loss;

      if (config.adam.lr > 0.0) {
        const auto grad_flat = flow::flatten(grads);
        num::adam_step(params, grad_flat, opt, config.adam);
        flow::assign_params(local, params);
      }
      if (eg) {
        // d eta / d mu is the identity, so the mean row gradient steps mu.
        const double scale = config.adam.lr / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < spec_.cond_mean.size(); ++j) {
            spec_.cond_mean[j] -= scale * eta_grads(b, j);
          }
        }
      }
    }

    update.delta.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      // The server reconstructs base + delta; pick the representable delta
      // that makes the round trip lossless (the naive difference can be off
      // by one ulp when the coordinate crossed zero or jumped in magnitude),
      // so single-participant rounds reproduce the client bitwise.
      double d = params[i] - base[i];
      if (base[i] + d != params[i]) {
        const double up = std::nextafter(d, std::numeric_limits<double>::infinity());
        const double dn = std::nextafter(d, -std::numeric_limits<double>::infinity());
        if (base[i] + up == params[i]) {
          d = up;
        } else if (base[i] + dn == params[i]) {
          d = dn;
        }
      }
      update.delta[i] = d;
    }
    update.sample_count = config.steps * batch;
    update.mean_loss =
        config.steps > 0 ? loss_acc / static_cast<double>(config.steps) : 0.0;
    if (!std::isfinite(update.mean_loss)) {
      update.ok = false;
      update.delta.clear();
    }
  } catch (const Error&) {
    update.ok = false;
    update.delta.clear();
    update.sample_count = 0;
  }
  return update;
}

conformal::CalibrationResult Client::calibrate_transformed(const flow::FlowParams& flow,
                                                           const conformal::QuantileModel& model,
                                                           double alpha) {
  const std::size_t n = spec_.calib.n();
  const std::size_t d = spec_.calib.dim();
  num::Tensor2 joint(n, d + 1);
  num::Tensor2 etas(n, flow.cond_dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = joint.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = spec_.calib.x(i, j);
    row[d] = spec_.calib.y[i];
    const auto eta = draw_conditioner();
    auto er = etas.row(i);
    for (std::size_t j = 0; j < eta.size(); ++j) er[j] = eta[j];
  }
  num::Tensor2 pushed;
  std::vector<double> logdets;
  flow::flow_forward_rows(flow, joint, etas, pushed, logdets);

  num::Tensor2 xt(n, d);
  std::vector<double> yt(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) xt(i, j) = pushed(i, j);
    yt[i] = pushed(i, d);
  }
  return conformal::calibrate(model, xt, yt, alpha, conformal::CalibrationMode::TransformedClient);
}

Client::Eval Client::evaluate_transformed(const flow::FlowParams& flow,
                                          const conformal::QuantileModel& model,
                                          const conformal::CalibrationResult& calib,
                                          std::size_t grid_points, double grid_pad) {
  Eval eval;
  eval.grid = conformal::grid_for_labels(spec_.train.y, grid_points, grid_pad);
  eval.sets.reserve(spec_.test.n());
  eval.y_true = spec_.test.y;
  for (std::size_t i = 0; i < spec_.test.n(); ++i) {
    const auto eta = draw_conditioner();
    eval.sets.push_back(
        conformal::transform_set(flow, model, calib, spec_.test.x.row(i), eta, eval.grid));
    eval.unbounded_count += eval.sets.back().unbounded ? 1 : 0;
    eval.numeric_failures += eval.sets.back().numeric_failures;
  }
  eval.summary = conformal::coverage_and_size(eval.sets, eval.y_true);
  return eval;
}

Client::Eval Client::evaluate_intervals(const conformal::QuantileModel& model,
                                        const conformal::CalibrationResult& calib,
                                        std::size_t grid_points, double grid_pad) {
  Eval eval;
  eval.grid = conformal::grid_for_labels(spec_.train.y, grid_points, grid_pad);
  eval.y_true = spec_.test.y;
  eval.sets.reserve(spec_.test.n());
  const double h = eval.grid.spacing();
  double covered = 0.0;
  double size = 0.0;
  for (std::size_t i = 0; i < spec_.test.n(); ++i) {
    const auto interval = conformal::reference_interval(model, spec_.test.x.row(i), calib);
    conformal::PredictionSet set;
    set.grid = eval.grid;
    set.accepted.assign(eval.grid.n_points, 0);
    set.unbounded = interval.unbounded;
    for (std::size_t g = 0; g < eval.grid.n_points; ++g) {
      if (interval.contains(eval.grid.point(g))) set.accepted[g] = 1;
    }
    std::size_t count = 0;
    for (auto a : set.accepted) count += a;
    set.measure = h * static_cast<double>(count);
    covered += interval.contains(spec_.test.y[i]) ? 1.0 : 0.0;
    // Interval width is exact here; keep it instead of the gridded measure
    // unless the interval is unbounded (then the grid span stands in).
    size += interval.unbounded ? set.measure : interval.width();
    eval.unbounded_count += interval.unbounded ? 1 : 0;
    eval.sets.push_back(std::move(set));
  }
  const auto n = static_cast<double>(spec_.test.n());
  eval.summary = {covered / n, size / n};
  return eval;
}

std::vector<double> server_aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw ProtocolError("server_aggregate: no updates");
  const std::size_t dim = updates.front().delta.size();
  std::size_t total = 0;
  for (const auto& u : updates) {
    if (u.delta.size() != dim) throw ProtocolError("server_aggregate: delta shape mismatch");
    total += u.sample_count;
  }
  if (total == 0) throw ProtocolError("server_aggregate: zero total sample count");

  std::vector<double> agg(dim, 0.0);
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.sample_count) / static_cast<double>(total);
    for (std::size_t i = 0; i < dim; ++i) agg[i] += w * u.delta[i];
  }
  return agg;
}

FedResult fed_train(std::vector<Client>& clients, const FedConfig& config,
                    const flow::ReferenceSpec& ref, flow::FlowParams initial) {
  if (clients.empty()) throw ArgumentError("fed_train: need at least one client");
  const std::size_t k = clients.size();
  if (config.clients_per_round > k) {
    throw ConfigError("fed_train: clients_per_round exceeds client count");
  }

  num::RngStream server_rng = num::RngStream(config.seed).substream(num::rng_tags::kServer);
  LocalUpdateConfig local;
  local.steps = config.local_steps;
  local.batch_size = config.batch_size;
  local.adam.lr = config.lr;
  local.per_batch_conditioner = config.per_batch_conditioner;
  local.learn_cond_mean = config.learn_cond_mean;

  FedResult result;
  result.flow = std::move(initial);
  std::vector<double> params = flow::flatten(result.flow);

  for (std::size_t round = 0; round < config.rounds; ++round) {
    std::vector<std::size_t> chosen;
    if (config.clients_per_round == 0 || config.clients_per_round == k) {
      chosen.resize(k);
      for (std::size_t i = 0; i < k; ++i) chosen[i] = i;
    } else {
      chosen = server_rng.sample_without_replacement(k, config.clients_per_round);
      std::sort(chosen.begin(), chosen.end());
    }

    std::vector<ClientUpdate> updates;
    updates.reserve(chosen.size());
    for (const std::size_t ci : chosen) {
      ClientUpdate u = clients[ci].local_update(result.flow, local, ref);
      if (u.ok) {
        updates.push_back(std::move(u));
      }
    }
    if (updates.empty()) {
      throw ProtocolError("fed_train: all clients failed in round " + std::to_string(round));
    }

    const auto delta = server_aggregate(updates);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] += delta[i];
      norm2 += delta[i] * delta[i];
    }
    flow::assign_params(result.flow, params);

    RoundLog log;
    log.round = round;
    log.update_norm = std::sqrt(norm2);
    double loss = 0.0;
    for (const auto& u : updates) {
      loss += u.mean_loss;
      log.participants.push_back(u.client_id);
    }
    log.mean_loss = loss / static_cast<double>(updates.size());
    result.logs.push_back(std::move(log));

    if (config.checkpoint_every > 0 && (round + 1) % config.checkpoint_every == 0 &&
        !config.checkpoint_dir.empty()) {
      io::save_flow(result.flow,
                    config.checkpoint_dir + "/flow_round_" + std::to_string(round + 1) + ".json");
    }
  }
  return result;
}

void write_round_logs_csv(std::ostream& os, std::span<const RoundLog> logs) {
  os << "round,mean_loss,update_norm,participants\n";
  os.precision(17);
  for (const auto& log : logs) {
    os << log.round << ',' << log.mean_loss << ',' << log.update_norm << ',';
    for (std::size_t i = 0; i < log.participants.size(); ++i) {
      if (i) os << ';';
      os << log.participants[i];
    }
    os << '\n';
  }
}

}  // namespace flowcp::fed
