#include "flowcp/flow.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "flowcp/errors.hpp"

namespace flowcp::flow {

namespace {

// The pullback path calls the subnets millions of times; keep buffers alive.
void eval_net(const num::MlpParams& net, std::span<const double> in, std::vector<double>& out,
              std::vector<double>& tmp) {
  num::mlp_forward_scratch(net, in, out, tmp);
}

struct LayerIndex {
  std::vector<std::size_t> masked;
  std::vector<std::size_t> unmasked;
};

LayerIndex index_of(const CouplingLayer& layer) {
  LayerIndex idx;
  for (std::size_t i = 0; i < layer.mask.size(); ++i) {
    (layer.mask[i] ? idx.masked : idx.unmasked).push_back(i);
  }
  return idx;
}

void check_layer(const CouplingLayer& layer, std::size_t z_len, std::size_t eta_len) {
  if (layer.mask.size() != z_len) {
    throw ShapeError("coupling layer: mask length " + std::to_string(layer.mask.size()) +
                     " vs input length " + std::to_string(z_len));
  }
  const std::size_t nm = layer.n_masked();
  const std::size_t nu = layer.n_unmasked();
  if (nm == 0 || nu == 0) throw ShapeError("coupling layer: mask must have a 0 and a 1");
  if (layer.scale_net.input_dim() != nm + eta_len || layer.shift_net.input_dim() != nm + eta_len) {
    throw ShapeError("coupling layer: subnet input dim does not match masked+conditioner size");
  }
  if (layer.scale_net.output_dim() != nu || layer.shift_net.output_dim() != nu) {
    throw ShapeError("coupling layer: subnet output dim does not match unmasked size");
  }
}

struct Workspace {
  std::vector<double> net_in;
  std::vector<double> s_raw;
  std::vector<double> t;
  std::vector<double> tmp;
  std::vector<double> cur;
  std::vector<double> next;
};

// One coupling layer in place: cur -> next. Returns the layer log-det.
// No finiteness check here; callers decide whether a bad row aborts.
double apply_layer(const CouplingLayer& layer, const LayerIndex& idx, std::span<const double> eta,
                   Workspace& ws) {
  const std::size_t nm = idx.masked.size();
  ws.net_in.resize(nm + eta.size());
  for (std::size_t i = 0; i < nm; ++i) ws.net_in[i] = ws.cur[idx.masked[i]];
  for (std::size_t i = 0; i < eta.size(); ++i) ws.net_in[nm + i] = eta[i];

  eval_net(layer.scale_net, ws.net_in, ws.s_raw, ws.tmp);
  eval_net(layer.shift_net, ws.net_in, ws.t, ws.tmp);

  ws.next.assign(ws.cur.begin(), ws.cur.end());
  double logdet = 0.0;
  const double clamp = layer.scale_clamp;
  for (std::size_t j = 0; j < idx.unmasked.size(); ++j) {
    const double s = clamp * std::tanh(ws.s_raw[j] / clamp);
    ws.next[idx.unmasked[j]] = ws.cur[idx.unmasked[j]] * std::exp(s) + ws.t[j];
    logdet += s;
  }
  ws.cur.swap(ws.next);
  return logdet;
}

double invert_layer(const CouplingLayer& layer, const LayerIndex& idx, std::span<const double> eta,
                    Workspace& ws) {
  const std::size_t nm = idx.masked.size();
  ws.net_in.resize(nm + eta.size());
  for (std::size_t i = 0; i < nm; ++i) ws.net_in[i] = ws.cur[idx.masked[i]];
  for (std::size_t i = 0; i < eta.size(); ++i) ws.net_in[nm + i] = eta[i];

  eval_net(layer.scale_net, ws.net_in, ws.s_raw, ws.tmp);
  eval_net(layer.shift_net, ws.net_in, ws.t, ws.tmp);

  ws.next.assign(ws.cur.begin(), ws.cur.end());
  double logdet = 0.0;
  const double clamp = layer.scale_clamp;
  for (std::size_t j = 0; j < idx.unmasked.size(); ++j) {
    const double s = clamp * std::tanh(ws.s_raw[j] / clamp);
    ws.next[idx.unmasked[j]] = (ws.cur[idx.unmasked[j]] - ws.t[j]) * std::exp(-s);
    logdet += s;
  }
  ws.cur.swap(ws.next);
  return logdet;
}

void check_flow_input(const FlowParams& flow, std::size_t v_len, std::size_t eta_len) {
  if (v_len != flow.joint_dim) {
    throw ShapeError("flow: input length " + std::to_string(v_len) + " vs joint dim " +
                     std::to_string(flow.joint_dim));
  }
  if (eta_len != flow.cond_dim) {
    throw ShapeError("flow: conditioner length " + std::to_string(eta_len) + " vs cond dim " +
                     std::to_string(flow.cond_dim));
  }
}

bool finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

std::size_t CouplingLayer::n_masked() const {
  std::size_t n = 0;
  for (auto b : mask) n += (b != 0);
  return n;
}

std::size_t CouplingLayer::n_unmasked() const { return mask.size() - n_masked(); }

FlowParams make_flow(const FlowConfig& config, num::RngStream& rng) {
  if (config.joint_dim < 2) throw ConfigError("make_flow: joint_dim must be at least 2");
  if (config.n_layers == 0) throw ConfigError("make_flow: need at least one layer");
  if (!(config.scale_clamp > 0.0)) throw ConfigError("make_flow: scale_clamp must be positive");

  FlowParams flow;
  flow.joint_dim = config.joint_dim;
  flow.cond_dim = config.cond_dim;
  flow.layers.reserve(config.n_layers);
  const std::vector<std::size_t> hidden(config.hidden_depth, config.hidden_width);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    CouplingLayer layer;
    layer.scale_clamp = config.scale_clamp;
    layer.mask.resize(config.joint_dim);
    for (std::size_t i = 0; i < config.joint_dim; ++i) {
      const bool even_pass = (i % 2 == 0);
      layer.mask[i] = static_cast<std::uint8_t>((l % 2 == 0) ? even_pass : !even_pass);
    }
    const std::size_t nm = layer.n_masked();
    const std::size_t nu = layer.n_unmasked();
    layer.scale_net = num::make_mlp(nm + config.cond_dim, hidden, nu, rng, true);
    layer.shift_net = num::make_mlp(nm + config.cond_dim, hidden, nu, rng, true);
    flow.layers.push_back(std::move(layer));
  }
  return flow;
}

FlowConfig config_of(const FlowParams& flow) {
  FlowConfig config;
  config.joint_dim = flow.joint_dim;
  config.cond_dim = flow.cond_dim;
  config.n_layers = flow.layers.size();
  if (!flow.layers.empty()) {
    const auto& net = flow.layers.front().scale_net;
    config.hidden_depth = net.layers.size() - 1;
    config.hidden_width = config.hidden_depth > 0 ? net.layers.front().weight.rows() : 0;
    config.scale_clamp = flow.layers.front().scale_clamp;
  }
  return config;
}

ReferenceSpec ReferenceSpec::unit(std::size_t dim) {
  ReferenceSpec ref;
  ref.var.assign(dim, 1.0);
  return ref;
}

double ReferenceSpec::log_density(std::span<const double> v) const {
  if (v.size() != var.size()) throw ShapeError("ReferenceSpec: dimension mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < var.size(); ++j) {
    acc += v[j] * v[j] / var[j] + std::log(2.0 * std::numbers::pi * var[j]);
  }
  return -0.5 * acc;
}

std::pair<std::vector<double>, double> coupling_forward(const CouplingLayer& layer,
                                                        std::span<const double> z,
                                                        std::span<const double> eta) {
  check_layer(layer, z.size(), eta.size());
  const LayerIndex idx = index_of(layer);
  Workspace ws;
  ws.cur.assign(z.begin(), z.end());
  const double logdet = apply_layer(layer, idx, eta, ws);
  if (!finite(ws.cur) || !std::isfinite(logdet)) {
    throw NumericError("coupling_forward: non-finite output");
  }
  return {std::move(ws.cur), logdet};
}

std::vector<double> coupling_inverse(const CouplingLayer& layer, std::span<const double> z_prime,
                                     std::span<const double> eta) {
  check_layer(layer, z_prime.size(), eta.size());
  const LayerIndex idx = index_of(layer);
  Workspace ws;
  ws.cur.assign(z_prime.begin(), z_prime.end());
  invert_layer(layer, idx, eta, ws);
  if (!finite(ws.cur)) throw NumericError("coupling_inverse: non-finite output");
  return std::move(ws.cur);
}

std::pair<std::vector<double>, double> flow_forward(const FlowParams& flow,
                                                    std::span<const double> xy,
                                                    std::span<const double> eta) {
  check_flow_input(flow, xy.size(), eta.size());
  Workspace ws;
  ws.cur.assign(xy.begin(), xy.end());
  double logdet = 0.0;
  for (std::size_t l = 0; l < flow.layers.size(); ++l) {
    const LayerIndex idx = index_of(flow.layers[l]);
    logdet += apply_layer(flow.layers[l], idx, eta, ws);
    if (!finite(ws.cur)) {
      throw NumericError("flow_forward: non-finite output at layer " + std::to_string(l));
    }
  }
  return {std::move(ws.cur), logdet};
}

std::vector<double> flow_inverse(const FlowParams& flow, std::span<const double> xy_tilde,
                                 std::span<const double> eta) {
  check_flow_input(flow, xy_tilde.size(), eta.size());
  Workspace ws;
  ws.cur.assign(xy_tilde.begin(), xy_tilde.end());
  for (std::size_t l = flow.layers.size(); l-- > 0;) {
    const LayerIndex idx = index_of(flow.layers[l]);
    invert_layer(flow.layers[l], idx, eta, ws);
    if (!finite(ws.cur)) {
      throw NumericError("flow_inverse: non-finite output at layer " + std::to_string(l));
    }
  }
  return std::move(ws.cur);
}

void flow_forward_batch(const FlowParams& flow, const num::Tensor2& vs,
                        std::span<const double> eta, num::Tensor2& out,
                        std::vector<double>& logdets) {
  check_flow_input(flow, vs.cols(), eta.size());
  out = num::Tensor2(vs.rows(), vs.cols());
  logdets.assign(vs.rows(), 0.0);

  std::vector<LayerIndex> idx;
  idx.reserve(flow.layers.size());
  for (const auto& layer : flow.layers) idx.push_back(index_of(layer));

  Workspace ws;
  for (std::size_t i = 0; i < vs.rows(); ++i) {
    const auto row = vs.row(i);
    ws.cur.assign(row.begin(), row.end());
    double logdet = 0.0;
    for (std::size_t l = 0; l < flow.layers.size(); ++l) {
      logdet += apply_layer(flow.layers[l], idx[l], eta, ws);
    }
    auto out_row = out.row(i);
    for (std::size_t j = 0; j < ws.cur.size(); ++j) out_row[j] = ws.cur[j];
    logdets[i] = logdet;
  }
}

void flow_forward_rows(const FlowParams& flow, const num::Tensor2& vs, const num::Tensor2& etas,
                       num::Tensor2& out, std::vector<double>& logdets) {
  check_flow_input(flow, vs.cols(), etas.cols());
  if (vs.rows() != etas.rows()) throw ShapeError("flow_forward_rows: batch/etas rows disagree");
  out = num::Tensor2(vs.rows(), vs.cols());
  logdets.assign(vs.rows(), 0.0);

  std::vector<LayerIndex> idx;
  idx.reserve(flow.layers.size());
  for (const auto& layer : flow.layers) idx.push_back(index_of(layer));

  Workspace ws;
  for (std::size_t i = 0; i < vs.rows(); ++i) {
    const auto row = vs.row(i);
    ws.cur.assign(row.begin(), row.end());
    double logdet = 0.0;
    for (std::size_t l = 0; l < flow.layers.size(); ++l) {
      logdet += apply_layer(flow.layers[l], idx[l], etas.row(i), ws);
    }
    auto out_row = out.row(i);
    for (std::size_t j = 0; j < ws.cur.size(); ++j) out_row[j] = ws.cur[j];
    logdets[i] = logdet;
  }
}

double flow_nll(const FlowParams& flow, const num::Tensor2& batch, const num::Tensor2& etas,
                const ReferenceSpec& ref) {
  if (batch.rows() == 0) throw ArgumentError("flow_nll: empty batch");
  num::Tensor2 out;
  std::vector<double> logdets;
  flow_forward_rows(flow, batch, etas, out, logdets);
  double total = 0.0;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    total += -ref.log_density(out.row(i)) - logdets[i];
  }
  const double loss = total / static_cast<double>(batch.rows());
  if (!std::isfinite(loss)) throw NumericError("flow_nll: non-finite loss");
  return loss;
}

FlowGrads zeros_like(const FlowParams& flow) {
  FlowGrads grads;
  grads.layers.reserve(flow.layers.size());
  for (const auto& layer : flow.layers) {
    grads.layers.push_back({num::zeros_like(layer.scale_net), num::zeros_like(layer.shift_net)});
  }
  return grads;
}

double flow_nll_grad(const FlowParams& flow, const num::Tensor2& batch, const num::Tensor2& etas,
                     const ReferenceSpec& ref, FlowGrads& grads, num::Tensor2* eta_grads) {
  if (batch.rows() == 0) throw ArgumentError("flow_nll_grad: empty batch");
  check_flow_input(flow, batch.cols(), etas.cols());
  if (batch.rows() != etas.rows()) throw ShapeError("flow_nll_grad: batch/etas rows disagree");
  if (batch.cols() != ref.dim()) throw ShapeError("flow_nll_grad: batch/reference dims disagree");

  grads = zeros_like(flow);
  if (eta_grads) *eta_grads = num::Tensor2(batch.rows(), flow.cond_dim);

  const std::size_t n_layers = flow.layers.size();
  std::vector<LayerIndex> idx;
  idx.reserve(n_layers);
  for (const auto& layer : flow.layers) idx.push_back(index_of(layer));

  const double inv_n = 1.0 / static_cast<double>(batch.rows());
  double total = 0.0;

  // Per-layer forward records for one row.
  struct LayerRecord {
    std::vector<double> z_in;
    std::vector<double> s_raw;
    std::vector<double> s;
    std::vector<double> t;
    num::MlpCache scale_cache;
    num::MlpCache shift_cache;
  };
  std::vector<LayerRecord> rec(n_layers);
  std::vector<double> cur, net_in, g, g_next, ds, ds_raw, dt, d_in_scale, d_in_shift;

  for (std::size_t row_i = 0; row_i < batch.rows(); ++row_i) {
    const auto row = batch.row(row_i);
    const auto eta = etas.row(row_i);
    cur.assign(row.begin(), row.end());
    double logdet = 0.0;

    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto& layer = flow.layers[l];
      auto& r = rec[l];
      const std::size_t nm = idx[l].masked.size();
      const std::size_t nu = idx[l].unmasked.size();

      r.z_in = cur;
      net_in.resize(nm + eta.size());
      for (std::size_t i = 0; i < nm; ++i) net_in[i] = cur[idx[l].masked[i]];
      for (std::size_t i = 0; i < eta.size(); ++i) net_in[nm + i] = eta[i];

      r.s_raw = num::mlp_forward(layer.scale_net, net_in, r.scale_cache);
      r.t = num::mlp_forward(layer.shift_net, net_in, r.shift_cache);
      r.s.resize(nu);
      for (std::size_t j = 0; j < nu; ++j) {
        r.s[j] = layer.scale_clamp * std::tanh(r.s_raw[j] / layer.scale_clamp);
        const std::size_t u = idx[l].unmasked[j];
        cur[u] = cur[u] * std::exp(r.s[j]) + r.t[j];
        logdet += r.s[j];
      }
    }

    const double row_loss = -ref.log_density(cur) - logdet;
    if (!std::isfinite(row_loss)) {
      throw NumericError("flow_nll_grad: non-finite loss at batch row " + std::to_string(row_i));
    }
    total += row_loss;

    // Density term: d(-log N)/dv = v / var, scaled by the batch mean.
    g.resize(cur.size());
    for (std::size_t j = 0; j < cur.size(); ++j) g[j] = inv_n * cur[j] / ref.var[j];

    for (std::size_t l = n_layers; l-- > 0;) {
      const auto& layer = flow.layers[l];
      auto& r = rec[l];
      const std::size_t nm = idx[l].masked.size();
      const std::size_t nu = idx[l].unmasked.size();

      ds.resize(nu);
      dt.resize(nu);
      ds_raw.resize(nu);
      for (std::size_t j = 0; j < nu; ++j) {
        const std::size_t u = idx[l].unmasked[j];
        const double es = std::exp(r.s[j]);
        // z'_u = z_u e^s + t, and the loss carries -logdet = -sum(s).
        ds[j] = g[u] * r.z_in[u] * es - inv_n;
        dt[j] = g[u];
        const double th = std::tanh(r.s_raw[j] / layer.scale_clamp);
        ds_raw[j] = ds[j] * (1.0 - th * th);
      }

      d_in_scale = num::mlp_backward(layer.scale_net, r.scale_cache, ds_raw,
                                     grads.layers[l].scale_net);
      d_in_shift = num::mlp_backward(layer.shift_net, r.shift_cache, dt,
                                     grads.layers[l].shift_net);

      g_next.assign(r.z_in.size(), 0.0);
      for (std::size_t j = 0; j < nu; ++j) {
        const std::size_t u = idx[l].unmasked[j];
        g_next[u] = g[u] * std::exp(r.s[j]);
      }
      for (std::size_t i = 0; i < nm; ++i) {
        const std::size_t mcoord = idx[l].masked[i];
        g_next[mcoord] = g[mcoord] + d_in_scale[i] + d_in_shift[i];
      }
      if (eta_grads) {
        auto eg = eta_grads->row(row_i);
        for (std::size_t i = 0; i < flow.cond_dim; ++i) {
          eg[i] += d_in_scale[nm + i] + d_in_shift[nm + i];
        }
      }
      g.swap(g_next);
    }
  }

  return total * inv_n;
}

std::size_t param_count(const FlowParams& flow) {
  std::size_t n = 0;
  for (const auto& layer : flow.layers) {
    n += layer.scale_net.param_count() + layer.shift_net.param_count();
  }
  return n;
}

std::vector<double> flatten(const FlowParams& flow) {
  std::vector<double> flat;
  flat.reserve(param_count(flow));
  for (const auto& layer : flow.layers) {
    num::flatten_append(layer.scale_net, flat);
    num::flatten_append(layer.shift_net, flat);
  }
  return flat;
}

std::vector<double> flatten(const FlowGrads& grads) {
  std::vector<double> flat;
  for (const auto& layer : grads.layers) {
    num::flatten_append(layer.scale_net, flat);
    num::flatten_append(layer.shift_net, flat);
  }
  return flat;
}

void assign_params(FlowParams& flow, std::span<const double> flat) {
  if (flat.size() != param_count(flow)) {
    throw ShapeError("assign_params: flat vector size does not match flow parameter count");
  }
  std::size_t offset = 0;
  for (auto& layer : flow.layers) {
    num::unflatten_consume(layer.scale_net, flat, offset);
    num::unflatten_consume(layer.shift_net, flat, offset);
  }
}

}  // namespace flowcp::flow
