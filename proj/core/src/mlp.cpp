#include "flowcp/mlp.hpp"

#include <cmath>
#include <string>

#include "flowcp/errors.hpp"

namespace flowcp::num {

namespace {

void affine(const MlpLayer& layer, std::span<const double> in, std::vector<double>& out) {
  const std::size_t rows = layer.weight.rows();
  const std::size_t cols = layer.weight.cols();
  out.assign(layer.bias.begin(), layer.bias.end());
  const double* w = layer.weight.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* wr = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * in[c];
    out[r] += acc;
  }
}

void check_input(const MlpParams& params, std::span<const double> input) {
  if (params.layers.empty()) throw ShapeError("mlp: no layers");
  if (input.size() != params.input_dim()) {
    throw ShapeError("mlp: input length " + std::to_string(input.size()) +
                     " does not match first layer input dim " +
                     std::to_string(params.input_dim()));
  }
}

}  // namespace

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

MlpParams make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                   std::size_t output_dim, RngStream& rng, bool zero_output_layer) {
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);

  MlpParams params;
  params.layers.reserve(dims.size() - 1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    MlpLayer layer;
    layer.weight = Tensor2(fan_out, fan_in);
    layer.bias.assign(fan_out, 0.0);
    const bool last = (l + 2 == dims.size());
    if (!(last && zero_output_layer)) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

MlpParams zeros_like(const MlpParams& params) {
  MlpParams z;
  z.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    MlpLayer zl;
    zl.weight = Tensor2(l.weight.rows(), l.weight.cols());
    zl.bias.assign(l.bias.size(), 0.0);
    z.layers.push_back(std::move(zl));
  }
  return z;
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input) {
  std::vector<double> out;
  std::vector<double> tmp;
  mlp_forward_scratch(params, input, out, tmp);
  return out;
}

void mlp_forward_scratch(const MlpParams& params, std::span<const double> input,
                         std::vector<double>& out, std::vector<double>& tmp) {
  check_input(params, input);
  out.assign(input.begin(), input.end());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    affine(params.layers[l], out, tmp);
    if (l + 1 < params.layers.size()) {
      for (double& v : tmp) v = std::tanh(v);
    }
    out.swap(tmp);
  }
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input,
                                MlpCache& cache) {
  check_input(params, input);
  cache.acts.assign(params.layers.size() + 1, {});
  cache.acts[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    affine(params.layers[l], cache.acts[l], cache.acts[l + 1]);
    if (l + 1 < params.layers.size()) {
      for (double& v : cache.acts[l + 1]) v = std::tanh(v);
    }
  }
  return cache.acts.back();
}

std::vector<double> mlp_backward(const MlpParams& params, const MlpCache& cache,
                                 std::span<const double> upstream, MlpParams& grad_accum) {
  const std::size_t n_layers = params.layers.size();
  if (upstream.size() != params.output_dim()) {
    throw ShapeError("mlp_backward: upstream length does not match output dim");
  }
  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> delta_in;
  for (std::size_t li = n_layers; li-- > 0;) {
    const MlpLayer& layer = params.layers[li];
    MlpLayer& grad = grad_accum.layers[li];
    const auto& in = cache.acts[li];
    const std::size_t rows = layer.weight.rows();
    const std::size_t cols = layer.weight.cols();

    for (std::size_t r = 0; r < rows; ++r) {
      const double d = delta[r];
      grad.bias[r] += d;
      double* gr = grad.weight.data().data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gr[c] += d * in[c];
    }

    delta_in.assign(cols, 0.0);
    const double* w = layer.weight.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = delta[r];
      const double* wr = w + r * cols;
      for (std::size_t c = 0; c < cols; ++c) delta_in[c] += wr[c] * d;
    }
    if (li > 0) {
      // cache.acts[li] is the tanh output of layer li-1; tanh' = 1 - act^2.
      for (std::size_t c = 0; c < cols; ++c) delta_in[c] *= 1.0 - in[c] * in[c];
    }
    delta.swap(delta_in);
  }
  return delta;
}

std::pair<MlpParams, std::vector<double>> mlp_grad(const MlpParams& params,
                                                   std::span<const double> input,
                                                   std::span<const double> upstream) {
  MlpCache cache;
  mlp_forward(params, input, cache);
  MlpParams grads = zeros_like(params);
  std::vector<double> input_grad = mlp_backward(params, cache, upstream, grads);
  return {std::move(grads), std::move(input_grad)};
}

void flatten_append(const MlpParams& params, std::vector<double>& out) {
  for (const auto& l : params.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
}

void unflatten_consume(MlpParams& params, std::span<const double> flat, std::size_t& offset) {
  for (auto& l : params.layers) {
    for (double& w : l.weight.data()) w = flat[offset++];
    for (double& b : l.bias) b = flat[offset++];
  }
}

void add_scaled(MlpParams& dst, const MlpParams& src, double scale) {
  for (std::size_t l = 0; l < dst.layers.size(); ++l) {
    auto& dw = dst.layers[l].weight.data();
    const auto& sw = src.layers[l].weight.data();
    for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += scale * sw[i];
    for (std::size_t i = 0; i < dst.layers[l].bias.size(); ++i) {
      dst.layers[l].bias[i] += scale * src.layers[l].bias[i];
    }
  }
}

}  // namespace flowcp::num
