#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "flowcp/rng.hpp"
#include "flowcp/tensor.hpp"

namespace flowcp::num {

struct MlpLayer {
  Tensor2 weight;            // out x in
  std::vector<double> bias;  // out
};

/// Feed-forward network: tanh on every hidden layer, linear output layer.
/// The same shape doubles as the gradient container (see zeros_like).
struct MlpParams {
  std::vector<MlpLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }
  std::size_t param_count() const;
};

/// Glorot-uniform init (bounds +-sqrt(6/(fan_in+fan_out))) from the given
/// stream, biases zero. With zero_output_layer the final layer's weights and
/// bias are zeroed, so the net is identically zero at init.
MlpParams make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                   std::size_t output_dim, RngStream& rng, bool zero_output_layer = false);

MlpParams zeros_like(const MlpParams& params);

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input);

/// Forward pass into caller-owned buffers (no allocation once the buffers
/// have grown); `out` holds the result. For evaluation hot loops.
void mlp_forward_scratch(const MlpParams& params, std::span<const double> input,
                         std::vector<double>& out, std::vector<double>& tmp);

/// Per-layer activations kept for the backward pass: acts[0] is the input,
/// acts[l] for l >= 1 the tanh output feeding layer l, acts[L] the output.
struct MlpCache {
  std::vector<std::vector<double>> acts;
};

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input,
                                MlpCache& cache);

/// Reverse-mode gradients of <upstream, output> w.r.t. parameters and input.
std::pair<MlpParams, std::vector<double>> mlp_grad(const MlpParams& params,
                                                   std::span<const double> input,
                                                   std::span<const double> upstream);

/// Same as mlp_grad but reuses a forward cache and accumulates into
/// grad_accum (which must be shaped like params). Returns the input gradient.
std::vector<double> mlp_backward(const MlpParams& params, const MlpCache& cache,
                                 std::span<const double> upstream, MlpParams& grad_accum);

/// Flattening order: layers in order, each as weights row-major then bias.
void flatten_append(const MlpParams& params, std::vector<double>& out);
void unflatten_consume(MlpParams& params, std::span<const double> flat, std::size_t& offset);

void add_scaled(MlpParams& dst, const MlpParams& src, double scale);

}  // namespace flowcp::num
