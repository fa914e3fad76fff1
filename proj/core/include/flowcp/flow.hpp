#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "flowcp/mlp.hpp"
#include "flowcp/rng.hpp"
#include "flowcp/tensor.hpp"

namespace flowcp::flow {

/// Affine coupling layer over the joint (features, label) vector.
///
/// Coordinates with mask == 1 pass through unchanged and, concatenated with
/// the conditioner, feed the two subnets; coordinates with mask == 0 are
/// transformed as z' = z * exp(s) + t. The raw log-scale is squashed into
/// [-scale_clamp, scale_clamp] via clamp * tanh(raw / clamp).
struct CouplingLayer {
  std::vector<std::uint8_t> mask;
  num::MlpParams scale_net;
  num::MlpParams shift_net;
  double scale_clamp = 4.0;

  std::size_t n_masked() const;
  std::size_t n_unmasked() const;
};

struct FlowParams {
  std::vector<CouplingLayer> layers;
  std::size_t joint_dim = 0;
  std::size_t cond_dim = 0;
};

struct FlowConfig {
  std::size_t joint_dim = 0;
  std::size_t cond_dim = 0;
  std::size_t n_layers = 6;
  std::size_t hidden_width = 64;
  std::size_t hidden_depth = 2;
  double scale_clamp = 4.0;

  bool operator==(const FlowConfig&) const = default;
};

/// Builds a coupling stack with alternating even/odd masks. Subnet output
/// layers are zero-initialized, so the fresh flow is exactly the identity
/// with zero log-determinant for every conditioner value.
FlowParams make_flow(const FlowConfig& config, num::RngStream& rng);

FlowConfig config_of(const FlowParams& flow);

/// Diagonal-Gaussian reference distribution; mean is structurally zero,
/// diagonal variances must be positive.
struct ReferenceSpec {
  std::vector<double> var;

  std::size_t dim() const { return var.size(); }
  static ReferenceSpec unit(std::size_t dim);
  double log_density(std::span<const double> v) const;
};

/// Returns (z', logdet) with logdet = sum of active log-scales. Throws
/// NumericError naming the failing layer on non-finite output.
std::pair<std::vector<double>, double> coupling_forward(const CouplingLayer& layer,
                                                        std::span<const double> z,
                                                        std::span<const double> eta);

/// Exact algebraic inverse: z = (z' - t) * exp(-s).
std::vector<double> coupling_inverse(const CouplingLayer& layer, std::span<const double> z_prime,
                                     std::span<const double> eta);

/// Composition of all layers; logdet accumulates across layers.
std::pair<std::vector<double>, double> flow_forward(const FlowParams& flow,
                                                    std::span<const double> xy,
                                                    std::span<const double> eta);

/// Layers inverted in reverse order.
std::vector<double> flow_inverse(const FlowParams& flow, std::span<const double> xy_tilde,
                                 std::span<const double> eta);

/// Row-wise forward with one shared conditioner (the grid-pullback path).
/// Reuses internal buffers and does NOT throw on non-finite rows; callers
/// inspect the output per row.
void flow_forward_batch(const FlowParams& flow, const num::Tensor2& vs,
                        std::span<const double> eta, num::Tensor2& out,
                        std::vector<double>& logdets);

/// Row-wise forward with a conditioner per row (training/calibration path).
void flow_forward_rows(const FlowParams& flow, const num::Tensor2& vs, const num::Tensor2& etas,
                       num::Tensor2& out, std::vector<double>& logdets);

/// Mean negative log-likelihood of the batch under the pushforward to the
/// reference: mean of [-log N(f(x,y;eta); 0, var) - logdet].
double flow_nll(const FlowParams& flow, const num::Tensor2& batch, const num::Tensor2& etas,
                const ReferenceSpec& ref);

struct CouplingGrads {
  num::MlpParams scale_net;
  num::MlpParams shift_net;
};

struct FlowGrads {
  std::vector<CouplingGrads> layers;
};

FlowGrads zeros_like(const FlowParams& flow);

/// Exact reverse-mode gradient of flow_nll through both the density term and
/// the log-determinant term. Returns the loss. When eta_grads is non-null it
/// receives d(loss)/d(eta) per batch row (shape: batch rows x cond_dim).
double flow_nll_grad(const FlowParams& flow, const num::Tensor2& batch, const num::Tensor2& etas,
                     const ReferenceSpec& ref, FlowGrads& grads,
                     num::Tensor2* eta_grads = nullptr);

/// Flat parameter order: layers in order; scale_net then shift_net per
/// layer; each net as in num::flatten_append.
std::size_t param_count(const FlowParams& flow);
std::vector<double> flatten(const FlowParams& flow);
std::vector<double> flatten(const FlowGrads& grads);
void assign_params(FlowParams& flow, std::span<const double> flat);

}  // namespace flowcp::flow
