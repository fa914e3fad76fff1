#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowcp/data.hpp"
#include "flowcp/federated.hpp"

namespace flowcp::data {

enum class ResponseKind { Linear, Sinusoidal, Piecewise };
enum class NoiseKind { Gaussian, Laplace };

/// One client's generative recipe:
///   X ~ N(feature_shift, feature_scale^2 I),
///   Y = r(X) + (noise_base + noise_hetero * |x1|) * noise.
/// Responses: Linear a*x1 + b*x2, Sinusoidal a*sin(b*x1) + 0.5*x2,
/// Piecewise a*x1 for x1 < 0 else b*x1 (x2 taken as 0 when d == 1).
struct ClientRecipe {
  std::vector<double> feature_shift;
  double feature_scale = 1.0;
  ResponseKind response = ResponseKind::Linear;
  double response_a = 1.0;
  double response_b = 0.0;
  NoiseKind noise = NoiseKind::Gaussian;
  double noise_base = 0.1;
  double noise_hetero = 0.0;
};

struct ScenarioSpec {
  std::string name;
  std::size_t k = 2;  // client count
  std::size_t d = 2;  // feature dim
  std::vector<ClientRecipe> clients;
  std::size_t n_train = 1000;
  std::size_t n_calib = 500;
  std::size_t n_test = 500;
  std::uint64_t seed = 1;
  std::size_t cond_dim = 4;
  double cond_std = 0.1;
};

double response_value(const ClientRecipe& recipe, std::span<const double> x);

/// Raw draw of n rows from the recipe (no standardization).
Dataset generate_client_raw(const ClientRecipe& recipe, std::size_t n, std::size_t d,
                            num::RngStream& rng);

/// Built-in heterogeneity scenarios: covariate_shift (feature means move),
/// response_shift (response functions differ; the hard case for a pooled
/// quantile band), hetero_shift (noise recipes differ). Throws ConfigError
/// on an unknown name.
ScenarioSpec builtin_scenario(const std::string& name, std::size_t k, std::size_t d,
                              std::size_t n_train, std::size_t n_calib, std::size_t n_test,
                              std::uint64_t seed);

/// Per client: draw train/calib/test from the recipe, standardize all three
/// with train-split stats (features and targets), fix the conditioner mean
/// as a seeded unit-norm vector, and hand out a private runtime stream.
/// Deterministic in (spec, spec.seed).
std::vector<fed::ClientSpec> generate_scenario(const ScenarioSpec& spec);

}  // namespace flowcp::data
