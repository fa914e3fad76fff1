#include "flowcp/scenario.hpp"

#include <cmath>

#include "flowcp/errors.hpp"

namespace flowcp::data {

namespace {

double noise_draw(NoiseKind kind, num::RngStream& rng) {
  switch (kind) {
    case NoiseKind::Gaussian:
      return rng.normal();
    case NoiseKind::Laplace: {
      // Inverse-CDF with unit variance (scale 1/sqrt(2)).
      const double u = rng.uniform() - 0.5;
      const double mag = std::log1p(-2.0 * std::abs(u));
      return -(u >= 0.0 ? 1.0 : -1.0) * mag / std::sqrt(2.0);
    }
  }
  throw ConfigError("unknown noise kind");
}

}  // namespace

double response_value(const ClientRecipe& recipe, std::span<const double> x) {
  const double x1 = x.empty() ? 0.0 : x[0];
  const double x2 = x.size() > 1 ? x[1] : 0.0;
  switch (recipe.response) {
    case ResponseKind::Linear:
      return recipe.response_a * x1 + recipe.response_b * x2;
    case ResponseKind::Sinusoidal:
      return recipe.response_a * std::sin(recipe.response_b * x1) + 0.5 * x2;
    case ResponseKind::Piecewise:
      return x1 < 0.0 ? recipe.response_a * x1 : recipe.response_b * x1;
  }
  throw ConfigError("unknown response kind");
}

Dataset generate_client_raw(const ClientRecipe& recipe, std::size_t n, std::size_t d,
                            num::RngStream& rng) {
  if (n == 0) throw ArgumentError("generate_client_raw: n must be positive");
  if (d == 0) throw ArgumentError("generate_client_raw: d must be positive");
  if (recipe.feature_shift.size() > d) {
    throw ConfigError("generate_client_raw: feature_shift longer than d");
  }

  Dataset ds;
  ds.x = num::Tensor2(n, d);
  ds.y.resize(n);
  ds.feature_names.reserve(d);
  for (std::size_t j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j + 1));

  for (std::size_t i = 0; i < n; ++i) {
    auto row = ds.x.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double shift = j < recipe.feature_shift.size() ? recipe.feature_shift[j] : 0.0;
      row[j] = shift + recipe.feature_scale * rng.normal();
    }
    const double sigma = recipe.noise_base + recipe.noise_hetero * std::abs(row[0]);
    ds.y[i] = response_value(recipe, row) + sigma * noise_draw(recipe.noise, rng);
  }
  return ds;
}

ScenarioSpec builtin_scenario(const std::string& name, std::size_t k, std::size_t d,
                              std::size_t n_train, std::size_t n_calib, std::size_t n_test,
                              std::uint64_t seed) {
  if (n_train == 0 || n_calib == 0 || n_test == 0) {
    throw ConfigError("builtin_scenario: split sizes must be positive");
  }
  ScenarioSpec spec;
  spec.name = name;
  spec.k = k;
  spec.d = d;
  spec.n_train = n_train;
  spec.n_calib = n_calib;
  spec.n_test = n_test;
  spec.seed = seed;

  const bool heterogeneous = name != "homogeneous";
  if (k == 0 || (heterogeneous && k < 2)) {
    throw ConfigError("builtin_scenario: heterogeneity scenarios need at least 2 clients");
  }

  spec.clients.resize(k);
  if (name == "homogeneous") {
    for (auto& c : spec.clients) {
      c.response = ResponseKind::Linear;
      c.response_a = 1.0;
      c.noise_base = 0.3;
    }
  } else if (name == "covariate_shift") {
    for (std::size_t i = 0; i < k; ++i) {
      auto& c = spec.clients[i];
      c.feature_shift = {1.5 * (static_cast<double>(i) - static_cast<double>(k - 1) / 2.0)};
      c.response = ResponseKind::Sinusoidal;
      c.response_a = 1.0;
      c.response_b = 2.0;
      c.noise_base = 0.2;
    }
  } else if (name == "response_shift") {
    // Majority of near-identical linear clients plus one oscillatory client:
    // a pooled quantile band tuned to the mixture leaves the odd one out.
    for (std::size_t i = 0; i < k; ++i) {
      auto& c = spec.clients[i];
      if (i + 1 == k) {
        c.response = ResponseKind::Sinusoidal;
        c.response_a = 2.0;
        c.response_b = 5.0;
        c.noise_base = 0.2;
      } else {
        c.response = ResponseKind::Linear;
        c.response_a = 1.0 + 0.1 * (static_cast<double>(i % 3) - 1.0);
        c.noise_base = 0.2;
      }
    }
  } else if (name == "hetero_shift") {
    static constexpr double kNoise[][2] = {{0.15, 0.0}, {0.1, 0.8}, {0.8, 0.0}, {0.1, 1.5}};
    for (std::size_t i = 0; i < k; ++i) {
      auto& c = spec.clients[i];
      c.response = ResponseKind::Linear;
      c.response_a = 1.0;
      c.noise_base = kNoise[i % 4][0];
      c.noise_hetero = kNoise[i % 4][1];
    }
  } else {
    throw ConfigError("builtin_scenario: unknown scenario '" + name + "'");
  }
  return spec;
}

std::vector<fed::ClientSpec> generate_scenario(const ScenarioSpec& spec) {
  if (spec.clients.size() != spec.k) {
    throw ConfigError("generate_scenario: recipe count does not match client count");
  }
  if (spec.n_train == 0 || spec.n_calib == 0 || spec.n_test == 0) {
    throw ConfigError("generate_scenario: split sizes must be positive");
  }
  if (!(spec.cond_std > 0.0)) throw ConfigError("generate_scenario: cond_std must be positive");

  const num::RngStream master(spec.seed);
  const std::size_t total = spec.n_train + spec.n_calib + spec.n_test;

  std::vector<fed::ClientSpec> clients;
  clients.reserve(spec.k);
  for (std::size_t k = 0; k < spec.k; ++k) {
    num::RngStream gen = master.substream(num::rng_tags::kData).substream(k);
    const Dataset all = generate_client_raw(spec.clients[k], total, spec.d, gen);

    fed::ClientSpec client;
    client.id = static_cast<int>(k);

    auto take = [&](std::size_t begin, std::size_t count) {
      Dataset part;
      part.feature_names = all.feature_names;
      part.x = num::Tensor2(count, spec.d);
      part.y.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < spec.d; ++j) part.x(i, j) = all.x(begin + i, j);
        part.y[i] = all.y[begin + i];
      }
      return part;
    };
    Dataset train = take(0, spec.n_train);
    Dataset calib = take(spec.n_train, spec.n_calib);
    Dataset test = take(spec.n_train + spec.n_calib, spec.n_test);

    const StandardizeStats stats = fit_stats(train);
    client.train = apply_stats(train, stats);
    client.calib = apply_stats(calib, stats);
    client.test = apply_stats(test, stats);

    client.cond_std = spec.cond_std;
    if (spec.cond_dim > 0) {
      num::RngStream mu_rng = master.substream(num::rng_tags::kConditioner).substream(k);
      client.cond_mean.resize(spec.cond_dim);
      double norm2 = 0.0;
      for (auto& v : client.cond_mean) {
        v = mu_rng.normal();
        norm2 += v * v;
      }
      const double norm = std::sqrt(norm2);
      if (norm > 0.0) {
        for (auto& v : client.cond_mean) v /= norm;
      }
    }
    client.rng = master.substream(num::rng_tags::kClientBase + k);
    clients.push_back(std::move(client));
  }
  return clients;
}

}  // namespace flowcp::data
