#include "flowcp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowcp/errors.hpp"

namespace flowcp::experiment {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string response_name(data::ResponseKind kind) {
  switch (kind) {
    case data::ResponseKind::Linear: return "linear";
    case data::ResponseKind::Sinusoidal: return "sinusoidal";
    case data::ResponseKind::Piecewise: return "piecewise";
  }
  throw ConfigError("unknown response kind");
}

data::ResponseKind response_from_name(const std::string& name) {
  if (name == "linear") return data::ResponseKind::Linear;
  if (name == "sinusoidal") return data::ResponseKind::Sinusoidal;
  if (name == "piecewise") return data::ResponseKind::Piecewise;
  throw ConfigError("unknown response kind '" + name + "'");
}

std::string noise_name(data::NoiseKind kind) {
  switch (kind) {
    case data::NoiseKind::Gaussian: return "gaussian";
    case data::NoiseKind::Laplace: return "laplace";
  }
  throw ConfigError("unknown noise kind");
}

data::NoiseKind noise_from_name(const std::string& name) {
  if (name == "gaussian") return data::NoiseKind::Gaussian;
  if (name == "laplace") return data::NoiseKind::Laplace;
  throw ConfigError("unknown noise kind '" + name + "'");
}

json recipe_to_json(const data::ClientRecipe& recipe) {
  return {{"feature_shift", recipe.feature_shift},
          {"feature_scale", recipe.feature_scale},
          {"response", response_name(recipe.response)},
          {"response_a", recipe.response_a},
          {"response_b", recipe.response_b},
          {"noise", noise_name(recipe.noise)},
          {"noise_base", recipe.noise_base},
          {"noise_hetero", recipe.noise_hetero}};
}

data::ClientRecipe recipe_from_json(const json& j) {
  data::ClientRecipe recipe;
  recipe.feature_shift = j.value("feature_shift", std::vector<double>{});
  recipe.feature_scale = j.value("feature_scale", 1.0);
  recipe.response = response_from_name(j.value("response", "linear"));
  recipe.response_a = j.value("response_a", 1.0);
  recipe.response_b = j.value("response_b", 0.0);
  recipe.noise = noise_from_name(j.value("noise", "gaussian"));
  recipe.noise_base = j.value("noise_base", 0.1);
  recipe.noise_hetero = j.value("noise_hetero", 0.0);
  return recipe;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string csv_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Pool the standardized train or calib splits of every client.
void pool_clients(const std::vector<fed::ClientSpec>& specs, bool calib_split, num::Tensor2& x,
                  std::vector<double>& y) {
  std::size_t total = 0;
  for (const auto& s : specs) total += calib_split ? s.calib.n() : s.train.n();
  const std::size_t d = specs.front().train.dim();
  x = num::Tensor2(total, d);
  y.resize(total);
  std::size_t cursor = 0;
  for (const auto& s : specs) {
    const data::Dataset& ds = calib_split ? s.calib : s.train;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      for (std::size_t j = 0; j < d; ++j) x(cursor, j) = ds.x(i, j);
      y[cursor] = ds.y[i];
      ++cursor;
    }
  }
}

std::vector<fed::ClientSpec> clients_from_raw(const ExperimentConfig& config,
                                              const std::vector<data::Dataset>& raw,
                                              std::uint64_t seed) {
  const auto& dc = *config.dataset;
  const num::RngStream master(seed);
  std::vector<fed::ClientSpec> specs;
  specs.reserve(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    num::RngStream split_rng = master.substream(num::rng_tags::kData).substream(k);
    auto parts = data::split(raw[k], dc.fractions, split_rng);
    const data::StandardizeStats stats = data::fit_stats(parts[0]);

    fed::ClientSpec spec;
    spec.id = static_cast<int>(k);
    spec.train = data::apply_stats(parts[0], stats);
    spec.calib = data::apply_stats(parts[1], stats);
    spec.test = data::apply_stats(parts[2], stats);
    spec.cond_std = dc.cond_std;
    if (dc.cond_dim > 0) {
      num::RngStream mu_rng = master.substream(num::rng_tags::kConditioner).substream(k);
      spec.cond_mean.resize(dc.cond_dim);
      double norm2 = 0.0;
      for (auto& v : spec.cond_mean) {
        v = mu_rng.normal();
        norm2 += v * v;
      }
      if (norm2 > 0.0) {
        for (auto& v : spec.cond_mean) v /= std::sqrt(norm2);
      }
    }
    spec.rng = master.substream(num::rng_tags::kClientBase + k);
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::vector<data::Dataset> load_raw_datasets(const DatasetConfig& dc) {
  std::vector<data::Dataset> raw;
  raw.reserve(dc.client_paths.size());
  for (const auto& path : dc.client_paths) {
    raw.push_back(data::load_csv(path, dc.schema).dataset);
  }
  return raw;
}

void validate(const ExperimentConfig& config) {
  if (config.methods.empty()) throw ConfigError("experiment: empty method list");
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
    throw ConfigError("experiment: alpha must be in (0,1)");
  }
  if (config.trials == 0) throw ConfigError("experiment: trials must be >= 1");
  if (config.grid_points < 2) throw ConfigError("experiment: grid needs at least 2 points");
  if (config.dataset && config.dataset->client_paths.empty()) {
    throw ConfigError("experiment: dataset adapter lists no client files");
  }
  if (config.calibration == conformal::CalibrationMode::PooledRaw) {
    throw ConfigError("experiment: pooled_raw is not a configurable calibration mode");
  }
}

struct TrialModels {
  std::optional<conformal::QuantileModel> reference;  // trained on reference draws
  std::optional<conformal::QuantileModel> pooled;     // cqr_only baseline
};

}  // namespace

std::string method_name(Method method) {
  switch (method) {
    case Method::CqrOnly: return "cqr_only";
    case Method::FedccpNoCond: return "fedccp_nocond";
    case Method::Fedccp: return "fedccp";
  }
  throw ConfigError("unknown method");
}

Method method_from_name(const std::string& name) {
  if (name == "cqr_only") return Method::CqrOnly;
  if (name == "fedccp_nocond") return Method::FedccpNoCond;
  if (name == "fedccp") return Method::Fedccp;
  throw ConfigError("unknown method '" + name + "'");
}

DatasetConfig load_dataset_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse dataset config " + path + ": " + e.what());
  }

  DatasetConfig dc;
  const auto& js = j.at("schema");
  dc.schema.feature_columns = js.at("features").get<std::vector<std::string>>();
  dc.schema.target_column = js.at("target").get<std::string>();
  if (js.contains("delimiter")) {
    const auto d = js.at("delimiter").get<std::string>();
    if (d.size() != 1) throw ConfigError("dataset config: delimiter must be one character");
    dc.schema.delimiter = d[0];
  }
  dc.schema.header = js.value("header", true);

  for (const auto& c : j.at("clients")) {
    dc.client_paths.push_back(c.at("path").get<std::string>());
  }
  if (j.contains("fractions")) {
    const auto f = j.at("fractions").get<std::vector<double>>();
    if (f.size() != 3) throw ConfigError("dataset config: fractions must have 3 entries");
    dc.fractions = {f[0], f[1], f[2]};
  }
  dc.cond_dim = j.value("cond_dim", std::size_t{4});
  dc.cond_std = j.value("cond_std", 0.1);
  return dc;
}

std::uint64_t trial_seed(const ExperimentConfig& config, std::size_t trial) {
  return num::RngStream::derive_seed(config.seed, num::rng_tags::kTrialBase + trial);
}

std::vector<fed::ClientSpec> build_trial_clients(const ExperimentConfig& config,
                                                 std::size_t trial) {
  const std::uint64_t seed = trial_seed(config, trial);
  if (config.dataset) {
    return clients_from_raw(config, load_raw_datasets(*config.dataset), seed);
  }
  data::ScenarioSpec spec = config.scenario;
  spec.seed = seed;
  return data::generate_scenario(spec);
}

MethodPlan method_plan(const ExperimentConfig& config, Method method, std::size_t feature_dim) {
  MethodPlan plan;
  plan.uses_flow = method != Method::CqrOnly;
  if (plan.uses_flow) {
    plan.arch.joint_dim = feature_dim + 1;
    const std::size_t cond_dim =
        config.dataset ? config.dataset->cond_dim : config.scenario.cond_dim;
    plan.arch.cond_dim = method == Method::Fedccp ? cond_dim : 0;
    plan.arch.n_layers = config.flow_layers;
    plan.arch.hidden_width = config.flow_hidden;
    plan.arch.hidden_depth = config.flow_depth;
    plan.arch.scale_clamp = config.scale_clamp;
  }
  return plan;
}

namespace {

void run_method_trial(const ExperimentConfig& config, Method method, std::size_t trial,
                      const std::vector<fed::ClientSpec>& specs, TrialModels& models,
                      MetricsReport& report, std::string& stage) {
  const std::uint64_t tseed = trial_seed(config, trial);
  const std::size_t d = specs.front().train.dim();
  const flow::ReferenceSpec ref = flow::ReferenceSpec::unit(d + 1);
  const num::RngStream trial_rng(tseed);

  const MethodPlan plan = method_plan(config, method, d);

  conformal::QuantileModel model;
  if (method == Method::CqrOnly) {
    stage = "train_pooled_quantile";
    if (!models.pooled) {
      num::Tensor2 x;
      std::vector<double> y;
      pool_clients(specs, false, x, y);
      num::RngStream rng = trial_rng.substream(num::rng_tags::kQuantilePooled);
      models.pooled = conformal::train_quantile_regressor(x, y, config.alpha, config.quantile, rng);
    }
    model = *models.pooled;
  } else {
    stage = "train_reference_quantile";
    if (!models.reference) {
      num::RngStream rng = trial_rng.substream(num::rng_tags::kQuantile);
      models.reference = conformal::train_quantile_model(ref, config.alpha, config.quantile, rng);
    }
    model = *models.reference;
  }

  // Clients are rebuilt per method so conditioner/batching streams start
  // from the same state for every method.
  std::vector<fed::Client> clients;
  clients.reserve(specs.size());
  for (const auto& spec : specs) {
    fed::ClientSpec copy = spec;
    if (method == Method::FedccpNoCond) copy.cond_mean.clear();
    clients.emplace_back(std::move(copy));
  }

  double flow_final_nll = kNaN;
  flow::FlowParams trained_flow;
  if (plan.uses_flow) {
    stage = "fed_train";
    num::RngStream init_rng = trial_rng.substream(num::rng_tags::kFlowInit);
    flow::FlowParams initial = flow::make_flow(plan.arch, init_rng);
    fed::FedConfig fedcfg = config.fed;
    fedcfg.seed = tseed;
    fed::FedResult result = fed_train(clients, fedcfg, ref, std::move(initial));
    trained_flow = std::move(result.flow);
    if (!result.logs.empty()) flow_final_nll = result.logs.back().mean_loss;
  }

  stage = "calibrate";
  std::vector<conformal::CalibrationResult> calibs;
  calibs.reserve(clients.size());
  if (method == Method::CqrOnly) {
    num::Tensor2 x;
    std::vector<double> y;
    pool_clients(specs, true, x, y);
    const auto pooled = conformal::calibrate(model, x, y, config.alpha,
                                             conformal::CalibrationMode::PooledRaw);
    calibs.assign(clients.size(), pooled);
  } else if (config.calibration == conformal::CalibrationMode::ReferenceSamples) {
    num::RngStream rng = trial_rng.substream(num::rng_tags::kRefCalib);
    const auto shared =
        conformal::calibrate_on_reference(model, ref, config.ref_calib_n, config.alpha, rng);
    calibs.assign(clients.size(), shared);
  } else {
    for (auto& client : clients) {
      calibs.push_back(client.calibrate_transformed(trained_flow, model, config.alpha));
    }
  }

  stage = "evaluate";
  for (std::size_t k = 0; k < clients.size(); ++k) {
    fed::Client::Eval eval;
    if (method == Method::CqrOnly) {
      eval = clients[k].evaluate_intervals(model, calibs[k], config.grid_points, config.grid_pad);
    } else {
      eval = clients[k].evaluate_transformed(trained_flow, model, calibs[k], config.grid_points,
                                             config.grid_pad);
    }
    MetricsRow row;
    row.method = method_name(method);
    row.trial = trial;
    row.client_id = clients[k].id();
    row.coverage = eval.summary.coverage;
    row.avg_size = eval.summary.avg_size;
    row.n_test = eval.y_true.size();
    row.tau = calibs[k].tau;
    row.unbounded_sets = eval.unbounded_count;
    row.numeric_failures = eval.numeric_failures;
    row.flow_final_nll = flow_final_nll;
    report.rows.push_back(std::move(row));
  }
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& config) {
  validate(config);

  MetricsReport report;
  report.target_coverage = 1.0 - config.alpha;
  report.config_json = config_to_json_string(config);

  // CSV mode loads each client file once; trials only re-split.
  std::vector<data::Dataset> raw;
  if (config.dataset) raw = load_raw_datasets(*config.dataset);

  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    std::vector<fed::ClientSpec> specs;
    try {
      specs = config.dataset ? clients_from_raw(config, raw, trial_seed(config, trial))
                             : build_trial_clients(config, trial);
    } catch (const Error& e) {
      for (const Method method : config.methods) {
        report.failures.push_back({method_name(method), trial, "data", e.what()});
      }
      continue;
    }

    TrialModels models;
    for (const Method method : config.methods) {
      std::string stage = "setup";
      try {
        run_method_trial(config, method, trial, specs, models, report, stage);
      } catch (const Error& e) {
        report.failures.push_back({method_name(method), trial, stage, e.what()});
      }
    }
  }
  return report;
}

std::vector<AggregateRow> aggregate_rows(const std::vector<MetricsRow>& rows) {
  // Preserve first-appearance order of (method, client) pairs.
  std::vector<AggregateRow> out;
  for (const auto& row : rows) {
    AggregateRow* agg = nullptr;
    for (auto& a : out) {
      if (a.method == row.method && a.client_id == row.client_id) {
        agg = &a;
        break;
      }
    }
    if (!agg) {
      out.push_back({row.method, row.client_id, 0.0, 0.0, 0.0, 0.0, 0});
      agg = &out.back();
    }
    agg->coverage_mean += row.coverage;
    agg->size_mean += row.avg_size;
    agg->trials += 1;
  }
  for (auto& a : out) {
    a.coverage_mean /= static_cast<double>(a.trials);
    a.size_mean /= static_cast<double>(a.trials);
  }
  for (const auto& row : rows) {
    for (auto& a : out) {
      if (a.method == row.method && a.client_id == row.client_id) {
        const double dc = row.coverage - a.coverage_mean;
        const double ds = row.avg_size - a.size_mean;
        a.coverage_std += dc * dc;
        a.size_std += ds * ds;
        break;
      }
    }
  }
  for (auto& a : out) {
    const double denom = a.trials > 1 ? static_cast<double>(a.trials - 1) : 1.0;
    a.coverage_std = std::sqrt(a.coverage_std / denom);
    a.size_std = std::sqrt(a.size_std / denom);
  }
  return out;
}

void emit_report(const MetricsReport& report, const std::string& outdir) {
  if (report.rows.empty() && report.failures.empty()) {
    throw ArgumentError("emit_report: empty report");
  }
  std::filesystem::create_directories(outdir);

  {
    std::ostringstream os;
    os << "method,trial,client_id,coverage,avg_size,n_test,tau,unbounded_sets,"
          "numeric_failures,flow_final_nll\n";
    for (const auto& r : report.rows) {
      os << r.method << ',' << r.trial << ',' << r.client_id << ',' << csv_double(r.coverage)
         << ',' << csv_double(r.avg_size) << ',' << r.n_test << ',' << csv_double(r.tau) << ','
         << r.unbounded_sets << ',' << r.numeric_failures << ',' << csv_double(r.flow_final_nll)
         << '\n';
    }
    write_text_file(outdir + "/rows.csv", os.str());
  }
  {
    const auto aggs = aggregate_rows(report.rows);
    std::ostringstream os;
    os << "method,client_id,coverage_mean,coverage_std,size_mean,size_std,trials\n";
    for (const auto& a : aggs) {
      os << a.method << ',' << a.client_id << ',' << csv_double(a.coverage_mean) << ','
         << csv_double(a.coverage_std) << ',' << csv_double(a.size_mean) << ','
         << csv_double(a.size_std) << ',' << a.trials << '\n';
    }
    write_text_file(outdir + "/aggregate.csv", os.str());

    std::ostringstream pos;
    pos << "method,client_id,coverage_mean,coverage_std,size_mean,size_std,target_coverage\n";
    for (const auto& a : aggs) {
      pos << a.method << ',' << a.client_id << ',' << csv_double(a.coverage_mean) << ','
          << csv_double(a.coverage_std) << ',' << csv_double(a.size_mean) << ','
          << csv_double(a.size_std) << ',' << csv_double(report.target_coverage) << '\n';
    }
    write_text_file(outdir + "/plot_data.csv", pos.str());
  }
  {
    std::ostringstream os;
    os << "method,trial,stage,message\n";
    for (const auto& f : report.failures) {
      std::string msg = f.message;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << f.method << ',' << f.trial << ',' << f.stage << ',' << msg << '\n';
    }
    write_text_file(outdir + "/failures.csv", os.str());
  }
  write_text_file(outdir + "/config.json", report.config_json + "\n");
}

std::vector<MetricsRow> read_rows_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(path + ": empty rows file");

  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw IngestionError(path + ": malformed row '" + line + "'");
    MetricsRow r;
    r.method = cells[0];
    r.trial = std::stoul(cells[1]);
    r.client_id = std::stoi(cells[2]);
    r.coverage = std::stod(cells[3]);
    r.avg_size = std::stod(cells[4]);
    r.n_test = std::stoul(cells[5]);
    r.tau = std::stod(cells[6]);
    r.unbounded_sets = std::stoul(cells[7]);
    r.numeric_failures = std::stoul(cells[8]);
    r.flow_final_nll = std::stod(cells[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

json dataset_to_json(const DatasetConfig& dc) {
  json j;
  j["schema"] = {{"features", dc.schema.feature_columns},
                 {"target", dc.schema.target_column},
                 {"delimiter", std::string(1, dc.schema.delimiter)},
                 {"header", dc.schema.header}};
  json clients = json::array();
  for (const auto& p : dc.client_paths) clients.push_back({{"path", p}});
  j["clients"] = std::move(clients);
  j["fractions"] = std::vector<double>{dc.fractions[0], dc.fractions[1], dc.fractions[2]};
  j["cond_dim"] = dc.cond_dim;
  j["cond_std"] = dc.cond_std;
  return j;
}

DatasetConfig dataset_from_json(const json& j) {
  DatasetConfig dc;
  const auto& js = j.at("schema");
  dc.schema.feature_columns = js.at("features").get<std::vector<std::string>>();
  dc.schema.target_column = js.at("target").get<std::string>();
  if (js.contains("delimiter")) {
    const auto d = js.at("delimiter").get<std::string>();
    if (d.size() != 1) throw ConfigError("dataset config: delimiter must be one character");
    dc.schema.delimiter = d[0];
  }
  dc.schema.header = js.value("header", true);
  for (const auto& c : j.at("clients")) dc.client_paths.push_back(c.at("path").get<std::string>());
  if (j.contains("fractions")) {
    const auto f = j.at("fractions").get<std::vector<double>>();
    if (f.size() != 3) throw ConfigError("dataset config: fractions must have 3 entries");
    dc.fractions = {f[0], f[1], f[2]};
  }
  dc.cond_dim = j.value("cond_dim", std::size_t{4});
  dc.cond_std = j.value("cond_std", 0.1);
  return dc;
}

}  // namespace

std::string config_to_json_string(const ExperimentConfig& config) {
  json j;
  j["alpha"] = config.alpha;
  std::vector<std::string> methods;
  for (const auto m : config.methods) methods.push_back(method_name(m));
  j["methods"] = methods;
  j["trials"] = config.trials;
  j["seed"] = config.seed;
  j["outdir"] = config.outdir;
  j["calibration"] = config.calibration == conformal::CalibrationMode::ReferenceSamples
                         ? "reference_samples"
                         : "transformed_client";
  j["ref_calib_n"] = config.ref_calib_n;
  j["grid"] = {{"points", config.grid_points}, {"pad", config.grid_pad}};
  j["flow"] = {{"layers", config.flow_layers},
               {"hidden", config.flow_hidden},
               {"depth", config.flow_depth},
               {"scale_clamp", config.scale_clamp}};
  j["quantile"] = {{"n_samples", config.quantile.n_samples},
                   {"steps", config.quantile.steps},
                   {"batch_size", config.quantile.batch_size},
                   {"lr", config.quantile.lr},
                   {"lr_decay", config.quantile.lr_decay},
                   {"lr_decay_at", config.quantile.lr_decay_at},
                   {"weight_decay", config.quantile.weight_decay},
                   {"tail_average_frac", config.quantile.tail_average_frac},
                   {"hidden", config.quantile.hidden}};
  j["fed"] = {{"rounds", config.fed.rounds},
              {"local_steps", config.fed.local_steps},
              {"batch_size", config.fed.batch_size},
              {"lr", config.fed.lr},
              {"clients_per_round", config.fed.clients_per_round},
              {"per_batch_conditioner", config.fed.per_batch_conditioner},
              {"learn_cond_mean", config.fed.learn_cond_mean},
              {"checkpoint_every", config.fed.checkpoint_every},
              {"checkpoint_dir", config.fed.checkpoint_dir}};
  if (config.dataset) {
    j["dataset_inline"] = dataset_to_json(*config.dataset);
    if (!config.dataset_config_path.empty()) j["dataset"] = config.dataset_config_path;
  } else {
    json scen;
    scen["name"] = config.scenario.name;
    scen["k"] = config.scenario.k;
    scen["d"] = config.scenario.d;
    scen["n_train"] = config.scenario.n_train;
    scen["n_calib"] = config.scenario.n_calib;
    scen["n_test"] = config.scenario.n_test;
    scen["cond_dim"] = config.scenario.cond_dim;
    scen["cond_std"] = config.scenario.cond_std;
    json recipes = json::array();
    for (const auto& r : config.scenario.clients) recipes.push_back(recipe_to_json(r));
    scen["clients"] = std::move(recipes);
    j["scenario"] = std::move(scen);
  }
  return j.dump(2);
}

ExperimentConfig config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("cannot parse experiment config: ") + e.what());
  }

  ExperimentConfig config;
  config.alpha = j.value("alpha", 0.1);
  if (j.contains("methods")) {
    config.methods.clear();
    for (const auto& m : j.at("methods")) config.methods.push_back(method_from_name(m));
  }
  config.trials = j.value("trials", std::size_t{10});
  config.seed = j.value("seed", std::uint64_t{1});
  config.outdir = j.value("outdir", std::string("out"));
  const auto calib = j.value("calibration", std::string("transformed_client"));
  if (calib == "transformed_client") {
    config.calibration = conformal::CalibrationMode::TransformedClient;
  } else if (calib == "reference_samples") {
    config.calibration = conformal::CalibrationMode::ReferenceSamples;
  } else {
    throw ConfigError("unknown calibration mode '" + calib + "'");
  }
  config.ref_calib_n = j.value("ref_calib_n", std::size_t{2000});
  if (j.contains("grid")) {
    config.grid_points = j.at("grid").value("points", std::size_t{512});
    config.grid_pad = j.at("grid").value("pad", 0.5);
  }
  if (j.contains("flow")) {
    const auto& jf = j.at("flow");
    config.flow_layers = jf.value("layers", std::size_t{6});
    config.flow_hidden = jf.value("hidden", std::size_t{64});
    config.flow_depth = jf.value("depth", std::size_t{2});
    config.scale_clamp = jf.value("scale_clamp", 4.0);
  }
  if (j.contains("quantile")) {
    const auto& jq = j.at("quantile");
    const conformal::QuantileTrainConfig defaults;
    config.quantile.n_samples = jq.value("n_samples", defaults.n_samples);
    config.quantile.steps = jq.value("steps", defaults.steps);
    config.quantile.batch_size = jq.value("batch_size", defaults.batch_size);
    config.quantile.lr = jq.value("lr", defaults.lr);
    config.quantile.lr_decay = jq.value("lr_decay", defaults.lr_decay);
    config.quantile.lr_decay_at = jq.value("lr_decay_at", defaults.lr_decay_at);
    config.quantile.weight_decay = jq.value("weight_decay", defaults.weight_decay);
    config.quantile.tail_average_frac = jq.value("tail_average_frac", defaults.tail_average_frac);
    config.quantile.hidden = jq.value("hidden", defaults.hidden);
  }
  if (j.contains("fed")) {
    const auto& jf = j.at("fed");
    config.fed.rounds = jf.value("rounds", std::size_t{50});
    config.fed.local_steps = jf.value("local_steps", std::size_t{5});
    config.fed.batch_size = jf.value("batch_size", std::size_t{64});
    config.fed.lr = jf.value("lr", 1e-3);
    config.fed.clients_per_round = jf.value("clients_per_round", std::size_t{0});
    config.fed.per_batch_conditioner = jf.value("per_batch_conditioner", false);
    config.fed.learn_cond_mean = jf.value("learn_cond_mean", false);
    config.fed.checkpoint_every = jf.value("checkpoint_every", std::size_t{0});
    config.fed.checkpoint_dir = jf.value("checkpoint_dir", std::string());
  }

  if (j.contains("dataset_inline")) {
    config.dataset = dataset_from_json(j.at("dataset_inline"));
    config.dataset_config_path = j.value("dataset", std::string());
  } else if (j.contains("dataset")) {
    config.dataset_config_path = j.at("dataset").get<std::string>();
    config.dataset = load_dataset_config(config.dataset_config_path);
  } else if (j.contains("scenario")) {
    const auto& js = j.at("scenario");
    const auto name = js.value("name", std::string("homogeneous"));
    const auto k = js.value("k", std::size_t{2});
    const auto d = js.value("d", std::size_t{2});
    const auto n_train = js.value("n_train", std::size_t{1000});
    const auto n_calib = js.value("n_calib", std::size_t{500});
    const auto n_test = js.value("n_test", std::size_t{500});
    if (js.contains("clients")) {
      config.scenario.name = name;
      config.scenario.k = k;
      config.scenario.d = d;
      config.scenario.n_train = n_train;
      config.scenario.n_calib = n_calib;
      config.scenario.n_test = n_test;
      config.scenario.clients.clear();
      for (const auto& r : js.at("clients")) {
        config.scenario.clients.push_back(recipe_from_json(r));
      }
      if (config.scenario.clients.size() != k) {
        throw ConfigError("scenario: clients list does not match k");
      }
    } else {
      config.scenario = data::builtin_scenario(name, k, d, n_train, n_calib, n_test, config.seed);
    }
    config.scenario.cond_dim = js.value("cond_dim", std::size_t{4});
    config.scenario.cond_std = js.value("cond_std", 0.1);
  }
  return config;
}

ExperimentConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json_string(ss.str());
}

}  // namespace flowcp::experiment
