#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowcp/conformal.hpp"
#include "flowcp/csv.hpp"
#include "flowcp/federated.hpp"
#include "flowcp/scenario.hpp"

namespace flowcp::experiment {

enum class Method { CqrOnly, FedccpNoCond, Fedccp };

std::string method_name(Method method);
Method method_from_name(const std::string& name);

/// Multi-client CSV source: one file per client, split by fractions at run
/// time. Loaded from a JSON adapter config (see README).
struct DatasetConfig {
  data::CsvSchema schema;
  std::vector<std::string> client_paths;
  std::array<double, 3> fractions = {0.6, 0.2, 0.2};
  std::size_t cond_dim = 4;
  double cond_std = 0.1;
};

DatasetConfig load_dataset_config(const std::string& path);

struct ExperimentConfig {
  data::ScenarioSpec scenario;                 // used unless dataset is set
  std::optional<DatasetConfig> dataset;        // CSV adapter mode
  std::string dataset_config_path;             // provenance for snapshots

  double alpha = 0.1;
  std::vector<Method> methods = {Method::CqrOnly, Method::FedccpNoCond, Method::Fedccp};
  fed::FedConfig fed;

  std::size_t flow_layers = 6;
  std::size_t flow_hidden = 64;
  std::size_t flow_depth = 2;
  double scale_clamp = 4.0;

  conformal::QuantileTrainConfig quantile;
  std::size_t grid_points = 512;
  double grid_pad = 0.5;
  conformal::CalibrationMode calibration = conformal::CalibrationMode::TransformedClient;
  std::size_t ref_calib_n = 2000;  // reference-samples mode draws

  std::size_t trials = 10;
  std::uint64_t seed = 1;
  std::string outdir = "out";
};

struct MetricsRow {
  std::string method;
  std::size_t trial = 0;
  int client_id = 0;
  double coverage = 0.0;
  double avg_size = 0.0;
  std::size_t n_test = 0;
  double tau = 0.0;
  std::size_t unbounded_sets = 0;
  std::size_t numeric_failures = 0;
  double flow_final_nll = 0.0;  // NaN for cqr_only
};

struct FailureRecord {
  std::string method;
  std::size_t trial = 0;
  std::string stage;
  std::string message;
};

struct AggregateRow {
  std::string method;
  int client_id = 0;
  double coverage_mean = 0.0;
  double coverage_std = 0.0;
  double size_mean = 0.0;
  double size_std = 0.0;
  std::size_t trials = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::vector<FailureRecord> failures;
  std::string config_json;  // resolved snapshot; re-running it reproduces rows
  double target_coverage = 0.9;
};

/// Which flow (if any) a method trains; cqr_only never constructs one and
/// the two flow methods differ only in cond_dim.
struct MethodPlan {
  bool uses_flow = false;
  flow::FlowConfig arch;
};
MethodPlan method_plan(const ExperimentConfig& config, Method method, std::size_t feature_dim);

/// Runs every (method, trial): generate/load data, train the reference
/// quantile model, train flows where the method needs one, calibrate per
/// client, build test prediction sets, measure coverage and size. A stage
/// error marks that (method, trial) failed and the run continues.
/// Deterministic in (config, config.seed).
MetricsReport run_experiment(const ExperimentConfig& config);

/// Mean and sample std across trials per (method, client); recomputable from
/// the rows alone.
std::vector<AggregateRow> aggregate_rows(const std::vector<MetricsRow>& rows);

/// Writes rows.csv, aggregate.csv, plot_data.csv (with the target-coverage
/// line), failures.csv and config.json into outdir.
void emit_report(const MetricsReport& report, const std::string& outdir);

std::vector<MetricsRow> read_rows_csv(const std::string& path);

ExperimentConfig config_from_json_string(const std::string& text);
ExperimentConfig config_from_json_file(const std::string& path);
std::string config_to_json_string(const ExperimentConfig& config);

/// The per-trial client construction used by run_experiment; exposed so the
/// train/eval subcommands and tests build identical clients.
std::vector<fed::ClientSpec> build_trial_clients(const ExperimentConfig& config,
                                                 std::size_t trial);
std::uint64_t trial_seed(const ExperimentConfig& config, std::size_t trial);

}  // namespace flowcp::experiment
