#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowcp/flow.hpp"
#include "flowcp/mlp.hpp"
#include "flowcp/rng.hpp"
#include "flowcp/stats.hpp"
#include "flowcp/tensor.hpp"

namespace flowcp::conformal {

/// Standard quantile (pinball) loss at the given level.
double pinball_loss(double pred, double y, double level);

/// Two-headed quantile regressor. The net emits (q_lo, raw_gap) and
/// q_hi = q_lo + softplus(raw_gap), so the heads cannot cross.
struct QuantileModel {
  num::MlpParams net;
  double alpha = 0.1;

  std::pair<double, double> predict(std::span<const double> x) const;
  /// Buffer-reusing variant for evaluation loops.
  std::pair<double, double> predict_scratch(std::span<const double> x, std::vector<double>& out,
                                            std::vector<double>& tmp) const;
};

struct QuantileTrainConfig {
  std::size_t n_samples = 65536;  // reference draws (train_quantile_model only)
  std::size_t steps = 2000;
  std::size_t batch_size = 1024;
  double lr = 0.01;
  double lr_decay = 0.1;          // applied after lr_decay_at * steps
  double lr_decay_at = 0.6;
  double weight_decay = 0.02;     // decoupled, weight matrices only
  double tail_average_frac = 0.25;  // final fraction of steps averaged into the model
  std::vector<std::size_t> hidden = {16};
};

/// Fits the two heads at levels alpha/2 and 1-alpha/2 by pinball loss on the
/// given data. Throws TrainingError if the loss diverges.
QuantileModel train_quantile_regressor(const num::Tensor2& x, std::span<const double> y,
                                       double alpha, const QuantileTrainConfig& config,
                                       num::RngStream& rng);

/// Trains on fresh draws from the reference: features are the first dim-1
/// coordinates, the label is the last. Needs no client data.
QuantileModel train_quantile_model(const flow::ReferenceSpec& ref, double alpha,
                                   const QuantileTrainConfig& config, num::RngStream& rng);

/// CQR conformity score: max(q_lo(x) - y, y - q_hi(x)); negative inside the
/// raw band.
double cqr_score(const QuantileModel& model, std::span<const double> xt, double yt);

enum class CalibrationMode {
  TransformedClient,  // scores on the client's own calibration split pushed through the flow
  ReferenceSamples,   // scores on fresh draws from the reference itself
  PooledRaw,          // baseline: scores on pooled raw client data, no flow
};

struct CalibrationResult {
  std::vector<double> scores;
  double tau = 0.0;  // +infinity when the quantile rank exceeds n
  double alpha = 0.1;
  std::size_t n = 0;
  CalibrationMode mode = CalibrationMode::TransformedClient;
};

/// Scores each (row of xt, yt) pair and takes the conformal quantile.
CalibrationResult calibrate(const QuantileModel& model, const num::Tensor2& xt,
                            std::span<const double> yt, double alpha,
                            CalibrationMode mode = CalibrationMode::TransformedClient);

/// Reference-samples mode: scores n fresh draws from the reference itself,
/// giving one global threshold shared by every client.
CalibrationResult calibrate_on_reference(const QuantileModel& model, const flow::ReferenceSpec& ref,
                                         std::size_t n, double alpha, num::RngStream& rng);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool unbounded = false;

  double width() const { return hi - lo; }
  bool contains(double y) const { return unbounded || (y >= lo && y <= hi); }
};

/// [q_lo(xt) - tau, q_hi(xt) + tau]; unbounded when tau is infinite.
Interval reference_interval(const QuantileModel& model, std::span<const double> xt,
                            const CalibrationResult& result);

struct GridSpec {
  double y_min = 0.0;
  double y_max = 1.0;
  std::size_t n_points = 512;

  double spacing() const;
  double point(std::size_t i) const { return y_min + spacing() * static_cast<double>(i); }
};

/// Grid over [min - pad*range, max + pad*range] of the given labels.
GridSpec grid_for_labels(std::span<const double> labels, std::size_t n_points, double pad = 0.5);

/// Union of accepted grid cells in label space. Never smoothed: `accepted`
/// comes straight from the membership rule, and disconnected sets are
/// represented faithfully.
struct PredictionSet {
  GridSpec grid;
  std::vector<std::uint8_t> accepted;
  double measure = 0.0;          // spacing * number of accepted cells
  bool unbounded = false;        // tau was infinite: whole grid accepted
  std::size_t numeric_failures = 0;  // grid cells rejected due to flow numeric errors

  /// Membership by nearest grid cell.
  bool contains(double y) const;
  /// Contiguous accepted runs as (first cell center, last cell center).
  std::vector<std::pair<double, double>> accepted_intervals() const;
};

/// Pulls the reference-space set back through the flow: every candidate y on
/// the grid is pushed jointly as (x, y), and accepted iff its transformed
/// label lies in the reference interval at its own transformed features.
/// The transformed features are recomputed per candidate because the flow
/// acts on the joint vector; see README for the geometry consequences.
PredictionSet transform_set(const flow::FlowParams& flow, const QuantileModel& model,
                            const CalibrationResult& result, std::span<const double> x,
                            std::span<const double> eta, const GridSpec& grid);

struct CoverageSummary {
  double coverage = 0.0;
  double avg_size = 0.0;
};

/// coverage = fraction of y_true values inside their set (nearest-cell
/// membership); avg_size = mean set measure.
CoverageSummary coverage_and_size(std::span<const PredictionSet> sets,
                                  std::span<const double> y_true);

/// CSV rows: client_id,point_id,y_true,measure,covered,accepted_intervals
/// (intervals as lo:hi pairs joined by '|').
void write_sets_csv_header(std::ostream& os);
void append_sets_csv(std::ostream& os, int client_id, std::span<const PredictionSet> sets,
                     std::span<const double> y_true);

}  // namespace flowcp::conformal
