#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "quantloss/config.hpp"
#include "quantloss/data.hpp"
#include "quantloss/network.hpp"

namespace quantloss {

// Seed streams. Every random choice in a run is drawn from
// derive_seed(run_seed, a, b, stream) so runs can be replayed piecewise.
enum class SeedStream : std::uint64_t { Init = 1, Shuffle = 2, Dropout = 3, Run = 4 };

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, SeedStream stream);

/// Seed of the run for (repeat, fold).
std::uint64_t run_seed(std::uint64_t config_seed, int repeat, int fold);

/// Row order used for `epoch` (0-based training epoch) of a run.
std::vector<std::size_t> batch_order(std::size_t n_rows, std::uint64_t run_seed, int epoch);

/// Network layout a config produces for a dataset.
LayerSpec layer_spec_for(const TrainConfig& config, int input_dim, int output_dim);

struct BatchObjective {
  double value = 0.0;
  Eigen::MatrixXd output_grad;  // d value / d outputs
};

/// Mean over rows (sum over output columns) of the configured objective.
BatchObjective evaluate_objective(const ObjectiveSpec& spec,
                                  const Eigen::Ref<const Eigen::MatrixXd>& outputs,
                                  const Eigen::Ref<const Eigen::MatrixXd>& targets);

/// Final-layer Lipschitz constant for a batch under the configured objective:
/// the log-cosh rule for LogCosh (and tilted variants scaled by
/// max(tau, 1-tau)), the sBQC rule for sBQC heads and the generic
/// (1/m) * K_z bound for the remaining losses.
double batch_lipschitz_constant(const ObjectiveSpec& spec, int m, double y_norm, double k_z,
                                double g_at_zero);

/// max_i ||targets.row(i)||_2.
double max_label_norm(const Eigen::Ref<const Eigen::MatrixXd>& targets);

struct EpochRecord {
  int epoch = 0;  // 0 is the untrained model
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // accuracy or RMSE
};

struct LRTraceEntry {
  int epoch = 0;
  int batch = 0;
  int m = 0;
  double y_norm = 0.0;
  double k_z = 0.0;
  double lipschitz = 0.0;
  double lr = 0.0;
};

struct RunRecord {
  int repeat = 0;
  int fold = 0;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::vector<LRTraceEntry> lr_trace;
  std::map<std::string, double> test_metrics;
  std::map<std::string, double> val_metrics;
  bool diverged = false;
  std::string message;
  int best_epoch = 0;
  MLPModel best_model;
  MLPModel final_model;
  StandardizeStats stats;
  int lbfgs_rejected_steps = 0;
};

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> stddev;  // only with two or more runs
  int count = 0;
};

struct RunReport {
  std::vector<RunRecord> runs;
  std::map<std::string, MetricSummary> val_summary;
  std::map<std::string, MetricSummary> test_summary;
};

/// One training run: standardises on `train`, trains for config.epochs and
/// scores `val` (and `test` when given). A non-finite loss aborts the run and
/// is recorded rather than thrown.
RunRecord train_run(const TrainConfig& config, const Dataset& train, const Dataset& val,
                    const Dataset* test, std::uint64_t seed);

/// Repeats x folds protocol. Runs are independent and may execute on several
/// threads; results are stored by (repeat, fold) so the report does not depend
/// on scheduling.
RunReport train(const TrainConfig& config, const FoldPlan& plan, const Dataset& dataset);

/// Mean/std of the named metrics across non-diverged runs.
std::map<std::string, MetricSummary> summarize(const std::vector<RunRecord>& runs, bool validation);

/// Per-epoch metric averaged across non-diverged runs. Known metrics:
/// train_loss, val_loss, val_metric.
std::vector<double> mean_epoch_trace(const RunReport& report, const std::string& metric);

/// First index whose value meets or exceeds the threshold.
std::optional<int> epochs_to_threshold(const std::vector<double>& trace, double threshold);
std::optional<int> epochs_to_threshold(const RunReport& report, const std::string& metric,
                                       double threshold);

/// Model predictions (regression outputs, or 0/1 labels for classification).
Eigen::MatrixXd predict(const ObjectiveSpec& spec, const MLPModel& model,
                        const Eigen::Ref<const Eigen::MatrixXd>& features);

/// Metric map for a model on an already standardised dataset.
std::map<std::string, double> score(const ObjectiveSpec& spec, const MLPModel& model,
                                    const Dataset& data);

nlohmann::json report_to_json(const RunReport& report, const std::string& dataset_name,
                              const TrainConfig& config);
/// Table-style summary: one row per metric with mean and std for validation
/// and test splits.
std::string report_summary_csv(const RunReport& report, const std::string& dataset_name,
                               const TrainConfig& config);

/// Worker cap from QUANTLOSS_THREADS (0 when unset or invalid).
int threads_from_env();

}  // namespace quantloss
