#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "quantloss/data.hpp"
#include "quantloss/losses.hpp"
#include "quantloss/network.hpp"

namespace quantloss {

/// What the network output is scored with. Regression objectives reuse
/// LossSpec; classification heads emit a latent scored by sBQC or, as the
/// baseline, binary cross-entropy on a logistic link.
enum class ObjectiveKind { Regression, SBQC, BCE };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::Regression;
  LossSpec regression;  // used when kind == Regression
  double tau = 0.5;     // sBQC quantile marker

  TaskKind task() const {
    return kind == ObjectiveKind::Regression ? TaskKind::Regression : TaskKind::Classification;
  }
  void validate() const;
};

enum class OptimizerKind { Adam, LalrAdam, LBFGS };
enum class LRPolicy { Constant, ExpDecay, Lalr };

std::string to_string(OptimizerKind k);
std::string to_string(LRPolicy p);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adam;
  LRPolicy lr_policy = LRPolicy::Constant;
  double lr = 0.01;
  double lr_min = 1e-4;
  double lr_max = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int m_hist = 10;
  int max_line_search = 25;

  /// LALR-Adam always runs the lalr policy.
  LRPolicy effective_policy() const {
    return kind == OptimizerKind::LalrAdam ? LRPolicy::Lalr : lr_policy;
  }
  void validate() const;
};

/// Learning rate for the exponential-decay comparator at a given epoch:
/// lr * 0.9 * exp(-0.0001 * epoch).
double exp_decay_lr(double lr, int epoch);

struct TrainConfig {
  ObjectiveSpec objective;
  OptimizerSpec optimizer;
  std::vector<int> hidden_sizes{100};
  std::vector<double> dropout;
  Activation activation = Activation::ReLU;
  int epochs = 50;
  /// 0 selects the task default: 64 classification, 256 regression, full batch
  /// for L-BFGS.
  int batch_size = 0;
  /// L-BFGS only: rows per fixed mega-batch; 0 means full batch.
  int lbfgs_batch = 0;
  int repeats = 20;
  int k_folds = 5;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  /// Upper bound on worker threads across (repeat, fold) runs; 0 = auto.
  int threads = 0;

  // Data source used by the CLI.
  std::string dataset_path;
  CsvSchema csv;

  // Multi-quantile classification.
  std::vector<double> tau_grid;
  double crossing_weight = 1.0;

  int effective_batch_size(std::size_t n_rows) const;
  void validate() const;
};

/// Reads a run config document. Unknown keys and out-of-range values raise
/// ParameterError naming the offending field.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& c);
TrainConfig load_config(const std::string& path);

/// Parses "0.1,0.2,0.3" into a strictly increasing list of values in (0,1).
std::vector<double> parse_tau_grid(const std::string& text);

}  // namespace quantloss
