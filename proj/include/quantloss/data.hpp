#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace quantloss {

enum class TaskKind { Regression, Classification };

std::string to_string(TaskKind t);
TaskKind task_kind_from_string(const std::string& name);

struct Dataset {
  Eigen::MatrixXd features;  // rows are examples
  Eigen::MatrixXd targets;   // rows are examples; one column unless multi-output
  std::vector<std::string> feature_names;
  std::string target_name;
  TaskKind task = TaskKind::Regression;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t num_features() const { return static_cast<std::size_t>(features.cols()); }

  /// Rows in the given order.
  Dataset subset(const std::vector<std::size_t>& rows) const;
  /// Throws DataError on NaN/inf entries or non-binary classification targets.
  void validate() const;
};

struct CsvSchema {
  /// Target column by header name, or by zero-based index when the file has
  /// no header. Empty selects the last column.
  std::string target_column;
  char delimiter = ',';
  bool header = true;
  TaskKind task = TaskKind::Regression;
};

/// Strict numeric CSV reader. Any empty or unparseable cell aborts with an
/// error naming the 1-based data row and the column.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

struct StandardizeStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;  // floored at sqrt(1e-12)
  std::vector<std::string> warnings;

  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& features) const;
};

inline constexpr double kVarianceFloor = 1e-12;

/// Fit per-feature mean / population std on `features`.
StandardizeStats fit_standardizer(const Eigen::Ref<const Eigen::MatrixXd>& features);

struct Standardized {
  Dataset data;
  StandardizeStats stats;
};

Standardized standardize(const Dataset& train);
Dataset apply_standardizer(const StandardizeStats& stats, const Dataset& other);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::vector<Fold> folds;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> pool;
  std::uint64_t seed = 0;
};

/// Carves a validation split (val_fraction of each class for classification)
/// and deals the remaining pool into k folds. Classification folds are
/// stratified; regression folds are plain shuffles.
FoldPlan stratified_kfold(const Dataset& ds, int k, double val_fraction, std::uint64_t seed);

}  // namespace quantloss
