#pragma once

#include <cstdint>
#include <span>

namespace quantloss {

struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
};

/// Labels are 0/1; anything >= 0.5 counts as positive.
ConfusionMatrix confusion_matrix(std::span<const double> predicted, std::span<const double> actual);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  double jaccard = 0.0;
  double kappa = 0.0;
  /// Set when any metric hit a zero denominator and was reported as 0.
  bool degenerate = false;
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

double rmse(std::span<const double> predicted, std::span<const double> target);

}  // namespace quantloss
