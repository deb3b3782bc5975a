#include "quantloss/metrics.hpp"

#include <cmath>

#include "quantloss/errors.hpp"

namespace quantloss {

ConfusionMatrix confusion_matrix(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) {
    throw ParameterError("confusion_matrix: prediction and label lengths differ");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] >= 0.5;
    const bool a = actual[i] >= 0.5;
    if (p && a) ++cm.tp;
    else if (!p && !a) ++cm.tn;
    else if (p) ++cm.fp;
    else ++cm.fn;
  }
  return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.tn < 0 || cm.fp < 0 || cm.fn < 0) {
    throw ParameterError("confusion matrix counts must be nonnegative");
  }
  const double n = static_cast<double>(cm.total());
  if (n <= 0.0) throw ParameterError("confusion matrix is empty");

  const double tp = static_cast<double>(cm.tp);
  const double tn = static_cast<double>(cm.tn);
  const double fp = static_cast<double>(cm.fp);
  const double fn = static_cast<double>(cm.fn);

  ClassificationMetrics m;
  m.accuracy = (tp + tn) / n;

  const double f1_den = 2.0 * tp + fp + fn;
  if (f1_den > 0.0) {
    m.f1 = 2.0 * tp / f1_den;
    m.jaccard = tp / (tp + fp + fn);
  } else {
    m.degenerate = true;
  }

  const double p_o = m.accuracy;
  const double p_e = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / (n * n);
  if (1.0 - p_e > 0.0) {
    m.kappa = (p_o - p_e) / (1.0 - p_e);
  } else {
    m.degenerate = true;
  }
  return m;
}

double rmse(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw ParameterError("rmse: length mismatch");
  if (predicted.empty()) throw ParameterError("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - target[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(predicted.size()));
}

}  // namespace quantloss
