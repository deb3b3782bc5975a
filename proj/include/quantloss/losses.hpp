#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace quantloss {

// Residual convention used everywhere in this library:
//
//     residual = prediction - target
//
// so a positive residual means over-prediction. Every gradient returned here
// is d(loss)/d(residual), which equals d(loss)/d(prediction).

enum class LossKind { LogCosh, TiltedLogCosh, CheckLoss, Huber, MSE, MAE };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

struct LossSpec {
  LossKind kind = LossKind::LogCosh;
  double h = 1.0;      // LogCosh scale
  double tau = 0.5;    // TiltedLogCosh, CheckLoss
  double delta = 1.0;  // Huber

  static LossSpec log_cosh(double h = 1.0) { return {LossKind::LogCosh, h, 0.5, 1.0}; }
  static LossSpec tilted(double tau) { return {LossKind::TiltedLogCosh, 1.0, tau, 1.0}; }
  static LossSpec check(double tau) { return {LossKind::CheckLoss, 1.0, tau, 1.0}; }
  static LossSpec huber(double delta) { return {LossKind::Huber, 1.0, 0.5, delta}; }
  static LossSpec mse() { return {LossKind::MSE, 1.0, 0.5, 1.0}; }
  static LossSpec mae() { return {LossKind::MAE, 1.0, 0.5, 1.0}; }

  /// Throws ParameterError unless tau is in (0,1) and h, delta are positive
  /// finite numbers.
  void validate() const;

  /// True for kinds with a continuous first derivative everywhere.
  bool is_smooth() const;
};

struct LossEval {
  double value = 0.0;
  double grad = 0.0;
  /// Second derivative; empty where the loss is not twice differentiable
  /// (MAE, CheckLoss, Huber at |r| == delta).
  std::optional<double> curvature;
};

/// log(cosh(x)) evaluated as |x| - log 2 + log1p(exp(-2|x|)); finite for every
/// finite x.
double log_cosh(double x);

LossEval eval_loss(const LossSpec& spec, double residual);

/// (1 - tau) * logcosh(r) for r < 0, tau * logcosh(r) for r >= 0.
LossEval tilted_log_cosh(double residual, double tau);

/// Sum over rows i and adjacent columns p of max(0, Q[i,p] - Q[i,p+1]).
/// Columns must be ordered by ascending tau.
double quantile_crossing_penalty(const Eigen::Ref<const Eigen::MatrixXd>& quantiles);

/// Subgradient of quantile_crossing_penalty with respect to each entry of Q.
Eigen::MatrixXd quantile_crossing_penalty_grad(
    const Eigen::Ref<const Eigen::MatrixXd>& quantiles);

enum class Reduction { Mean, Sum };

struct BatchLoss {
  double value = 0.0;
  std::vector<double> grad;  // d value / d prediction_i
};

BatchLoss batch_loss(const LossSpec& spec, std::span<const double> predictions,
                     std::span<const double> targets,
                     Reduction reduction = Reduction::Mean);

/// Unreduced per-example loss values.
std::vector<double> per_example_loss(const LossSpec& spec,
                                     std::span<const double> predictions,
                                     std::span<const double> targets);

}  // namespace quantloss
