#include "quantloss/losses.hpp"

#include <cmath>
#include <numbers>

#include "quantloss/errors.hpp"

namespace quantloss {

namespace {

double sech_squared(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

void require_finite(double residual) {
  if (!std::isfinite(residual)) {
    throw DomainError("loss evaluated at a non-finite residual");
  }
}

void require_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ParameterError("tau must lie strictly inside (0,1), got " + std::to_string(tau));
  }
}

LossEval eval_unchecked(const LossSpec& spec, double r) {
  switch (spec.kind) {
    case LossKind::LogCosh: {
      const double x = r / spec.h;
      return {log_cosh(x), std::tanh(x) / spec.h, sech_squared(x) / (spec.h * spec.h)};
    }
    case LossKind::TiltedLogCosh:
      return tilted_log_cosh(r, spec.tau);
    case LossKind::CheckLoss: {
      // Same tilt orientation as TiltedLogCosh: weight tau on r >= 0.
      const double w = r >= 0.0 ? spec.tau : spec.tau - 1.0;
      return {w * r, w, std::nullopt};
    }
    case LossKind::Huber: {
      const double a = std::abs(r);
      if (a < spec.delta) return {0.5 * r * r, r, 1.0};
      const double g = std::copysign(spec.delta, r);
      const double value = spec.delta * (a - 0.5 * spec.delta);
      if (a == spec.delta) return {value, g, std::nullopt};
      return {value, g, 0.0};
    }
    case LossKind::MSE:
      return {r * r, 2.0 * r, 2.0};
    case LossKind::MAE:
      return {std::abs(r), r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0), std::nullopt};
  }
  throw ParameterError("unknown loss kind");
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::LogCosh: return "logcosh";
    case LossKind::TiltedLogCosh: return "tilted_logcosh";
    case LossKind::CheckLoss: return "check";
    case LossKind::Huber: return "huber";
    case LossKind::MSE: return "mse";
    case LossKind::MAE: return "mae";
  }
  return "unknown";
}

LossKind loss_kind_from_string(std::string_view name) {
  for (auto k : {LossKind::LogCosh, LossKind::TiltedLogCosh, LossKind::CheckLoss,
                 LossKind::Huber, LossKind::MSE, LossKind::MAE}) {
    if (to_string(k) == name) return k;
  }
  throw ParameterError("unknown loss kind '" + std::string(name) + "'");
}

void LossSpec::validate() const {
  if (!(std::isfinite(h) && h > 0.0)) throw ParameterError("loss scale h must be positive");
  if (!(std::isfinite(delta) && delta > 0.0)) {
    throw ParameterError("huber delta must be positive");
  }
  require_tau(tau);
}

bool LossSpec::is_smooth() const {
  return kind == LossKind::LogCosh || kind == LossKind::TiltedLogCosh ||
         kind == LossKind::Huber || kind == LossKind::MSE;
}

double log_cosh(double x) {
  const double a = std::abs(x);
  return a - std::numbers::ln2 + std::log1p(std::exp(-2.0 * a));
}

LossEval tilted_log_cosh(double residual, double tau) {
  require_tau(tau);
  require_finite(residual);
  const double w = residual >= 0.0 ? tau : 1.0 - tau;
  return {w * log_cosh(residual), w * std::tanh(residual), w * sech_squared(residual)};
}

LossEval eval_loss(const LossSpec& spec, double residual) {
  spec.validate();
  require_finite(residual);
  return eval_unchecked(spec, residual);
}

double quantile_crossing_penalty(const Eigen::Ref<const Eigen::MatrixXd>& quantiles) {
  if (quantiles.cols() < 2) {
    throw ParameterError("crossing penalty needs at least two quantile columns");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < quantiles.rows(); ++i) {
    for (Eigen::Index p = 0; p + 1 < quantiles.cols(); ++p) {
      total += std::max(0.0, quantiles(i, p) - quantiles(i, p + 1));
    }
  }
  return total;
}

Eigen::MatrixXd quantile_crossing_penalty_grad(
    const Eigen::Ref<const Eigen::MatrixXd>& quantiles) {
  if (quantiles.cols() < 2) {
    throw ParameterError("crossing penalty needs at least two quantile columns");
  }
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(quantiles.rows(), quantiles.cols());
  for (Eigen::Index i = 0; i < quantiles.rows(); ++i) {
    for (Eigen::Index p = 0; p + 1 < quantiles.cols(); ++p) {
      if (quantiles(i, p) > quantiles(i, p + 1)) {
        grad(i, p) += 1.0;
        grad(i, p + 1) -= 1.0;
      }
    }
  }
  return grad;
}

std::vector<double> per_example_loss(const LossSpec& spec,
                                     std::span<const double> predictions,
                                     std::span<const double> targets) {
  spec.validate();
  if (predictions.size() != targets.size()) {
    throw ParameterError("predictions and targets differ in length");
  }
  std::vector<double> out(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double r = predictions[i] - targets[i];
    require_finite(r);
    out[i] = eval_unchecked(spec, r).value;
  }
  return out;
}

BatchLoss batch_loss(const LossSpec& spec, std::span<const double> predictions,
                     std::span<const double> targets, Reduction reduction) {
  spec.validate();
  if (predictions.size() != targets.size()) {
    throw ParameterError("predictions and targets differ in length");
  }
  if (predictions.empty()) throw ParameterError("batch_loss on an empty batch");

  const double scale =
      reduction == Reduction::Mean ? 1.0 / static_cast<double>(predictions.size()) : 1.0;
  BatchLoss out;
  out.grad.resize(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double r = predictions[i] - targets[i];
    require_finite(r);
    const LossEval e = eval_unchecked(spec, r);
    out.value += e.value;
    out.grad[i] = e.grad * scale;
  }
  out.value *= scale;
  return out;
}

}  // namespace quantloss
