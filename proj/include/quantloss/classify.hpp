#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "quantloss/config.hpp"
#include "quantloss/data.hpp"
#include "quantloss/network.hpp"

namespace quantloss {

// Binary labels y in {0,1}; the network emits a real latent z and
//
//     P(y = 1 | z) = 1 - F_tau(z)
//
// with F_tau the asymmetric hyperbolic secant CDF. The sBQC loss is the
// negative log-likelihood of that model.

inline constexpr double kProbClamp = 1e-12;

struct SBQCSpec {
  double tau = 0.5;
  double reg_weight = 1.0;  // crossing penalty weight for multi-quantile fits

  void validate() const;
};

struct LatentLoss {
  double value = 0.0;
  double grad_z = 0.0;
};

/// -[y log p + (1-y) log(1-p)], p = 1 - F_tau(z) clamped into
/// [1e-12, 1 - 1e-12]. grad_z is zero where the clamp is active.
LatentLoss sbqc_loss(double y, double z, double tau);

/// 1 - F_tau(z).
double predict_prob(double z, double tau);

/// Binary cross-entropy on a logistic link (the comparison baseline).
LatentLoss bce_loss(double y, double z);
double logistic_prob(double z);

struct MultiQuantileResult {
  std::vector<MLPModel> heads;  // one per tau, ascending
  std::vector<double> tau_grid;
  /// Crossing penalty of the training latents, before training and after each
  /// epoch.
  std::vector<double> train_penalty;
  /// Joint objective (sum of per-tau mean sBQC + lambda * penalty) per epoch,
  /// evaluated on the full training set with dropout off.
  std::vector<double> train_objective;
};

/// Jointly trains one network per tau. Every head is initialised from the
/// same seed. The per-batch objective is
///   sum_tau mean sBQC(tau) + lambda * quantile_crossing_penalty(latents).
/// `train` must already be standardised. Supports adam, lalr-adam and lbfgs
/// (the latter on the concatenated parameter vector).
MultiQuantileResult multi_quantile_train(const Dataset& train, const std::vector<double>& tau_grid,
                                         const TrainConfig& base, double lambda);

/// Latents of every head on `features`, one column per head.
Eigen::MatrixXd quantile_latents(const std::vector<MLPModel>& heads,
                                 const Eigen::Ref<const Eigen::MatrixXd>& features);

enum class CurveStatus { Crossed, BelowGrid, AboveGrid };

struct CurvePoint {
  double feature_value = 0.0;
  std::optional<double> tau_star;
  CurveStatus status = CurveStatus::Crossed;
};

struct QuantileCurve {
  int feature_index = 0;
  std::vector<double> tau_grid;
  std::vector<CurvePoint> points;
};

/// Sweeps one feature with the others held at `background` (raw units when
/// `stats` is given, model-input units otherwise). For each value, finds the
/// first sign change of Q_x(tau) along the grid and interpolates tau* linearly.
/// All-positive latents are marked BelowGrid, all-negative AboveGrid.
QuantileCurve quantile_curve(const std::vector<MLPModel>& heads, const std::vector<double>& tau_grid,
                             int feature_index, const std::vector<double>& sweep_values,
                             const Eigen::Ref<const Eigen::RowVectorXd>& background,
                             const StandardizeStats* stats = nullptr);

/// Root of the piecewise-linear interpolant of latents over the grid.
CurvePoint locate_crossing(const std::vector<double>& tau_grid, const std::vector<double>& latents);

/// CSV with columns feature_value,tau_star; tau_star is empty when no
/// crossing exists (see the JSON form for the reason).
std::string quantile_curve_csv(const QuantileCurve& curve);
nlohmann::json quantile_curve_json(const QuantileCurve& curve, const std::string& feature_name);

}  // namespace quantloss
