#include "quantloss/classify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "quantloss/errors.hpp"
#include "quantloss/losses.hpp"
#include "quantloss/optim.hpp"
#include "quantloss/secant_dist.hpp"
#include "quantloss/trainer.hpp"

namespace quantloss {

void SBQCSpec::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("sbqc tau must lie in (0,1)");
  if (!(reg_weight >= 0.0) || !std::isfinite(reg_weight)) {
    throw ParameterError("sbqc reg_weight must be a nonnegative finite number");
  }
}

namespace {

void check_label(double y) {
  if (y != 0.0 && y != 1.0) throw DomainError("label must be 0 or 1");
}

}  // namespace

LatentLoss sbqc_loss(double y, double z, double tau) {
  check_label(y);
  if (std::isnan(z)) throw DomainError("sbqc latent is NaN");
  const AsymmetricHSD dist(tau);
  // p = P(y=1) = survival, 1-p = cdf; both tails computed directly.
  double p = dist.survival(z);
  double q = dist.cdf(z);
  const bool clamped = p < kProbClamp || q < kProbClamp;
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  q = std::clamp(q, kProbClamp, 1.0 - kProbClamp);
  LatentLoss out;
  out.value = -(y * std::log(p) + (1.0 - y) * std::log(q));
  if (!clamped) out.grad_z = dist.pdf(z) * (y / p - (1.0 - y) / q);
  return out;
}

double predict_prob(double z, double tau) {
  return AsymmetricHSD(tau).survival(z);
}

double logistic_prob(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

LatentLoss bce_loss(double y, double z) {
  check_label(y);
  if (std::isnan(z)) throw DomainError("bce latent is NaN");
  LatentLoss out;
  out.value = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  out.grad_z = logistic_prob(z) - y;
  return out;
}

Eigen::MatrixXd quantile_latents(const std::vector<MLPModel>& heads,
                                 const Eigen::Ref<const Eigen::MatrixXd>& features) {
  Eigen::MatrixXd z(features.rows(), static_cast<Eigen::Index>(heads.size()));
  for (std::size_t t = 0; t < heads.size(); ++t) {
    z.col(static_cast<Eigen::Index>(t)) = forward(heads[t], features, false, 0).outputs.col(0);
  }
  return z;
}

namespace {

struct JointEval {
  double value = 0.0;
  double penalty = 0.0;
  Eigen::MatrixXd latent_grad;  // rows x heads
};

JointEval joint_objective(const Eigen::MatrixXd& latents, const Eigen::MatrixXd& y,
                          const std::vector<double>& grid, double lambda) {
  const Eigen::Index m = latents.rows();
  JointEval out;
  out.latent_grad.resize(m, latents.cols());
  for (Eigen::Index t = 0; t < latents.cols(); ++t) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const LatentLoss l = sbqc_loss(y(i, 0), latents(i, t), grid[static_cast<std::size_t>(t)]);
      sum += l.value;
      out.latent_grad(i, t) = l.grad_z / static_cast<double>(m);
    }
    out.value += sum / static_cast<double>(m);
  }
  if (latents.cols() < 2) return out;
  out.penalty = quantile_crossing_penalty(latents);
  out.value += lambda * out.penalty;
  if (lambda > 0.0) out.latent_grad += lambda * quantile_crossing_penalty_grad(latents);
  return out;
}

void validate_grid(const std::vector<double>& grid, std::size_t min_size) {
  if (grid.size() < min_size) {
    throw ParameterError("tau grid needs at least " + std::to_string(min_size) + " values");
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] < 1.0)) throw ParameterError("tau grid values must lie in (0,1)");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ParameterError("tau grid must be strictly increasing");
  }
}

}  // namespace

MultiQuantileResult multi_quantile_train(const Dataset& train, const std::vector<double>& tau_grid,
                                         const TrainConfig& base, double lambda) {
  validate_grid(tau_grid, lambda > 0.0 ? 2 : 1);
  SBQCSpec{tau_grid.front(), lambda}.validate();
  base.validate();
  train.validate();
  if (train.task != TaskKind::Classification || train.targets.cols() != 1) {
    throw ParameterError("multi-quantile training needs a binary classification dataset");
  }
  if (train.size() == 0) throw ParameterError("empty training set");

  const std::size_t n_heads = tau_grid.size();
  const LayerSpec spec = layer_spec_for(base, static_cast<int>(train.num_features()), 1);
  const MLPModel init = init_model(spec, derive_seed(base.seed, 0, 0, SeedStream::Init));

  MultiQuantileResult res;
  res.tau_grid = tau_grid;
  res.heads.assign(n_heads, init);

  auto record = [&]() {
    const JointEval e = joint_objective(quantile_latents(res.heads, train.features), train.targets,
                                        tau_grid, lambda);
    res.train_penalty.push_back(e.penalty);
    res.train_objective.push_back(e.value);
  };
  record();

  const std::size_t n = train.size();
  const std::size_t head_params = init.num_params();

  if (base.optimizer.kind == OptimizerKind::LBFGS) {
    std::vector<double> params;
    params.reserve(head_params * n_heads);
    for (const auto& h : res.heads) {
      const auto p = flatten_params(h);
      params.insert(params.end(), p.begin(), p.end());
    }
    std::vector<MLPModel> scratch = res.heads;
    Objective f = [&](std::span<const double> p) {
      std::vector<ForwardResult> fr;
      Eigen::MatrixXd z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_heads));
      for (std::size_t t = 0; t < n_heads; ++t) {
        unflatten_params(scratch[t], p.subspan(t * head_params, head_params));
        fr.push_back(forward(scratch[t], train.features, false, 0));
        z.col(static_cast<Eigen::Index>(t)) = fr.back().outputs.col(0);
      }
      std::vector<double> grad(p.size(), 0.0);
      if (!z.allFinite()) return std::make_pair(std::numeric_limits<double>::quiet_NaN(), grad);
      const JointEval e = joint_objective(z, train.targets, tau_grid, lambda);
      for (std::size_t t = 0; t < n_heads; ++t) {
        const auto g = flatten_gradients(
            backward(scratch[t], fr[t].trace, e.latent_grad.col(static_cast<Eigen::Index>(t))));
        std::copy(g.begin(), g.end(), grad.begin() + static_cast<std::ptrdiff_t>(t * head_params));
      }
      return std::make_pair(e.value, grad);
    };
    LBFGSState state(static_cast<std::size_t>(base.optimizer.m_hist));
    LBFGSOptions opts;
    opts.max_line_search = base.optimizer.max_line_search;
    for (int epoch = 0; epoch < base.epochs; ++epoch) {
      lbfgs_step(f, params, state, opts);
      for (std::size_t t = 0; t < n_heads; ++t) {
        unflatten_params(res.heads[t],
                         std::span<const double>(params).subspan(t * head_params, head_params));
      }
      record();
    }
    return res;
  }

  std::vector<std::vector<double>> params;
  std::vector<AdamState> adam;
  for (const auto& h : res.heads) {
    params.push_back(flatten_params(h));
    adam.emplace_back(head_params);
    adam.back().beta1 = base.optimizer.beta1;
    adam.back().beta2 = base.optimizer.beta2;
  }
  const LRPolicy policy = base.optimizer.effective_policy();
  const std::size_t batch = static_cast<std::size_t>(base.effective_batch_size(n));
  const double y_norm = max_label_norm(train.targets);

  for (int epoch = 0; epoch < base.epochs; ++epoch) {
    const auto order = batch_order(n, base.seed, epoch);
    int b = 0;
    for (std::size_t start = 0; start < n; start += batch, ++b) {
      const std::size_t end = std::min(n, start + batch);
      const Eigen::Index m = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(m, train.features.cols());
      Eigen::MatrixXd yb(m, 1);
      for (std::size_t i = start; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) = train.features.row(static_cast<Eigen::Index>(order[i]));
        yb(static_cast<Eigen::Index>(i - start), 0) = train.targets(static_cast<Eigen::Index>(order[i]), 0);
      }
      const std::uint64_t drop_seed = derive_seed(base.seed, static_cast<std::uint64_t>(epoch),
                                                  static_cast<std::uint64_t>(b), SeedStream::Dropout);
      std::vector<ForwardResult> fr;
      Eigen::MatrixXd z(m, static_cast<Eigen::Index>(n_heads));
      for (std::size_t t = 0; t < n_heads; ++t) {
        fr.push_back(forward(res.heads[t], xb, true, drop_seed));
        z.col(static_cast<Eigen::Index>(t)) = fr.back().outputs.col(0);
      }
      if (!z.allFinite()) throw DomainError("multi-quantile training diverged");
      const JointEval e = joint_objective(z, yb, tau_grid, lambda);
      for (std::size_t t = 0; t < n_heads; ++t) {
        const auto g = flatten_gradients(
            backward(res.heads[t], fr[t].trace, e.latent_grad.col(static_cast<Eigen::Index>(t))));
        double lr = base.optimizer.lr;
        if (policy == LRPolicy::ExpDecay) {
          lr = exp_decay_lr(base.optimizer.lr, epoch);
        } else if (policy == LRPolicy::Lalr) {
          ObjectiveSpec head_obj;
          head_obj.kind = ObjectiveKind::SBQC;
          head_obj.tau = tau_grid[t];
          lr = lalr_lr(batch_lipschitz_constant(head_obj, static_cast<int>(m), y_norm, fr[t].trace.k_z, 0.0),
                       base.optimizer.lr_min, base.optimizer.lr_max);
        }
        adam_step(adam[t], params[t], g, lr);
        unflatten_params(res.heads[t], params[t]);
      }
    }
    record();
  }
  return res;
}

CurvePoint locate_crossing(const std::vector<double>& tau_grid, const std::vector<double>& latents) {
  if (tau_grid.size() != latents.size() || tau_grid.empty()) {
    throw ParameterError("locate_crossing: grid and latents differ in length");
  }
  CurvePoint pt;
  for (std::size_t p = 0; p < latents.size(); ++p) {
    if (latents[p] == 0.0) {
      pt.tau_star = tau_grid[p];
      return pt;
    }
    if (p + 1 < latents.size() && (latents[p] < 0.0) != (latents[p + 1] < 0.0) && latents[p + 1] != 0.0) {
      const double t0 = tau_grid[p], t1 = tau_grid[p + 1];
      const double z0 = latents[p], z1 = latents[p + 1];
      pt.tau_star = t0 + (0.0 - z0) * (t1 - t0) / (z1 - z0);
      return pt;
    }
  }
  pt.status = latents.front() > 0.0 ? CurveStatus::BelowGrid : CurveStatus::AboveGrid;
  return pt;
}

QuantileCurve quantile_curve(const std::vector<MLPModel>& heads, const std::vector<double>& tau_grid,
                             int feature_index, const std::vector<double>& sweep_values,
                             const Eigen::Ref<const Eigen::RowVectorXd>& background,
                             const StandardizeStats* stats) {
  validate_grid(tau_grid, 1);
  if (sweep_values.empty()) throw ParameterError("empty sweep");
  if (heads.size() != tau_grid.size()) throw ParameterError("one head per grid value is required");
  if (feature_index < 0 || feature_index >= background.size()) {
    throw ParameterError("feature index " + std::to_string(feature_index) + " out of range");
  }
  if (background.size() != heads.front().spec.input_dim) {
    throw ParameterError("background row has the wrong number of features");
  }
  QuantileCurve curve;
  curve.feature_index = feature_index;
  curve.tau_grid = tau_grid;
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(sweep_values.size()), background.size());
  for (std::size_t i = 0; i < sweep_values.size(); ++i) {
    rows.row(static_cast<Eigen::Index>(i)) = background;
    rows(static_cast<Eigen::Index>(i), feature_index) = sweep_values[i];
  }
  const Eigen::MatrixXd inputs = stats != nullptr ? stats->apply(rows) : rows;
  const Eigen::MatrixXd z = quantile_latents(heads, inputs);
  for (std::size_t i = 0; i < sweep_values.size(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index t = 0; t < z.cols(); ++t) row[static_cast<std::size_t>(t)] = z(static_cast<Eigen::Index>(i), t);
    CurvePoint pt = locate_crossing(tau_grid, row);
    pt.feature_value = sweep_values[i];
    curve.points.push_back(pt);
  }
  return curve;
}

std::string quantile_curve_csv(const QuantileCurve& curve) {
  std::ostringstream out;
  out << std::setprecision(12) << "feature_value,tau_star\n";
  for (const auto& p : curve.points) {
    out << p.feature_value << ',';
    if (p.tau_star) out << *p.tau_star;
    out << '\n';
  }
  return out.str();
}

nlohmann::json quantile_curve_json(const QuantileCurve& curve, const std::string& feature_name) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : curve.points) {
    nlohmann::json j{{"feature_value", p.feature_value}};
    j["tau_star"] = p.tau_star ? nlohmann::json(*p.tau_star) : nlohmann::json(nullptr);
    j["status"] = p.status == CurveStatus::Crossed     ? "crossed"
                  : p.status == CurveStatus::BelowGrid ? "below_grid"
                                                       : "above_grid";
    points.push_back(j);
  }
  return {{"feature", feature_name},
          {"feature_index", curve.feature_index},
          {"tau_grid", curve.tau_grid},
          {"points", points}};
}

}  // namespace quantloss
