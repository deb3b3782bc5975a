#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "quantloss/classify.hpp"
#include "quantloss/errors.hpp"
#include "quantloss/losses.hpp"
#include "quantloss/secant_dist.hpp"
#include "quantloss/trainer.hpp"

using namespace quantloss;

namespace {

Dataset two_blobs(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset ds;
  ds.task = TaskKind::Classification;
  ds.features.resize(n, 2);
  ds.targets.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    const double y = i % 2;
    const double c = y > 0 ? 1.5 : -1.5;
    ds.features(i, 0) = c + noise(rng);
    ds.features(i, 1) = c + noise(rng);
    ds.targets(i, 0) = y;
  }
  ds.feature_names = {"x0", "x1"};
  ds.target_name = "y";
  return ds;
}

TrainConfig toy_config(int epochs) {
  TrainConfig cfg;
  cfg.objective.kind = ObjectiveKind::SBQC;
  cfg.hidden_sizes = {8};
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.optimizer.lr = 0.01;
  cfg.seed = 3;
  return cfg;
}

// Linear head z = slope * x + offset on one input.
MLPModel linear_head(double slope, double offset) {
  LayerSpec s;
  s.input_dim = 1;
  s.output_dim = 1;
  MLPModel m = init_model(s, 0);
  m.weights[0](0, 0) = slope;
  m.biases[0](0) = offset;
  return m;
}

double naive_sbqc(double y, double z, double tau) {
  const double p = AsymmetricHSD(tau).survival(z);
  return -(y * std::log(p) + (1 - y) * std::log(1 - p));
}

}  // namespace

TEST(Sbqc, HandValues) {
  EXPECT_NEAR(sbqc_loss(1.0, 0.0, 0.5).value, std::log(2.0), 1e-15);
  EXPECT_NEAR(sbqc_loss(1.0, 0.0, 0.5).value, 0.6931472, 1e-7);
  EXPECT_NEAR(sbqc_loss(0.0, 0.0, 0.25).value, -std::log(0.25), 1e-15);
  EXPECT_NEAR(sbqc_loss(0.0, 0.0, 0.25).value, 1.3862944, 1e-7);
  EXPECT_NEAR(sbqc_loss(1.0, -60.0, 0.3).value, 0.0, 1e-12);
  EXPECT_NEAR(sbqc_loss(0.0, 60.0, 0.3).value, 0.0, 1e-12);
}

TEST(Sbqc, MatchesNaiveDefinition) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> z(-8, 8), t(0.05, 0.95);
  for (int i = 0; i < 2000; ++i) {
    const double zz = z(rng), tau = t(rng), y = static_cast<double>(i % 2);
    const double v = sbqc_loss(y, zz, tau).value;
    EXPECT_NEAR(v, naive_sbqc(y, zz, tau), 1e-9 * std::max(1.0, v));
    EXPECT_GE(v, 0.0);
  }
}

TEST(Sbqc, ClampBoundsLossAndZeroesGradient) {
  const LatentLoss l = sbqc_loss(1.0, 1e4, 0.5);
  EXPECT_TRUE(std::isfinite(l.value));
  EXPECT_NEAR(l.value, -std::log(kProbClamp), 1e-9);
  const LatentLoss r = sbqc_loss(1.0, 1e4, 0.5);
  EXPECT_EQ(r.grad_z, 0.0);
}

TEST(Sbqc, RejectsBadInputs) {
  EXPECT_THROW(sbqc_loss(0.5, 0.0, 0.5), DomainError);
  EXPECT_THROW(sbqc_loss(1.0, 0.0, 0.0), ParameterError);
  EXPECT_THROW(sbqc_loss(1.0, 0.0, 1.0), ParameterError);
  EXPECT_THROW(sbqc_loss(1.0, std::nan(""), 0.5), DomainError);
}

TEST(Sbqc, FiniteDifferenceGradient) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> z(-10, 10), t(0.01, 0.99);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double zz = z(rng), tau = t(rng), y = static_cast<double>(rng() % 2);
    const double h = 1e-6;
    const double fd = (sbqc_loss(y, zz + h, tau).value - sbqc_loss(y, zz - h, tau).value) / (2 * h);
    const double a = sbqc_loss(y, zz, tau).grad_z;
    worst = std::max(worst, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Sbqc, HalfTauIsCrossEntropyOnSecantLink) {
  for (double z = -10.0; z <= 10.0; z += 0.01) {
    const double f = 0.5 + 2.0 / std::numbers::pi * std::atan(std::tanh(z / 2.0));
    for (double y : {0.0, 1.0}) {
      const double bce = -(y * std::log(1 - f) + (1 - y) * std::log(f));
      ASSERT_NEAR(sbqc_loss(y, z, 0.5).value, bce, 1e-9 * std::max(1.0, bce)) << z;
    }
  }
}

TEST(PredictProb, Examples) {
  EXPECT_EQ(predict_prob(0.0, 0.3), 0.7);
  EXPECT_EQ(predict_prob(0.0, 0.5), 0.5);
  EXPECT_NEAR(predict_prob(-1.0, 0.25), 1.0 - AsymmetricHSD(0.25).cdf(-1.0), 1e-15);
  EXPECT_GT(predict_prob(-2.0, 0.5), predict_prob(2.0, 0.5));
}

TEST(PredictProb, Calibration) {
  // Labels drawn from the model itself: the average predicted probability
  // within each bin matches the observed frequency.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> z(-4, 4), u(0, 1);
  for (double tau : {0.25, 0.5, 0.75}) {
    std::vector<double> sum_p(10, 0.0), sum_y(10, 0.0), count(10, 0.0);
    for (int i = 0; i < 200000; ++i) {
      const double zz = z(rng), p = predict_prob(zz, tau);
      const int bin = std::min(9, static_cast<int>(p * 10));
      sum_p[bin] += p;
      sum_y[bin] += u(rng) < p ? 1.0 : 0.0;
      count[bin] += 1;
    }
    for (int b = 0; b < 10; ++b) {
      if (count[b] < 2000) continue;
      EXPECT_NEAR(sum_y[b] / count[b], sum_p[b] / count[b], 0.02) << "tau=" << tau << " bin " << b;
    }
  }
}

TEST(Bce, StableAndDifferentiated) {
  EXPECT_NEAR(bce_loss(1.0, 0.0).value, std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(1.0, 800.0).value, 0.0, 1e-300);
  EXPECT_NEAR(bce_loss(0.0, 800.0).value, 800.0, 1e-9);
  EXPECT_NEAR(bce_loss(1.0, 2.0).grad_z, logistic_prob(2.0) - 1.0, 1e-15);
  EXPECT_NEAR(logistic_prob(-800.0), 0.0, 1e-300);
}

TEST(QuantileLatents, OneColumnPerHead) {
  const std::vector<MLPModel> heads{linear_head(1.0, 0.0), linear_head(2.0, 1.0)};
  Eigen::MatrixXd x(3, 1);
  x << -1, 0, 2;
  const Eigen::MatrixXd q = quantile_latents(heads, x);
  ASSERT_EQ(q.cols(), 2);
  EXPECT_EQ(q(2, 0), 2.0);
  EXPECT_EQ(q(2, 1), 5.0);
  EXPECT_EQ(q(0, 1), -1.0);
}

TEST(MultiQuantile, GridValidation) {
  const Dataset toy = two_blobs(1, 20);
  const TrainConfig cfg = toy_config(1);
  EXPECT_THROW(multi_quantile_train(toy, {0.5}, cfg, 1.0), ParameterError);
  EXPECT_NO_THROW(multi_quantile_train(toy, {0.5}, cfg, 0.0));
  EXPECT_THROW(multi_quantile_train(toy, {0.7, 0.3}, cfg, 0.0), ParameterError);
  EXPECT_THROW(multi_quantile_train(toy, {0.0, 0.3}, cfg, 0.0), ParameterError);
  EXPECT_THROW(multi_quantile_train(toy, {}, cfg, 0.0), ParameterError);
  Dataset reg = toy;
  reg.task = TaskKind::Regression;
  EXPECT_THROW(multi_quantile_train(reg, {0.3, 0.6}, cfg, 0.0), ParameterError);
}

TEST(MultiQuantile, ZeroWeightMatchesIndependentFits) {
  const Dataset toy = two_blobs(2, 60);
  const TrainConfig cfg = toy_config(15);
  const MultiQuantileResult joint = multi_quantile_train(toy, {0.25, 0.75}, cfg, 0.0);
  const MultiQuantileResult lo = multi_quantile_train(toy, {0.25}, cfg, 0.0);
  const MultiQuantileResult hi = multi_quantile_train(toy, {0.75}, cfg, 0.0);
  const auto pj0 = flatten_params(joint.heads[0]), pj1 = flatten_params(joint.heads[1]);
  const auto pl = flatten_params(lo.heads[0]), ph = flatten_params(hi.heads[0]);
  ASSERT_EQ(pj0.size(), pl.size());
  for (std::size_t i = 0; i < pl.size(); ++i) {
    EXPECT_NEAR(pj0[i], pl[i], 1e-12);
    EXPECT_NEAR(pj1[i], ph[i], 1e-12);
  }
}

TEST(MultiQuantile, HeadsShareInitialisation) {
  const Dataset toy = two_blobs(3, 20);
  const MultiQuantileResult r = multi_quantile_train(toy, {0.2, 0.5, 0.8}, toy_config(1), 1.0);
  ASSERT_EQ(r.heads.size(), 3u);
  EXPECT_EQ(r.train_penalty.size(), 2u);
  // Identical heads give identical latents, so nothing crosses before training.
  EXPECT_EQ(r.train_penalty[0], 0.0);
}

TEST(MultiQuantile, PenaltyDrivenToZeroOnSeparableToy) {
  const Dataset toy = two_blobs(4, 80);
  const MultiQuantileResult r = multi_quantile_train(toy, {0.25, 0.75}, toy_config(200), 1.0);
  ASSERT_EQ(r.train_penalty.size(), 201u);
  ASSERT_EQ(r.train_objective.size(), 201u);
  int ok = 0;
  for (std::size_t e = 0; e + 1 < r.train_penalty.size(); ++e) ok += r.train_penalty[e + 1] <= r.train_penalty[e];
  EXPECT_GE(ok / 200.0, 0.95);
  const Eigen::MatrixXd q = quantile_latents(r.heads, toy.features);
  EXPECT_EQ(quantile_crossing_penalty(q), r.train_penalty.back());
  EXPECT_LE(r.train_penalty.back(), 1e-6);
  EXPECT_LT(r.train_objective.back(), r.train_objective.front());
}

TEST(MultiQuantile, LbfgsAndLalrRun) {
  const Dataset toy = two_blobs(5, 40);
  for (OptimizerKind k : {OptimizerKind::LBFGS, OptimizerKind::LalrAdam}) {
    TrainConfig cfg = toy_config(5);
    cfg.optimizer.kind = k;
    const MultiQuantileResult r = multi_quantile_train(toy, {0.3, 0.7}, cfg, 0.0);
    EXPECT_EQ(r.train_objective.size(), 6u);
    for (double v : r.train_objective) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(LocateCrossing, InterpolatesFirstSignChange) {
  const CurvePoint p = locate_crossing({0.4, 0.6}, {-1.0, 1.0});
  ASSERT_TRUE(p.tau_star.has_value());
  EXPECT_NEAR(*p.tau_star, 0.5, 1e-15);
  EXPECT_EQ(p.status, CurveStatus::Crossed);
  EXPECT_NEAR(*locate_crossing({0.2, 0.4, 0.6}, {3.0, 1.0, -3.0}).tau_star, 0.45, 1e-15);
  EXPECT_EQ(*locate_crossing({0.2, 0.4, 0.6}, {3.0, 0.0, -3.0}).tau_star, 0.4);
  EXPECT_NEAR(*locate_crossing({0.1, 0.3, 0.5, 0.7}, {-1.0, 1.0, -1.0, 1.0}).tau_star, 0.2, 1e-15);
}

TEST(LocateCrossing, OutsideGrid) {
  const CurvePoint below = locate_crossing({0.2, 0.5, 0.8}, {1.0, 2.0, 0.5});
  EXPECT_FALSE(below.tau_star.has_value());
  EXPECT_EQ(below.status, CurveStatus::BelowGrid);
  const CurvePoint above = locate_crossing({0.2, 0.5, 0.8}, {-1.0, -2.0, -0.5});
  EXPECT_EQ(above.status, CurveStatus::AboveGrid);
  EXPECT_THROW(locate_crossing({0.2, 0.5}, {1.0}), ParameterError);
}

TEST(QuantileCurve, TracksSyntheticHeads) {
  // Q_x(tau) = 2 (tau - 0.5) - x, so tau* = 0.5 + x / 2 inside the grid.
  const std::vector<double> grid{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<MLPModel> heads;
  for (double t : grid) heads.push_back(linear_head(-1.0, 2.0 * (t - 0.5)));
  const std::vector<double> sweep{-2.0, -0.6, 0.0, 0.3, 0.7, 2.0};
  const QuantileCurve c = quantile_curve(heads, grid, 0, sweep, Eigen::RowVectorXd::Zero(1));
  ASSERT_EQ(c.points.size(), sweep.size());
  EXPECT_EQ(c.points[0].status, CurveStatus::BelowGrid);
  EXPECT_EQ(c.points[5].status, CurveStatus::AboveGrid);
  for (int i = 1; i <= 4; ++i) EXPECT_NEAR(*c.points[i].tau_star, 0.5 + sweep[i] / 2, 1e-12);
  for (int i = 2; i <= 4; ++i) EXPECT_GT(*c.points[i].tau_star, *c.points[i - 1].tau_star);

  const std::string csv = quantile_curve_csv(c);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "feature_value,tau_star");
  EXPECT_NE(csv.find("\n-2,\n"), std::string::npos);
  EXPECT_NE(csv.find("\n0,0.5\n"), std::string::npos);

  const nlohmann::json j = quantile_curve_json(c, "x");
  EXPECT_EQ(j["feature"], "x");
  EXPECT_EQ(j["points"].size(), sweep.size());
  EXPECT_TRUE(j["points"][0]["tau_star"].is_null());
  EXPECT_EQ(j["points"][0]["status"], "below_grid");
  EXPECT_EQ(j["points"][5]["status"], "above_grid");
  EXPECT_EQ(j["points"][2]["status"], "crossed");
}

TEST(QuantileCurve, AppliesStandardizerToRawBackground) {
  const std::vector<double> grid{0.25, 0.75};
  const std::vector<MLPModel> heads{linear_head(-1.0, -0.5), linear_head(-1.0, 0.5)};
  StandardizeStats st;
  st.mean = Eigen::RowVectorXd::Constant(1, 10.0);
  st.stddev = Eigen::RowVectorXd::Constant(1, 2.0);
  // Raw 10 maps to 0: latents -0.5 and 0.5, crossing midway.
  const QuantileCurve c = quantile_curve(heads, grid, 0, {10.0}, Eigen::RowVectorXd::Zero(1), &st);
  EXPECT_NEAR(*c.points[0].tau_star, 0.5, 1e-12);
}

TEST(QuantileCurve, RejectsBadArguments) {
  const std::vector<double> grid{0.25, 0.75};
  const std::vector<MLPModel> heads{linear_head(1, 0), linear_head(1, 0)};
  const Eigen::RowVectorXd bg = Eigen::RowVectorXd::Zero(1);
  EXPECT_THROW(quantile_curve(heads, grid, 0, {}, bg), ParameterError);
  EXPECT_THROW(quantile_curve(heads, grid, 1, {0.0}, bg), ParameterError);
  EXPECT_THROW(quantile_curve(heads, {0.5}, 0, {0.0}, bg), ParameterError);
  EXPECT_THROW(quantile_curve(heads, grid, 0, {0.0}, Eigen::RowVectorXd::Zero(2)), ParameterError);
}
