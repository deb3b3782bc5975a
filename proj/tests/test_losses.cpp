#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "quantloss/errors.hpp"
#include "quantloss/losses.hpp"

using namespace quantloss;

namespace {

// Naive reference, fine for |x| well below the overflow point of cosh.
double naive_log_cosh(double x) { return std::log((std::exp(x) + std::exp(-x)) / 2.0); }

double central_diff(const LossSpec& s, double r, double h = 1e-5) {
  return (eval_loss(s, r + h).value - eval_loss(s, r - h).value) / (2 * h);
}

std::vector<LossSpec> smooth_specs(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> tau(0.05, 0.95), scale(0.3, 3.0);
  return {LossSpec::log_cosh(scale(rng)), LossSpec::tilted(tau(rng)), LossSpec::huber(scale(rng)),
          LossSpec::mse()};
}

}  // namespace

TEST(LogCosh, IdentityAtZero) {
  const LossEval e = eval_loss(LossSpec::log_cosh(), 0.0);
  EXPECT_EQ(e.value, 0.0);
  EXPECT_EQ(e.grad, 0.0);
  ASSERT_TRUE(e.curvature.has_value());
  EXPECT_EQ(*e.curvature, 1.0);
}

TEST(LogCosh, ValueAtTen) {
  EXPECT_NEAR(eval_loss(LossSpec::log_cosh(), 10.0).value, naive_log_cosh(10.0), 1e-12);
  EXPECT_NEAR(eval_loss(LossSpec::log_cosh(), 10.0).value, 9.3068528, 1e-7);
}

TEST(LogCosh, StableForHugeResiduals) {
  for (double r : {-1e8, -1e3, 710.0, 1e3, 1e8}) {
    const LossEval e = eval_loss(LossSpec::log_cosh(), r);
    EXPECT_TRUE(std::isfinite(e.value));
    EXPECT_NEAR(e.value, std::abs(r) - std::log(2.0), 1e-8 * std::abs(r));
    EXPECT_EQ(std::abs(e.grad), 1.0);
  }
}

TEST(LogCosh, ScaledDerivativesAreExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> r(-20, 20), h(0.2, 4.0);
  for (int i = 0; i < 500; ++i) {
    const double x = r(rng), hh = h(rng);
    const LossEval e = eval_loss(LossSpec::log_cosh(hh), x);
    EXPECT_DOUBLE_EQ(e.grad, std::tanh(x / hh) / hh);
    const double sech = 1.0 / std::cosh(x / hh);
    EXPECT_NEAR(*e.curvature, sech * sech / (hh * hh), 1e-15 / (hh * hh) + 1e-15);
    EXPECT_LE(std::abs(e.grad), 1.0 / hh);
  }
}

TEST(LogCosh, Asymptote) {
  for (double x = 20.0; x < 1e6; x *= 1.7) {
    EXPECT_LE(std::abs(log_cosh(x) - (x - std::log(2.0))), 1e-8);
    EXPECT_LE(std::abs(log_cosh(-x) - (x - std::log(2.0))), 1e-8);
  }
}

TEST(LogCosh, NonFiniteResidualIsDomainError) {
  EXPECT_THROW(eval_loss(LossSpec::log_cosh(), std::nan("")), DomainError);
  EXPECT_THROW(eval_loss(LossSpec::log_cosh(), INFINITY), DomainError);
}

TEST(TiltedLogCosh, HandValues) {
  EXPECT_EQ(tilted_log_cosh(0.0, 0.3).value, 0.0);
  EXPECT_NEAR(tilted_log_cosh(-1.0, 0.25).value, 0.75 * naive_log_cosh(1.0), 1e-15);
  EXPECT_NEAR(tilted_log_cosh(-1.0, 0.25).value, 0.3253356, 1e-7);
  EXPECT_NEAR(tilted_log_cosh(1.0, 0.25).value, 0.25 * naive_log_cosh(1.0), 1e-15);
  EXPECT_NEAR(tilted_log_cosh(1.0, 0.25).value, 0.1084452, 1e-7);
  EXPECT_NEAR(eval_loss(LossSpec::tilted(0.5), 2.0).value, 0.5 * naive_log_cosh(2.0), 1e-15);
  EXPECT_NEAR(eval_loss(LossSpec::tilted(0.5), 2.0).value, 0.6625014, 1e-7);
}

TEST(TiltedLogCosh, ZeroResidualUsesTauBranch) {
  const LossEval e = tilted_log_cosh(0.0, 0.2);
  ASSERT_TRUE(e.curvature.has_value());
  EXPECT_DOUBLE_EQ(*e.curvature, 0.2);
}

TEST(TiltedLogCosh, HalfTauIsHalfLogCosh) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> r(-300, 300);
  for (int i = 0; i < 10000; ++i) {
    const double x = r(rng);
    EXPECT_EQ(tilted_log_cosh(x, 0.5).value, 0.5 * eval_loss(LossSpec::log_cosh(), x).value);
  }
}

TEST(TiltedLogCosh, RejectsTauOutsideUnitInterval) {
  EXPECT_THROW(tilted_log_cosh(1.0, 0.0), ParameterError);
  EXPECT_THROW(tilted_log_cosh(1.0, 1.0), ParameterError);
  EXPECT_THROW(eval_loss(LossSpec::check(1.5), 1.0), ParameterError);
}

TEST(LossSpec, Validation) {
  EXPECT_THROW(LossSpec::log_cosh(0.0).validate(), ParameterError);
  EXPECT_THROW(LossSpec::log_cosh(-1.0).validate(), ParameterError);
  EXPECT_THROW(LossSpec::huber(0.0).validate(), ParameterError);
  EXPECT_NO_THROW(LossSpec::tilted(0.01).validate());
}

TEST(Baselines, HuberMseMaeCheck) {
  EXPECT_DOUBLE_EQ(eval_loss(LossSpec::huber(1.0), 0.5).value, 0.125);
  EXPECT_DOUBLE_EQ(eval_loss(LossSpec::huber(1.0), 3.0).value, 2.5);
  EXPECT_FALSE(eval_loss(LossSpec::huber(1.0), 1.0).curvature.has_value());
  EXPECT_DOUBLE_EQ(eval_loss(LossSpec::mse(), 3.0).value, 9.0);
  EXPECT_DOUBLE_EQ(eval_loss(LossSpec::mse(), 3.0).grad, 6.0);
  EXPECT_DOUBLE_EQ(eval_loss(LossSpec::mae(), -2.0).value, 2.0);
  EXPECT_FALSE(eval_loss(LossSpec::mae(), -2.0).curvature.has_value());
  EXPECT_DOUBLE_EQ(eval_loss(LossSpec::check(0.25), 2.0).value, 0.5);
  EXPECT_DOUBLE_EQ(eval_loss(LossSpec::check(0.25), -2.0).value, 1.5);
  EXPECT_FALSE(eval_loss(LossSpec::check(0.25), 2.0).curvature.has_value());
}

TEST(LossProperties, LogCoshAgreesWithHalfTiltedUpToFactor) {
  for (double r : {-7.0, -0.3, 0.0, 0.4, 12.0}) {
    EXPECT_DOUBLE_EQ(eval_loss(LossSpec::log_cosh(), r).value, 2.0 * tilted_log_cosh(r, 0.5).value);
  }
}

TEST(LossProperties, GradientsMatchCentralDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> r(-6, 6);
  for (int i = 0; i < 200; ++i) {
    for (const auto& spec : smooth_specs(rng)) {
      double x = r(rng);
      if (spec.kind == LossKind::Huber && std::abs(std::abs(x) - spec.delta) < 1e-3) x += 0.01;
      EXPECT_NEAR(eval_loss(spec, x).grad, central_diff(spec, x), 1e-6) << to_string(spec.kind) << " r=" << x;
    }
  }
}

TEST(LossProperties, CurvatureMatchesDifferenceOfGradients) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> r(-6, 6);
  for (int i = 0; i < 200; ++i) {
    for (const auto& spec : smooth_specs(rng)) {
      const double x = r(rng);
      const LossEval e = eval_loss(spec, x);
      if (!e.curvature || std::abs(x) < 1e-3) continue;
      if (spec.kind == LossKind::Huber && std::abs(std::abs(x) - spec.delta) < 1e-3) continue;
      const double fd = (eval_loss(spec, x + 1e-5).grad - eval_loss(spec, x - 1e-5).grad) / 2e-5;
      EXPECT_NEAR(*e.curvature, fd, 1e-6);
    }
  }
}

TEST(LossProperties, MidpointConvexity) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> r(-8, 8);
  for (int i = 0; i < 10000; ++i) {
    const double a = r(rng), b = r(rng);
    for (const auto& spec : smooth_specs(rng)) {
      const double mid = eval_loss(spec, 0.5 * (a + b)).value;
      const double avg = 0.5 * (eval_loss(spec, a).value + eval_loss(spec, b).value);
      ASSERT_LE(mid, avg + 1e-12);
    }
  }
}

TEST(LossProperties, OneLipschitz) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> r(-50, 50);
  for (int i = 0; i < 100000; ++i) {
    const double a = r(rng), b = r(rng);
    ASSERT_LE(std::abs(log_cosh(a) - log_cosh(b)), std::abs(a - b) + 1e-12);
  }
}

TEST(LossProperties, RobustToLabelNoise) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> r(-50, 50);
  for (double eps : {1e-3, 1e-6}) {
    for (int i = 0; i < 10000; ++i) {
      const double x = r(rng);
      ASSERT_LE(std::abs(log_cosh(x + eps) - log_cosh(x)), eps + 1e-12);
    }
  }
}

TEST(CrossingPenalty, Examples) {
  Eigen::MatrixXd a(1, 3);
  a << 1, 2, 3;
  EXPECT_EQ(quantile_crossing_penalty(a), 0.0);
  a << 2, 1, 3;
  EXPECT_EQ(quantile_crossing_penalty(a), 1.0);
  Eigen::MatrixXd b(2, 3);
  b << 0, 0, 0, 5, 4, 4;
  EXPECT_EQ(quantile_crossing_penalty(b), 1.0);
  EXPECT_THROW(quantile_crossing_penalty(Eigen::MatrixXd::Zero(3, 1)), ParameterError);
}

TEST(CrossingPenalty, ZeroIffRowsMonotone) {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<int> v(-2, 2);
  for (int trial = 0; trial < 5000; ++trial) {
    Eigen::MatrixXd q(3, 4);
    for (Eigen::Index k = 0; k < q.size(); ++k) q.data()[k] = v(rng);
    bool monotone = true;
    double brute = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int p = 0; p < 3; ++p) {
        monotone = monotone && q(i, p) <= q(i, p + 1);
        brute += std::max(0.0, q(i, p) - q(i, p + 1));
      }
    EXPECT_EQ(quantile_crossing_penalty(q), brute);
    EXPECT_EQ(quantile_crossing_penalty(q) == 0.0, monotone);
  }
}

TEST(CrossingPenalty, SubgradientMatchesDifferences) {
  Eigen::MatrixXd q(2, 3);
  q << 0.3, -0.1, 0.7, 1.0, 2.0, 1.5;
  const Eigen::MatrixXd g = quantile_crossing_penalty_grad(q);
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    Eigen::MatrixXd up = q, down = q;
    up.data()[k] += 1e-6;
    down.data()[k] -= 1e-6;
    EXPECT_NEAR(g.data()[k], (quantile_crossing_penalty(up) - quantile_crossing_penalty(down)) / 2e-6, 1e-8);
  }
}

TEST(BatchLoss, Examples) {
  const std::vector<double> zero{0.0, 0.0};
  BatchLoss b = batch_loss(LossSpec::log_cosh(), std::vector<double>{1.0, -1.0}, zero);
  EXPECT_NEAR(b.value, 0.4337809, 1e-7);
  EXPECT_NEAR(b.grad[0], std::tanh(1.0) / 2, 1e-15);
  EXPECT_NEAR(b.grad[1], -std::tanh(1.0) / 2, 1e-15);

  b = batch_loss(LossSpec::mse(), std::vector<double>{3.0}, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(b.value, 4.0);
  EXPECT_DOUBLE_EQ(b.grad[0], 4.0);

  b = batch_loss(LossSpec::huber(1.0), std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0});
  EXPECT_EQ(b.value, 0.0);
  EXPECT_EQ(b.grad[0], 0.0);
  EXPECT_EQ(b.grad[1], 0.0);
}

TEST(BatchLoss, SumReductionAndErrors) {
  const BatchLoss b = batch_loss(LossSpec::mae(), std::vector<double>{1.0, -2.0}, std::vector<double>{0.0, 0.0},
                                 Reduction::Sum);
  EXPECT_DOUBLE_EQ(b.value, 3.0);
  EXPECT_THROW(batch_loss(LossSpec::mse(), std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ParameterError);
  EXPECT_THROW(batch_loss(LossSpec::mse(), std::vector<double>{}, std::vector<double>{}), ParameterError);
}

TEST(BatchLoss, PerExample) {
  const auto v = per_example_loss(LossSpec::mse(), std::vector<double>{1.0, 3.0}, std::vector<double>{0.0, 1.0});
  ASSERT_EQ(v.size(), 2u);
  EXPECT_DOUBLE_EQ(v[0], 1.0);
  EXPECT_DOUBLE_EQ(v[1], 4.0);
}

TEST(LossKind, StringRoundTrip) {
  for (LossKind k : {LossKind::LogCosh, LossKind::TiltedLogCosh, LossKind::CheckLoss, LossKind::Huber, LossKind::MSE,
                     LossKind::MAE}) {
    EXPECT_EQ(loss_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(loss_kind_from_string("pinball"), ParameterError);
}
