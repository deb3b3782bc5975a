#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "quantloss/errors.hpp"
#include "quantloss/network.hpp"

using namespace quantloss;

namespace {

LayerSpec make_spec(int in, std::vector<int> hidden, int out, Activation a = Activation::ReLU) {
  LayerSpec s;
  s.input_dim = in;
  s.output_dim = out;
  s.hidden_sizes = std::move(hidden);
  s.activation = a;
  return s;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// sum(outputs .* g) so that d/dparams equals backward(.., g).
double probe(const MLPModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  return (forward(m, x, false, 0).outputs.array() * g.array()).sum();
}

double max_relative_fd_error(MLPModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  const ForwardResult fr = forward(model, x, false, 0);
  const auto analytic = flatten_gradients(backward(model, fr.trace, g));
  auto p = flatten_params(model);
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double saved = p[k];
    p[k] = saved + 1e-5;
    unflatten_params(model, p);
    const double up = probe(model, x, g);
    p[k] = saved - 1e-5;
    unflatten_params(model, p);
    const double down = probe(model, x, g);
    p[k] = saved;
    const double num = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(num - analytic[k]) / std::max({1.0, std::abs(num), std::abs(analytic[k])}));
  }
  unflatten_params(model, p);
  return worst;
}

}  // namespace

TEST(Init, DeterministicAndShaped) {
  const LayerSpec s = make_spec(943, {300, 300}, 4760);
  const MLPModel a = init_model(s, 9);
  const MLPModel b = init_model(s, 9);
  ASSERT_EQ(a.weights.size(), 3u);
  EXPECT_EQ(a.weights[0].rows(), 943);
  EXPECT_EQ(a.weights[0].cols(), 300);
  EXPECT_EQ(a.weights[1].rows(), 300);
  EXPECT_EQ(a.weights[1].cols(), 300);
  EXPECT_EQ(a.weights[2].rows(), 300);
  EXPECT_EQ(a.weights[2].cols(), 4760);
  EXPECT_EQ(flatten_params(a), flatten_params(b));
  EXPECT_NE(flatten_params(a), flatten_params(init_model(s, 10)));
}

TEST(Init, FanInBoundAndZeroBias) {
  const MLPModel m = init_model(make_spec(8, {100}, 1), 3);
  EXPECT_EQ(m.weights.size(), 2u);
  EXPECT_LE(m.weights[0].cwiseAbs().maxCoeff(), std::sqrt(6.0 / 8));
  EXPECT_LE(m.weights[1].cwiseAbs().maxCoeff(), std::sqrt(6.0 / 100));
  EXPECT_GT(m.weights[0].cwiseAbs().maxCoeff(), 0.8 * std::sqrt(6.0 / 8));
  for (const auto& b : m.biases) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Init, RejectsZeroWidth) {
  EXPECT_THROW(init_model(make_spec(3, {0}, 1), 1), ParameterError);
  EXPECT_THROW(init_model(make_spec(0, {2}, 1), 1), ParameterError);
  LayerSpec s = make_spec(3, {2}, 1);
  s.dropout = {1.0};
  EXPECT_THROW(init_model(s, 1), ParameterError);
}

TEST(Forward, ZeroWeightsGiveZeroOutputs) {
  MLPModel m = init_model(make_spec(4, {5, 3}, 2, Activation::Tanh), 1);
  for (auto& w : m.weights) w.setZero();
  std::mt19937_64 rng(1);
  EXPECT_EQ(forward(m, random_matrix(rng, 6, 4)).outputs.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, IdentitySingleLayer) {
  MLPModel m = init_model(make_spec(3, {}, 3, Activation::Identity), 1);
  m.weights[0].setIdentity();
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd x = random_matrix(rng, 4, 3);
  EXPECT_EQ(forward(m, x).outputs, x);
}

TEST(Forward, EvalModeIgnoresSeed) {
  LayerSpec s = make_spec(3, {16}, 1);
  s.dropout = {0.5};
  const MLPModel m = init_model(s, 4);
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd x = random_matrix(rng, 5, 3);
  EXPECT_EQ(forward(m, x, false, 1).outputs, forward(m, x, false, 2).outputs);
  EXPECT_NE(forward(m, x, true, 1).outputs, forward(m, x, true, 2).outputs);
  EXPECT_EQ(forward(m, x, true, 1).outputs, forward(m, x, true, 1).outputs);
}

TEST(Forward, RejectsBadInput) {
  const MLPModel m = init_model(make_spec(3, {4}, 1), 1);
  EXPECT_THROW(forward(m, Eigen::MatrixXd::Zero(2, 4)), ParameterError);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 3);
  x(1, 1) = std::nan("");
  EXPECT_THROW(forward(m, x), DomainError);
}

TEST(Forward, KzIsMaxOfLastHiddenActivations) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    LayerSpec s = make_spec(4, {6, 5}, 2, t % 2 ? Activation::Tanh : Activation::ReLU);
    s.dropout = {0.2, 0.3};
    const MLPModel m = init_model(s, static_cast<std::uint64_t>(t));
    const ForwardResult fr = forward(m, random_matrix(rng, 7, 4), t % 3 == 0, 11);
    const Eigen::MatrixXd& last = fr.trace.activations[s.hidden_sizes.size()];
    double brute = 0.0;
    for (Eigen::Index i = 0; i < last.rows(); ++i)
      for (Eigen::Index j = 0; j < last.cols(); ++j) brute = std::max(brute, std::abs(last(i, j)));
    EXPECT_EQ(fr.trace.k_z, brute);
  }
}

TEST(Forward, InvertedDropoutPreservesExpectation) {
  LayerSpec s = make_spec(3, {20}, 1, Activation::Tanh);
  s.dropout = {0.3};
  MLPModel m = init_model(s, 6);
  m.biases[1].setConstant(0.0);
  Eigen::MatrixXd x(1, 3);
  x << 0.5, -1.0, 0.8;
  const double clean = forward(m, x).outputs(0, 0);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double o = forward(m, x, true, static_cast<std::uint64_t>(i)).outputs(0, 0);
    sum += o;
    sq += o * o;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_NEAR(mean, clean, 4.0 * se);
}

TEST(Backward, ZeroOutputGradGivesZeroGradients) {
  const MLPModel m = init_model(make_spec(3, {4}, 2), 1);
  std::mt19937_64 rng(7);
  const ForwardResult fr = forward(m, random_matrix(rng, 5, 3));
  for (double v : flatten_gradients(backward(m, fr.trace, Eigen::MatrixXd::Zero(5, 2)))) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearCaseIsOuterProduct) {
  const MLPModel m = init_model(make_spec(3, {}, 2, Activation::Identity), 2);
  Eigen::MatrixXd x(1, 3);
  x << 1.0, -2.0, 0.5;
  Eigen::MatrixXd g(1, 2);
  g << 0.3, -1.1;
  const ForwardResult fr = forward(m, x);
  const Gradients grads = backward(m, fr.trace, g);
  const Eigen::MatrixXd outer = x.transpose() * g;
  EXPECT_TRUE(grads.weights[0].isApprox(outer, 1e-15));
  EXPECT_TRUE(grads.biases[0].isApprox(g, 1e-15));
}

TEST(Backward, FourTwoOneNet) {
  std::mt19937_64 rng(8);
  for (Activation a : {Activation::Tanh, Activation::Identity}) {
    MLPModel m = init_model(make_spec(4, {2}, 1, a), 3);
    for (auto& b : m.biases) b = random_matrix(rng, 1, b.size());
    EXPECT_LE(max_relative_fd_error(m, random_matrix(rng, 3, 4), random_matrix(rng, 3, 1)), 1e-5);
  }
}

TEST(Backward, RandomSmallNetsAllActivations) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> dim(1, 4);
  int checked = 0;
  while (checked < 60) {
    const Activation a = std::array{Activation::ReLU, Activation::Tanh, Activation::Identity}[checked % 3];
    LayerSpec s = make_spec(dim(rng), {dim(rng), dim(rng)}, dim(rng), a);
    MLPModel m = init_model(s, rng());
    for (auto& b : m.biases) b = random_matrix(rng, 1, b.size());
    if (m.num_params() > 50) continue;
    const Eigen::MatrixXd x = random_matrix(rng, dim(rng), s.input_dim);
    const ForwardResult fr = forward(m, x);
    bool near_kink = false;
    for (std::size_t l = 0; l + 1 < fr.trace.pre_activations.size(); ++l)
      near_kink = near_kink || (fr.trace.pre_activations[l].array().abs() < 1e-3).any();
    if (a == Activation::ReLU && near_kink) continue;
    EXPECT_LE(max_relative_fd_error(m, x, random_matrix(rng, x.rows(), s.output_dim)), 1e-5);
    ++checked;
  }
}

TEST(Backward, ReusesDropoutMasks) {
  LayerSpec s = make_spec(3, {8}, 1, Activation::Tanh);
  s.dropout = {0.5};
  const MLPModel m = init_model(s, 1);
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd x = random_matrix(rng, 4, 3);
  const Eigen::MatrixXd g = random_matrix(rng, 4, 1);
  const ForwardResult fr = forward(m, x, true, 77);
  const auto analytic = flatten_gradients(backward(m, fr.trace, g));
  MLPModel probe_model = m;
  auto p = flatten_params(m);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double saved = p[k];
    p[k] = saved + 1e-6;
    unflatten_params(probe_model, p);
    const double up = (forward(probe_model, x, true, 77).outputs.array() * g.array()).sum();
    p[k] = saved - 1e-6;
    unflatten_params(probe_model, p);
    const double down = (forward(probe_model, x, true, 77).outputs.array() * g.array()).sum();
    p[k] = saved;
    EXPECT_NEAR(analytic[k], (up - down) / 2e-6, 1e-7);
  }
}

TEST(Backward, RejectsMismatchedTrace) {
  const MLPModel m = init_model(make_spec(3, {4}, 1), 1);
  const MLPModel other = init_model(make_spec(3, {4, 4}, 1), 1);
  const ForwardResult fr = forward(other, Eigen::MatrixXd::Ones(2, 3));
  EXPECT_THROW(backward(m, fr.trace, Eigen::MatrixXd::Ones(2, 1)), ParameterError);
  const ForwardResult ok = forward(m, Eigen::MatrixXd::Ones(2, 3));
  EXPECT_THROW(backward(m, ok.trace, Eigen::MatrixXd::Ones(3, 1)), ParameterError);
}

TEST(Flatten, RoundTripAndLength) {
  MLPModel m = init_model(make_spec(5, {4, 3}, 2), 12);
  const auto p = flatten_params(m);
  EXPECT_EQ(p.size(), static_cast<std::size_t>((5 + 1) * 4 + (4 + 1) * 3 + (3 + 1) * 2));
  MLPModel copy = init_model(make_spec(5, {4, 3}, 2), 99);
  unflatten_params(copy, p);
  EXPECT_EQ(flatten_params(copy), p);
  EXPECT_THROW(unflatten_params(copy, std::vector<double>(p.size() - 1)), ParameterError);
}

TEST(Flatten, PerturbingOneIndexChangesOneParameter) {
  const MLPModel m = init_model(make_spec(3, {2}, 2), 1);
  const auto p = flatten_params(m);
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto q = p;
    q[k] += 1.0;
    MLPModel c = m;
    unflatten_params(c, q);
    int changed = 0;
    for (std::size_t l = 0; l < c.weights.size(); ++l) {
      changed += static_cast<int>((c.weights[l].array() != m.weights[l].array()).count());
      changed += static_cast<int>((c.biases[l].array() != m.biases[l].array()).count());
    }
    EXPECT_EQ(changed, 1);
  }
  // Layout: W0 row-major first.
  auto q = p;
  q[1] += 1.0;
  MLPModel c = m;
  unflatten_params(c, q);
  EXPECT_NE(c.weights[0](0, 1), m.weights[0](0, 1));
}

TEST(Checkpoint, RoundTripReproducesPredictions) {
  LayerSpec s = make_spec(4, {6}, 2, Activation::Tanh);
  s.dropout = {0.1};
  MLPModel m = init_model(s, 21);
  std::mt19937_64 rng(11);
  for (auto& b : m.biases) b = random_matrix(rng, 1, b.size());
  const auto path = (std::filesystem::temp_directory_path() / "quantloss_ckpt_test.json").string();
  save_checkpoint(m, path);
  const MLPModel back = load_checkpoint(path);
  std::remove(path.c_str());
  const Eigen::MatrixXd x = random_matrix(rng, 5, 4);
  EXPECT_EQ(forward(back, x).outputs, forward(m, x).outputs);
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_EQ(back.spec.dropout, m.spec.dropout);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), DataError);
}

TEST(Activation, Names) {
  for (Activation a : {Activation::ReLU, Activation::Tanh, Activation::Identity}) {
    EXPECT_EQ(activation_from_string(to_string(a)), a);
    EXPECT_EQ(activation_at_zero(a), 0.0);
  }
  EXPECT_THROW(activation_from_string("gelu"), ParameterError);
}
