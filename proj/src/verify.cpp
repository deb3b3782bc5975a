#include "quantloss/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "quantloss/classify.hpp"
#include "quantloss/losses.hpp"
#include "quantloss/network.hpp"
#include "quantloss/optim.hpp"
#include "quantloss/secant_dist.hpp"
#include "quantloss/trainer.hpp"

namespace quantloss {

namespace {

constexpr double kFdStep = 1e-5;
const std::vector<double> kDistTaus{0.05, 0.25, 0.5, 0.75, 0.95};
const std::vector<double> kLipTaus{0.1, 0.25, 0.5, 0.75, 0.9};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

PropertyCheck make_check(std::string module, std::string name, double worst, double bound,
                         std::string detail = {}) {
  PropertyCheck c;
  c.module = std::move(module);
  c.name = std::move(name);
  c.worst = worst;
  c.bound = bound;
  c.passed = worst <= bound;
  c.detail = std::move(detail);
  return c;
}

std::vector<LossSpec> random_smooth_specs(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> tau(0.05, 0.95);
  std::uniform_real_distribution<double> scale(0.3, 3.0);
  return {LossSpec::log_cosh(scale(rng)), LossSpec::tilted(tau(rng)), LossSpec::huber(scale(rng)),
          LossSpec::mse()};
}

double integrate(const AsymmetricHSD& d, double a, double b) {
  auto f = [&](double x) { return d.pdf(x); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  // Split at the kink of the density.
  if (a < 0.0 && b > 0.0) return GK::integrate(f, a, 0.0, 15, 1e-14) + GK::integrate(f, 0.0, b, 15, 1e-14);
  return GK::integrate(f, a, b, 15, 1e-14);
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Dataset of two separated Gaussian blobs in 2-d.
Dataset separable_toy(std::uint64_t seed, int n) {
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

}  // namespace

double fd_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

std::vector<PropertyCheck> gradcheck_suite(std::uint64_t seed, int cases) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> res(-6.0, 6.0);
  std::vector<PropertyCheck> out;

  {
    double worst = 0.0;
    for (int c = 0; c < cases; ++c) {
      for (const auto& spec : random_smooth_specs(rng)) {
        double r = res(rng);
        if (spec.kind == LossKind::Huber && std::abs(std::abs(r) - spec.delta) < 1e-3) r += 0.01;
        const double num =
            (eval_loss(spec, r + kFdStep).value - eval_loss(spec, r - kFdStep).value) / (2 * kFdStep);
        worst = std::max(worst, fd_relative_error(eval_loss(spec, r).grad, num));
      }
    }
    out.push_back(make_check("losses", "loss gradients vs central differences", worst, 1e-6));
  }
  {
    double worst = 0.0;
    std::uniform_real_distribution<double> tau(0.05, 0.95);
    std::uniform_real_distribution<double> z(-15.0, 15.0);
    for (int c = 0; c < cases; ++c) {
      const double t = tau(rng), zz = z(rng), y = static_cast<double>(rng() % 2);
      const double num = (sbqc_loss(y, zz + kFdStep, t).value - sbqc_loss(y, zz - kFdStep, t).value) /
                         (2 * kFdStep);
      worst = std::max(worst, fd_relative_error(sbqc_loss(y, zz, t).grad_z, num));
    }
    out.push_back(make_check("classify", "sbqc gradient vs central differences", worst, 1e-6));
  }
  {
    double worst = 0.0;
    std::uniform_int_distribution<int> dim(1, 4);
    const Activation acts[] = {Activation::ReLU, Activation::Tanh, Activation::Identity};
    for (int c = 0; c < cases; ++c) {
      LayerSpec spec;
      spec.input_dim = dim(rng);
      spec.output_dim = dim(rng);
      spec.hidden_sizes = {dim(rng) + 1};
      spec.activation = acts[c % 3];
      MLPModel model = init_model(spec, rng());
      for (auto& b : model.biases) b = random_matrix(rng, 1, b.size());
      const int m = dim(rng);
      const Eigen::MatrixXd x = random_matrix(rng, m, spec.input_dim);
      const Eigen::MatrixXd g = random_matrix(rng, m, spec.output_dim);
      const ForwardResult fr = forward(model, x, false, 0);
      if (spec.activation == Activation::ReLU &&
          (fr.trace.pre_activations[0].array().abs() < 1e-3).any()) {
        --c;  // too close to the ReLU kink for a central difference
        continue;
      }
      const std::vector<double> analytic = flatten_gradients(backward(model, fr.trace, g));
      std::vector<double> p = flatten_params(model);
      MLPModel probe = model;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double saved = p[k];
        p[k] = saved + kFdStep;
        unflatten_params(probe, p);
        const double up = (forward(probe, x, false, 0).outputs.array() * g.array()).sum();
        p[k] = saved - kFdStep;
        unflatten_params(probe, p);
        const double down = (forward(probe, x, false, 0).outputs.array() * g.array()).sum();
        p[k] = saved;
        worst = std::max(worst, fd_relative_error(analytic[k], (up - down) / (2 * kFdStep)));
      }
    }
    out.push_back(make_check("network", "backprop vs central differences", worst, 1e-6));
  }
  return out;
}

std::vector<PropertyCheck> property_suite(std::uint64_t seed) {
  std::vector<PropertyCheck> out;
  for (auto& c : gradcheck_suite(seed, 200)) out.push_back(std::move(c));
  std::mt19937_64 rng(seed ^ 0x5eedULL);

  // ---- losses
  {
    double worst = -std::numeric_limits<double>::infinity();
    std::uniform_int_distribution<int> dim(1, 10);
    for (int inst = 0; inst < 20; ++inst) {
      const int m = dim(rng), d = dim(rng);
      const Eigen::MatrixXd x = random_matrix(rng, m, d, 3.0);
      const Eigen::VectorXd y = random_matrix(rng, m, 1, 3.0);
      const Eigen::VectorXd theta = random_matrix(rng, d, 1);
      const Eigen::VectorXd r = x * theta - y;
      Eigen::VectorXd w(m);
      for (int i = 0; i < m; ++i) w(i) = *eval_loss(LossSpec::log_cosh(), r(i)).curvature;
      const Eigen::MatrixXd hess = x.transpose() * w.asDiagonal() * x;
      const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(hess).eigenvalues().minCoeff();
      worst = std::max(worst, -min_eig);
    }
    out.push_back(make_check("losses", "log-cosh linear objective Hessian min eigenvalue >= -1e-10", worst,
                             1e-10, "statistic is -min eigenvalue"));
  }
  {
    double worst = -1.0;
    std::uniform_real_distribution<double> r(-8.0, 8.0);
    for (int i = 0; i < 10000; ++i) {
      const double a = r(rng), b = r(rng);
      for (const auto& spec : random_smooth_specs(rng)) {
        const double mid = eval_loss(spec, 0.5 * (a + b)).value;
        const double avg = 0.5 * (eval_loss(spec, a).value + eval_loss(spec, b).value);
        worst = std::max(worst, mid - avg);
      }
    }
    out.push_back(make_check("losses", "midpoint convexity", worst, 1e-12));
  }
  {
    double worst = -1.0;
    std::uniform_real_distribution<double> r(-50.0, 50.0);
    for (int i = 0; i < 100000; ++i) {
      const double a = r(rng), b = r(rng);
      worst = std::max(worst, std::abs(log_cosh(a) - log_cosh(b)) - std::abs(a - b));
    }
    // 1e-12 absorbs rounding in the two evaluations.
    out.push_back(make_check("losses", "log-cosh is 1-Lipschitz", worst, 1e-12,
                             "statistic is max |L(a)-L(b)| - |a-b|"));
  }
  {
    double worst = -1.0;
    std::uniform_real_distribution<double> r(-50.0, 50.0);
    for (double eps : {1e-3, 1e-6}) {
      for (int i = 0; i < 10000; ++i) {
        const double x = r(rng);
        worst = std::max(worst, std::abs(log_cosh(x + eps) - log_cosh(x)) - eps);
      }
    }
    out.push_back(make_check("losses", "robust to label noise", worst, 1e-12,
                             "statistic is max |L(x+e)-L(x)| - |e|"));
  }
  {
    double worst = 0.0;
    for (double x = 20.0; x <= 1e8; x *= 1.37) {
      for (double s : {-1.0, 1.0}) {
        worst = std::max(worst, std::abs(log_cosh(s * x) - (x - std::numbers::ln2)));
      }
    }
    out.push_back(make_check("losses", "asymptote |x| - log 2 for |x| >= 20", worst, 1e-8));
  }
  {
    double worst = 0.0;
    std::uniform_real_distribution<double> r(-100.0, 100.0);
    for (int i = 0; i < 10000; ++i) {
      const double x = r(rng);
      worst = std::max(worst, std::abs(tilted_log_cosh(x, 0.5).value - 0.5 * log_cosh(x)));
    }
    out.push_back(make_check("losses", "tilted(tau=0.5) equals 0.5 log-cosh", worst, 0.0));
  }
  {
    int mismatches = 0;
    std::uniform_int_distribution<int> small(-2, 2);
    for (int i = 0; i < 2000; ++i) {
      Eigen::MatrixXd q(3, 4);
      for (Eigen::Index k = 0; k < q.size(); ++k) q.data()[k] = small(rng);
      bool monotone = true;
      for (Eigen::Index a = 0; a < q.rows(); ++a)
        for (Eigen::Index b = 0; b + 1 < q.cols(); ++b) monotone = monotone && q(a, b) <= q(a, b + 1);
      if ((quantile_crossing_penalty(q) == 0.0) != monotone) ++mismatches;
    }
    out.push_back(make_check("losses", "crossing penalty zero iff rows monotone", mismatches, 0.0));
  }

  // ---- secant_dist
  {
    double worst = 0.0;
    for (double t : kDistTaus) worst = std::max(worst, std::abs(integrate(AsymmetricHSD(t), -50.0, 50.0) - 1.0));
    out.push_back(make_check("secant_dist", "pdf integrates to 1 on [-50,50]", worst, 1e-6));
  }
  {
    double worst = 0.0;
    std::uniform_real_distribution<double> r(-10.0, 10.0);
    for (int i = 0; i < 100; ++i) {
      const AsymmetricHSD d(kDistTaus[static_cast<std::size_t>(i) % kDistTaus.size()]);
      double a = r(rng), b = r(rng);
      if (a > b) std::swap(a, b);
      worst = std::max(worst, std::abs(d.cdf(b) - d.cdf(a) - integrate(d, a, b)));
    }
    out.push_back(make_check("secant_dist", "cdf is the antiderivative of pdf", worst, 1e-8));
  }
  {
    int failures = 0;
    std::uniform_real_distribution<double> r(-15.0, 15.0);
    for (int i = 0; i < 10000; ++i) {
      const AsymmetricHSD d(kDistTaus[static_cast<std::size_t>(i) % kDistTaus.size()]);
      const double x = r(rng);
      if (!(d.cdf(x + 1e-6) > d.cdf(x))) ++failures;
    }
    out.push_back(make_check("secant_dist", "cdf strictly increasing", failures, 0.0));
  }
  {
    double worst = 0.0;
    const AsymmetricHSD d(0.5);
    std::uniform_real_distribution<double> r(-30.0, 30.0);
    for (int i = 0; i < 10000; ++i) {
      const double x = r(rng);
      worst = std::max(worst, std::abs(d.cdf(-x) - (1.0 - d.cdf(x))));
    }
    out.push_back(make_check("secant_dist", "tau=0.5 symmetry", worst, 1e-12));
  }
  {
    double worst = 0.0;
    for (double t : kDistTaus) {
      const AsymmetricHSD d(t);
      for (double x = -20.0; x <= 20.0; x += 0.01) worst = std::max(worst, std::abs(d.inv_cdf(d.cdf(x)) - x));
    }
    out.push_back(make_check("secant_dist", "inv_cdf(cdf(x)) = x on [-20,20]", worst, 1e-7));
  }
  {
    double worst = 0.0;
    for (double t : kDistTaus) {
      const AsymmetricHSD d(t);
      for (double p = 1e-6; p < 1.0; p += 1e-3) worst = std::max(worst, std::abs(d.cdf(d.inv_cdf(p)) - p));
    }
    out.push_back(make_check("secant_dist", "cdf(inv_cdf(p)) = p", worst, 1e-9));
  }

  // ---- optim
  for (double t : kLipTaus) {
    double worst = 0.0;
    std::uniform_real_distribution<double> z(-20.0, 20.0);
    for (int i = 0; i < 100000; ++i) {
      const double z1 = z(rng), z2 = z(rng), y = static_cast<double>(rng() % 2);
      if (z1 == z2) continue;
      worst = std::max(worst, std::abs(sbqc_loss(y, z2, t).value - sbqc_loss(y, z1, t).value) / std::abs(z2 - z1));
    }
    const double k = sbqc_lipschitz_constant(t);
    out.push_back(make_check("optim", "sbqc slope <= sbqc constant, tau=" + fmt(t), worst - k, 1e-6,
                             "max slope " + fmt(worst) + ", constant " + fmt(k)));
  }
  {
    double worst = -1.0;
    int violations = 0;
    const int trials = 500;
    std::uniform_int_distribution<int> dim(1, 5);
    for (int trial = 0; trial < trials; ++trial) {
      LayerSpec spec;
      spec.input_dim = dim(rng);
      spec.output_dim = 1 + trial % 2;
      spec.hidden_sizes = {dim(rng) + 1};
      const MLPModel model = init_model(spec, rng());
      const int m = dim(rng);
      const Eigen::MatrixXd x = random_matrix(rng, m, spec.input_dim, 2.0);
      const Eigen::MatrixXd y = random_matrix(rng, m, spec.output_dim, 2.0);
      const ForwardResult fr = forward(model, x, false, 0);
      ObjectiveSpec obj;
      const BatchObjective bo = evaluate_objective(obj, fr.outputs, y);
      const Gradients g = backward(model, fr.trace, bo.output_grad);
      const double gmax = g.weights.back().cwiseAbs().maxCoeff();
      const double k = regression_lipschitz_constant(
          {m, max_label_norm(y), fr.trace.k_z, activation_at_zero(spec.output_activation), 0.5});
      worst = std::max(worst, gmax - k);
      if (gmax > k + 1e-8) ++violations;
    }
    out.push_back(make_check("optim", "last-layer gradient <= log-cosh constant", worst, 1e-8,
                             std::to_string(violations) + "/" + std::to_string(trials) + " nets violate"));
  }
  {
    // Logistic-style smooth convex objective for the L-BFGS invariants.
    const int n = 30, d = 8;
    const Eigen::MatrixXd x = random_matrix(rng, n, d);
    const Eigen::VectorXd y = random_matrix(rng, n, 1);
    Objective f = [&](std::span<const double> p) {
      const Eigen::Map<const Eigen::VectorXd> th(p.data(), d);
      const Eigen::VectorXd r = x * th - y;
      const BatchLoss bl = batch_loss(LossSpec::log_cosh(),
                                      std::span<const double>(r.data(), static_cast<std::size_t>(n)),
                                      std::vector<double>(static_cast<std::size_t>(n), 0.0));
      const Eigen::VectorXd gr = x.transpose() * Eigen::Map<const Eigen::VectorXd>(bl.grad.data(), n);
      return std::make_pair(bl.value, std::vector<double>(gr.data(), gr.data() + d));
    };
    std::vector<double> params(d, 3.0);
    LBFGSState state(5);
    double worst_increase = -1.0, worst_curv = -1.0;
    for (int it = 0; it < 60; ++it) {
      const LBFGSStepResult r = lbfgs_step(f, params, state);
      if (r.accepted) worst_increase = std::max(worst_increase, r.value_after - r.value_before);
      for (const auto& pr : state.memory.pairs()) worst_curv = std::max(worst_curv, LBFGSMemory::kMinCurvature - pr.sy);
    }
    out.push_back(make_check("optim", "accepted L-BFGS steps never increase the objective", worst_increase, 0.0));
    out.push_back(make_check("optim", "stored pairs satisfy s'y > 1e-10", worst_curv, 0.0));
    int ascents = 0;
    std::normal_distribution<double> gauss;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> g(d);
      for (auto& v : g) v = gauss(rng);
      if (!(dot(lbfgs_direction(state.memory, g), g) < 0.0)) ++ascents;
    }
    out.push_back(make_check("optim", "L-BFGS direction is a descent direction", ascents, 0.0));
  }

  // ---- classify
  {
    double worst = 0.0;
    std::uniform_real_distribution<double> tau(0.01, 0.99);
    std::uniform_real_distribution<double> z(-20.0, 20.0);
    for (int i = 0; i < 10000; ++i) {
      const double t = tau(rng), zz = z(rng), y = static_cast<double>(rng() % 2);
      const double num = (sbqc_loss(y, zz + kFdStep, t).value - sbqc_loss(y, zz - kFdStep, t).value) / (2 * kFdStep);
      worst = std::max(worst, fd_relative_error(sbqc_loss(y, zz, t).grad_z, num));
    }
    out.push_back(make_check("classify", "sbqc gradient vs central differences (10^4)", worst, 1e-6));
  }
  {
    double worst = 0.0;
    for (double t = 0.01; t < 1.0; t += 0.01) worst = std::max(worst, std::abs(predict_prob(0.0, t) - (1.0 - t)));
    out.push_back(make_check("classify", "predict_prob(0, tau) = 1 - tau", worst, 0.0));
  }
  {
    double worst = 0.0;
    std::uniform_real_distribution<double> tau(0.01, 0.99);
    std::uniform_real_distribution<double> z(-20.0, 20.0);
    for (int i = 0; i < 10000; ++i) {
      const double t = tau(rng), zz = z(rng);
      const double v1 = sbqc_loss(1.0, zz, t).value;
      const double v0 = sbqc_loss(0.0, zz, t).value;
      const double p = std::clamp(predict_prob(zz, t), kProbClamp, 1.0 - kProbClamp);
      worst = std::max({worst, -v1, -v0, std::abs(v1 + std::log(p))});
    }
    out.push_back(make_check("classify", "sbqc nonnegative and equals -log p for y=1", worst, 0.0));
  }
  {
    double worst = 0.0;
    // The reference computes 1 - F directly, which cancels badly past |z| = 10.
    std::uniform_real_distribution<double> z(-10.0, 10.0);
    for (int i = 0; i < 10000; ++i) {
      const double zz = z(rng), y = static_cast<double>(rng() % 2);
      const double f = 0.5 + 2.0 / std::numbers::pi * std::atan(std::tanh(zz / 2.0));
      const double p = std::clamp(1.0 - f, kProbClamp, 1.0 - kProbClamp);
      const double bce = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      worst = std::max(worst, std::abs(sbqc_loss(y, zz, 0.5).value - bce) / std::max(1.0, bce));
    }
    out.push_back(make_check("classify", "tau=0.5 sbqc equals cross-entropy on the HSD link", worst, 1e-9));
  }
  {
    TrainConfig cfg;
    cfg.objective.kind = ObjectiveKind::SBQC;
    cfg.hidden_sizes = {8};
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.optimizer.lr = 0.01;
    cfg.seed = seed;
    const Dataset toy = separable_toy(seed, 80);
    const MultiQuantileResult r = multi_quantile_train(toy, {0.25, 0.75}, cfg, 1.0);
    int ok = 0;
    const int transitions = static_cast<int>(r.train_penalty.size()) - 1;
    for (int e = 0; e < transitions; ++e) ok += r.train_penalty[e + 1] <= r.train_penalty[e];
    const double frac = static_cast<double>(ok) / transitions;
    out.push_back(make_check("classify", "crossing penalty non-increasing across epochs", 0.95 - frac, 0.0,
                             fmt(frac * 100) + "% of transitions non-increasing"));
  }
  return out;
}

std::string format_checks(const std::vector<PropertyCheck>& checks) {
  std::ostringstream s;
  s << std::left << std::setw(6) << "status" << "  " << std::setw(12) << "module" << "  " << std::setw(58)
    << "property" << "  " << std::setw(13) << "worst" << "  " << std::setw(13) << "bound" << "  margin\n";
  for (const auto& c : checks) {
    s << std::left << std::setw(6) << (c.passed ? "ok" : "FAIL") << "  " << std::setw(12) << c.module << "  "
      << std::setw(58) << c.name << "  " << std::setw(13) << fmt(c.worst) << "  " << std::setw(13)
      << fmt(c.bound) << "  " << fmt(c.margin());
    if (!c.detail.empty()) s << "  (" << c.detail << ")";
    s << '\n';
  }
  return s.str();
}

}  // namespace quantloss
