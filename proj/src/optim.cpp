#include "quantloss/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "quantloss/errors.hpp"

namespace quantloss {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ParameterError("tau must lie strictly inside (0,1), got " + std::to_string(tau));
  }
}

}  // namespace

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ParameterError("adam_step: parameter, gradient and moment lengths differ");
  }
  if (!(lr > 0.0)) throw ParameterError("adam_step: learning rate must be positive");
  if (!all_finite(grads)) throw DomainError("adam_step: non-finite gradient, step rejected");

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

void LipschitzContext::validate() const {
  if (m < 1) throw ParameterError("LipschitzContext: batch size must be at least 1");
  if (!(k_z >= 0.0) || !std::isfinite(k_z) || !std::isfinite(y_norm) ||
      !std::isfinite(g_at_zero)) {
    throw ParameterError("LipschitzContext: fields must be finite and k_z >= 0");
  }
}

double regression_lipschitz_constant(const LipschitzContext& ctx) {
  ctx.validate();
  const double k = std::tanh(std::abs(ctx.g_at_zero - ctx.y_norm)) * ctx.k_z / ctx.m;
  return std::max(k, kLipschitzFloor);
}

double sbqc_lipschitz_constant(double tau) {
  require_tau(tau);
  return 2.0 / std::numbers::pi * std::max({1.0, (1.0 - tau) / tau, tau / (1.0 - tau)});
}

double sbqc_lipschitz_sup(double tau) {
  require_tau(tau);
  const double c = 2.0 / std::numbers::pi;
  return std::max({1.0, c * (1.0 - tau) / tau, c * tau / (1.0 - tau)});
}

double classification_lipschitz_constant(const LipschitzContext& ctx) {
  ctx.validate();
  return std::max(sbqc_lipschitz_constant(ctx.tau) * ctx.k_z / ctx.m, kLipschitzFloor);
}

double lalr_lr(double lipschitz, double lr_min, double lr_max) {
  if (!(lipschitz > 0.0)) throw ParameterError("lalr_lr: Lipschitz constant must be positive");
  if (!(lr_min > 0.0 && lr_min <= lr_max)) {
    throw ParameterError("lalr_lr: need 0 < lr_min <= lr_max");
  }
  return std::clamp(1.0 / lipschitz, lr_min, lr_max);
}

LBFGSMemory::LBFGSMemory(std::size_t history) : history_(history) {
  if (history == 0) throw ParameterError("L-BFGS history must be at least 1");
}

bool LBFGSMemory::push(std::vector<double> s, std::vector<double> y) {
  if (s.size() != y.size()) throw ParameterError("L-BFGS pair lengths differ");
  const double sy = dot(s, y);
  if (!(sy > kMinCurvature) || !std::isfinite(sy)) return false;
  if (!pairs_.empty() && pairs_.front().s.size() != s.size()) {
    throw ParameterError("L-BFGS pair length changed");
  }
  pairs_.push_back({std::move(s), std::move(y), sy});
  if (pairs_.size() > history_) pairs_.pop_front();
  return true;
}

std::vector<double> lbfgs_direction(const LBFGSMemory& mem, std::span<const double> grad) {
  if (!all_finite(grad)) throw DomainError("lbfgs_direction: non-finite gradient");
  const std::size_t n = grad.size();
  std::vector<double> q(grad.begin(), grad.end());
  const auto& pairs = mem.pairs();
  std::vector<double> alpha(pairs.size());

  for (std::size_t k = pairs.size(); k-- > 0;) {
    const auto& p = pairs[k];
    alpha[k] = dot(p.s, q) / p.sy;
    for (std::size_t i = 0; i < n; ++i) q[i] -= alpha[k] * p.y[i];
  }
  double gamma = 1.0;
  if (!pairs.empty()) {
    const auto& newest = pairs.back();
    gamma = newest.sy / dot(newest.y, newest.y);
  }
  for (auto& v : q) v *= gamma;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    const double beta = dot(p.y, q) / p.sy;
    for (std::size_t i = 0; i < n; ++i) q[i] += (alpha[k] - beta) * p.s[i];
  }
  for (auto& v : q) v = -v;

  const double slope = dot(q, grad);
  if (!(slope < 0.0) || !all_finite(q)) {
    for (std::size_t i = 0; i < n; ++i) q[i] = -grad[i];
  }
  return q;
}

LBFGSStepResult lbfgs_step(const Objective& objective, std::vector<double>& params,
                           LBFGSState& state, const LBFGSOptions& options) {
  if (!state.has_eval) {
    auto [value, grad] = objective(params);
    if (grad.size() != params.size()) throw ParameterError("objective gradient has wrong length");
    state.value = value;
    state.grad = std::move(grad);
    state.has_eval = true;
  }
  LBFGSStepResult res;
  res.value_before = state.value;
  res.value_after = state.value;
  if (!std::isfinite(state.value) || !all_finite(state.grad)) {
    throw DomainError("lbfgs_step: objective is not finite at the current iterate");
  }
  if (norm2(state.grad) == 0.0) {
    res.accepted = true;
    res.stationary = true;
    return res;
  }

  const std::vector<double> dir = lbfgs_direction(state.memory, state.grad);
  const double slope = dot(dir, state.grad);
  std::vector<double> trial(params.size());
  double t = 1.0;
  for (int k = 0; k < options.max_line_search; ++k, t *= 0.5) {
    ++res.trials;
    for (std::size_t i = 0; i < params.size(); ++i) trial[i] = params[i] + t * dir[i];
    auto [value, grad] = objective(trial);
    if (!std::isfinite(value) || value > state.value + options.c1 * t * slope) continue;

    std::vector<double> s(params.size());
    std::vector<double> y(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      s[i] = trial[i] - params[i];
      y[i] = grad[i] - state.grad[i];
    }
    res.pair_stored = state.memory.push(std::move(s), std::move(y));
    params = trial;
    state.value = value;
    state.grad = std::move(grad);
    res.accepted = true;
    res.step_size = t;
    res.value_after = value;
    return res;
  }
  state.memory.clear();
  return res;
}

}  // namespace quantloss
