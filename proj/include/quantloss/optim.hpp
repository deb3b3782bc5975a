#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace quantloss {

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update in place. Non-finite gradients leave params and
/// state untouched and throw DomainError.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               double lr);

// ---------------------------------------------------------------------------
// Lipschitz-adaptive learning rates

struct LipschitzContext {
  int m = 1;               // batch size
  double y_norm = 0.0;     // max 2-norm of a label row over all batches
  double k_z = 0.0;        // max |activation| entering the final layer
  double g_at_zero = 0.0;  // output activation at 0
  double tau = 0.5;        // sBQC only

  void validate() const;
};

inline constexpr double kLipschitzFloor = 1e-12;

/// (1/m) * tanh(|g(0) - ||y|||) * K_z, floored at kLipschitzFloor.
double regression_lipschitz_constant(const LipschitzContext& ctx);

/// (2/pi) * max(1, (1-tau)/tau, tau/(1-tau)).
double sbqc_lipschitz_constant(double tau);

/// Exact supremum of |dL/dz| for the sBQC loss:
/// max(1, (2/pi)(1-tau)/tau, (2/pi) tau/(1-tau)). Differs from
/// sbqc_lipschitz_constant when tau is near 0.5, where the loss tails grow
/// with slope 1.
double sbqc_lipschitz_sup(double tau);

/// Final-layer constant for sBQC heads, built like the regression rule:
/// (1/m) * sbqc_lipschitz_constant(tau) * K_z, floored.
double classification_lipschitz_constant(const LipschitzContext& ctx);

/// clamp(1/K, lr_min, lr_max).
double lalr_lr(double lipschitz, double lr_min, double lr_max);

// ---------------------------------------------------------------------------
// L-BFGS

/// Ring of the most recent (s, y) pairs. Pairs whose curvature s'y does not
/// exceed kMinCurvature are rejected.
class LBFGSMemory {
 public:
  static constexpr double kMinCurvature = 1e-10;

  struct Pair {
    std::vector<double> s;
    std::vector<double> y;
    double sy;
  };

  explicit LBFGSMemory(std::size_t history = 10);

  /// Returns false (and stores nothing) when the curvature condition fails.
  bool push(std::vector<double> s, std::vector<double> y);
  void clear() { pairs_.clear(); }

  std::size_t history() const { return history_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const std::deque<Pair>& pairs() const { return pairs_; }

 private:
  std::size_t history_;
  std::deque<Pair> pairs_;
};

/// Two-loop recursion: approximately -H g. The initial inverse Hessian is
/// gamma * I with gamma = s'y / y'y of the newest pair (1 when empty). Falls
/// back to -g if the result is not a descent direction.
std::vector<double> lbfgs_direction(const LBFGSMemory& mem, std::span<const double> grad);

using Objective = std::function<std::pair<double, std::vector<double>>(std::span<const double>)>;

struct LBFGSOptions {
  double c1 = 1e-4;
  int max_line_search = 25;
};

/// Carries the memory plus the objective value and gradient at the current
/// iterate so consecutive steps do not re-evaluate it.
struct LBFGSState {
  LBFGSMemory memory;
  bool has_eval = false;
  double value = 0.0;
  std::vector<double> grad;

  explicit LBFGSState(std::size_t history = 10) : memory(history) {}
  void invalidate() { has_eval = false; }
};

struct LBFGSStepResult {
  bool accepted = false;
  bool stationary = false;
  double value_before = 0.0;
  double value_after = 0.0;
  double step_size = 0.0;
  int trials = 0;
  bool pair_stored = false;
};

/// One iteration: direction from the memory, backtracking Armijo search
/// (halving from t = 1), memory update. An exhausted search leaves params
/// unchanged, clears the memory and reports accepted = false.
LBFGSStepResult lbfgs_step(const Objective& objective, std::vector<double>& params,
                           LBFGSState& state, const LBFGSOptions& options = {});

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace quantloss
