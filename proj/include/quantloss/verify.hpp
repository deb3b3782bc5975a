#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace quantloss {

/// Outcome of one property check. `worst` is the largest observed violation
/// statistic and `bound` the allowed value, so margin = bound - worst.
struct PropertyCheck {
  std::string module;
  std::string name;
  bool passed = false;
  double worst = 0.0;
  double bound = 0.0;
  std::string detail;

  double margin() const { return bound - worst; }
};

/// Relative error used by the finite-difference suites:
/// |a - n| / max(1, |a|, |n|).
double fd_relative_error(double analytic, double numeric);

/// Finite-difference gradient suites (losses, sBQC, backprop), `cases` random
/// draws per target.
std::vector<PropertyCheck> gradcheck_suite(std::uint64_t seed, int cases = 200);

/// Every invariant of the losses, secant_dist, optim and classify modules.
std::vector<PropertyCheck> property_suite(std::uint64_t seed);

/// Fixed-width table of checks with their margins.
std::string format_checks(const std::vector<PropertyCheck>& checks);

}  // namespace quantloss
