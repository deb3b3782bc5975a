#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace quantloss {

/// Asymmetric hyperbolic secant distribution with quantile marker tau:
///
///   pdf(x) = (2/pi) sech(x) * (tau for x < 0, 1 - tau for x >= 0)
///
/// The density puts mass tau on the negative half-line, so cdf(0) == tau.
class AsymmetricHSD {
 public:
  /// Throws ParameterError unless tau is in (0,1).
  explicit AsymmetricHSD(double tau);

  double tau() const { return tau_; }

  double pdf(double x) const;

  /// Closed form: tau + (4 tau / pi) atan(tanh(x/2)) for x <= 0 and
  /// tau + (4 (1 - tau) / pi) atan(tanh(x/2)) for x > 0. Evaluated through the
  /// equivalent tails (4 tau / pi) atan(e^x) and 1 - (4 (1-tau) / pi) atan(e^-x)
  /// so that both tails keep full relative precision. Accepts +-infinity.
  double cdf(double x) const;

  /// 1 - cdf(x), accurate in the upper tail.
  double survival(double x) const;

  /// Inverse of cdf on (0,1); throws DomainError outside that interval.
  double inv_cdf(double p) const;

  /// Inverse-transform draws using the caller's generator.
  std::vector<double> sample(std::mt19937_64& rng, std::size_t n) const;

  /// Deterministic draws from a generator seeded with `seed`.
  std::vector<double> sample(std::uint64_t seed, std::size_t n) const;

 private:
  double tau_;
};

}  // namespace quantloss
