#include "quantloss/secant_dist.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "quantloss/errors.hpp"

namespace quantloss {

namespace {

constexpr double kPi = std::numbers::pi;

// sech(x) without overflow for large |x|.
double sech(double x) {
  const double e = std::exp(-std::abs(x));
  return 2.0 * e / (1.0 + e * e);
}

}  // namespace

AsymmetricHSD::AsymmetricHSD(double tau) : tau_(tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ParameterError("HSD tau must lie strictly inside (0,1), got " + std::to_string(tau));
  }
}

double AsymmetricHSD::pdf(double x) const {
  if (std::isnan(x)) throw DomainError("pdf evaluated at NaN");
  const double w = x < 0.0 ? tau_ : 1.0 - tau_;
  return 2.0 / kPi * sech(x) * w;
}

// atan(tanh(x/2)) == atan(e^x) - pi/4, which gives the tail forms used below.
double AsymmetricHSD::cdf(double x) const {
  if (std::isnan(x)) throw DomainError("cdf evaluated at NaN");
  if (x == 0.0) return tau_;
  double p;
  if (x < 0.0) {
    p = 4.0 * tau_ / kPi * std::atan(std::exp(x));
  } else {
    p = 1.0 - 4.0 * (1.0 - tau_) / kPi * std::atan(std::exp(-x));
  }
  return std::clamp(p, 0.0, 1.0);
}

double AsymmetricHSD::survival(double x) const {
  if (std::isnan(x)) throw DomainError("survival evaluated at NaN");
  if (x == 0.0) return 1.0 - tau_;
  double q;
  if (x < 0.0) {
    q = 1.0 - 4.0 * tau_ / kPi * std::atan(std::exp(x));
  } else {
    q = 4.0 * (1.0 - tau_) / kPi * std::atan(std::exp(-x));
  }
  return std::clamp(q, 0.0, 1.0);
}

// Branch inverses: p <= tau gives e^x = tan(pi p / (4 tau)); p > tau gives
// e^-x = tan(pi (1-p) / (4 (1-tau))).
double AsymmetricHSD::inv_cdf(double p) const {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("inv_cdf requires p strictly inside (0,1), got " + std::to_string(p));
  }
  if (p == tau_) return 0.0;
  if (p < tau_) return std::log(std::tan(kPi * p / (4.0 * tau_)));
  return -std::log(std::tan(kPi * (1.0 - p) / (4.0 * (1.0 - tau_))));
}

std::vector<double> AsymmetricHSD::sample(std::mt19937_64& rng, std::size_t n) const {
  if (n == 0) throw ParameterError("sample size must be at least 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) {
    double u;
    do {
      u = unif(rng);
    } while (u <= 0.0 || u >= 1.0);
    v = inv_cdf(u);
  }
  return out;
}

std::vector<double> AsymmetricHSD::sample(std::uint64_t seed, std::size_t n) const {
  std::mt19937_64 rng(seed);
  return sample(rng, n);
}

}  // namespace quantloss
