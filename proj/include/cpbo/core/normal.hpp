#ifndef CPBO_CORE_NORMAL_HPP
#define CPBO_CORE_NORMAL_HPP

#include <cmath>
#include <numbers>

namespace cpbo {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

/// Standard normal density.
inline double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

/// Standard normal CDF; erfc keeps the lower tail accurate.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

namespace detail {

// Phi(z) / phi(z) for very negative z, by the Laplace continued fraction.
inline double lower_tail_ratio(double z) {
  const double x = -z;
  double t = x;
  for (int k = 60; k >= 1; --k) t = x + k / t;
  return 1.0 / t;
}

}  // namespace detail

/// log Phi(z). Below z = -30 erfc underflows, so a continued fraction is used.
inline double log_normal_cdf(double z) {
  if (z > -30.0) return std::log(normal_cdf(z));
  return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(detail::lower_tail_ratio(z));
}

/// Inverse Mills ratio phi(z) / Phi(z), i.e. d/dz log Phi(z).
inline double mills_ratio(double z) {
  if (z > -30.0) return normal_pdf(z) / normal_cdf(z);
  return 1.0 / detail::lower_tail_ratio(z);
}

/// First three derivatives of log Phi at z.
struct LogCdfDerivatives {
  double d1;
  double d2;
  double d3;
};

inline LogCdfDerivatives log_normal_cdf_derivatives(double z) {
  const double r = mills_ratio(z);
  const double zr = z + r;
  return {r, -r * zr, r * zr * zr - r + r * r * zr};
}

}  // namespace cpbo

#endif
