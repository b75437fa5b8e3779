#ifndef ENSBMA_NORMAL_HPP
#define ENSBMA_NORMAL_HPP

#include <cmath>

namespace ensbma {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;  // 1/sqrt(2*pi)
inline constexpr double kInvSqrt2 = 0.70710678118654752440;    // 1/sqrt(2)
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))

/// Standard normal density.
inline double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

/// Standard normal CDF as Phi(z) = erfc(-z/sqrt(2))/2. std::erfc is accurate
/// to a few ulp over its full range and does not cancel in either tail, so the
/// absolute error stays well below 1e-12.
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

inline double norm_pdf(double x, double mu, double sigma) {
  return norm_pdf((x - mu) / sigma) / sigma;
}

inline double norm_cdf(double x, double mu, double sigma) {
  return norm_cdf((x - mu) / sigma);
}

/// log N(x; mu, sigma2)
inline double norm_logpdf(double x, double mu, double sigma2) {
  const double d = x - mu;
  return -0.5 * d * d / sigma2 - 0.5 * std::log(sigma2) - kLogSqrt2Pi;
}

}  // namespace ensbma

#endif  // ENSBMA_NORMAL_HPP
