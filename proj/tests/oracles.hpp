// Test-only oracles, deliberately independent of the library's own code
// paths: long-double direct evaluation for densities and CDFs, adaptive
// Simpson quadrature, a normal-equations least-squares solver and an
// alternative Kolmogorov series summation.
#ifndef ENSBMA_TESTS_ORACLES_HPP
#define ENSBMA_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "ensbma/predictive.hpp"

namespace oracles {

// ---------------------------------------------------------------------------
// Adaptive Simpson quadrature

namespace detail {

template <class F>
double simpson_rec(const F& f, double a, double b, double fa, double fm,
                   double fb, double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * eps)
    return left + right + delta / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
}

}  // namespace detail

template <class F>
double integrate(const F& f, double a, double b, double eps = 1e-10,
                 int depth = 48) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson_rec(f, a, b, fa, fm, fb, whole, eps, depth);
}

// ---------------------------------------------------------------------------
// Normal mixtures evaluated directly in long double

inline double mix_pdf(const std::vector<ensbma::MixtureComponent>& comps,
                      double x) {
  long double acc = 0.0L;
  for (const auto& c : comps) {
    const long double s2 = c.variance;
    const long double d = (long double)x - (long double)c.mean;
    acc += (long double)c.weight * expl(-0.5L * d * d / s2) /
           sqrtl(2.0L * 3.141592653589793238462643L * s2);
  }
  return double(acc);
}

inline double mix_cdf(const std::vector<ensbma::MixtureComponent>& comps,
                      double x) {
  long double acc = 0.0L;
  for (const auto& c : comps) {
    const long double z =
        ((long double)x - (long double)c.mean) / sqrtl(2.0L * (long double)c.variance);
    acc += (long double)c.weight * 0.5L * erfcl(-z);
  }
  return double(acc);
}

/// The CRPS definition integrated numerically: int (F(t) - 1{t >= y})^2 dt,
/// split at the kink t = y.
inline double crps_integral(const std::vector<ensbma::MixtureComponent>& comps,
                            double y, double eps = 1e-9) {
  double mu_lo = comps[0].mean, mu_hi = comps[0].mean, s_max = 0.0;
  for (const auto& c : comps) {
    mu_lo = std::min(mu_lo, c.mean);
    mu_hi = std::max(mu_hi, c.mean);
    s_max = std::max(s_max, std::sqrt(c.variance));
  }
  const double lo = std::min(mu_lo, y) - 14.0 * s_max;
  const double hi = std::max(mu_hi, y) + 14.0 * s_max;
  const auto left = [&](double t) {
    const double f = mix_cdf(comps, t);
    return f * f;
  };
  const auto right = [&](double t) {
    const double f = 1.0 - mix_cdf(comps, t);
    return f * f;
  };
  return integrate(left, lo, y, eps) + integrate(right, y, hi, eps);
}

/// Exact CRPS of an empirical step CDF: the integrand is piecewise constant
/// between the breakpoints, so the integral is a finite sum.
inline double crps_step_integral(std::vector<double> ensemble, double y) {
  std::vector<double> breaks = ensemble;
  breaks.push_back(y);
  std::sort(breaks.begin(), breaks.end());
  std::sort(ensemble.begin(), ensemble.end());
  const double m = double(ensemble.size());
  long double acc = 0.0L;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double a = breaks[i], b = breaks[i + 1];
    if (a == b) continue;
    const double mid = 0.5 * (a + b);
    const double f =
        double(std::upper_bound(ensemble.begin(), ensemble.end(), mid) -
               ensemble.begin()) / m;
    const double ind = mid >= y ? 1.0 : 0.0;
    acc += (long double)((f - ind) * (f - ind)) * (long double)(b - a);
  }
  return double(acc);
}

// ---------------------------------------------------------------------------
// Least squares by normal equations in long double

struct LsqFit {
  double intercept;
  double slope;
};

inline LsqFit least_squares(const std::vector<std::pair<double, double>>& pairs) {
  long double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : pairs) {
    n += 1;
    sx += x;
    sy += y;
    sxx += (long double)x * x;
    sxy += (long double)x * y;
  }
  const long double det = n * sxx - sx * sx;
  const long double slope = (n * sxy - sx * sy) / det;
  const long double intercept = (sy - slope * sx) / n;
  return {double(intercept), double(slope)};
}

// ---------------------------------------------------------------------------
// Kolmogorov tail series, summed independently in long double with a harder
// truncation rule than the implementation uses.

inline double kolmogorov_series(double lambda) {
  long double sum = 0.0L;
  long double sign = 1.0L;
  for (int k = 1; k <= 100000; ++k) {
    const long double term =
        expl(-2.0L * (long double)k * (long double)k * (long double)(lambda * lambda));
    sum += sign * term;
    if (term < 1e-18L && k > 8) break;
    sign = -sign;
  }
  const double q = double(2.0L * sum);
  return std::min(1.0, std::max(0.0, q));
}

// ---------------------------------------------------------------------------
// Random-instance helpers

inline std::vector<ensbma::MixtureComponent> random_mixture(
    std::mt19937_64& rng, int max_components = 11, double mu_lo = 260.0,
    double mu_hi = 290.0, double sigma_lo = 0.5, double sigma_hi = 5.0) {
  std::uniform_int_distribution<int> n_dist(1, max_components);
  std::uniform_real_distribution<double> mu_dist(mu_lo, mu_hi);
  std::uniform_real_distribution<double> sigma_dist(sigma_lo, sigma_hi);
  std::uniform_real_distribution<double> w_dist(0.05, 1.0);
  const int n = n_dist(rng);
  std::vector<ensbma::MixtureComponent> comps;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = w_dist(rng);
    const double s = sigma_dist(rng);
    comps.push_back({w, mu_dist(rng), s * s});
    total += w;
  }
  for (auto& c : comps) c.weight /= total;
  return comps;
}

inline double sample_mixture(const std::vector<ensbma::MixtureComponent>& comps,
                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  double cum = 0.0;
  std::size_t pick = comps.size() - 1;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    cum += comps[i].weight;
    if (u < cum) {
      pick = i;
      break;
    }
  }
  std::normal_distribution<double> n(comps[pick].mean,
                                     std::sqrt(comps[pick].variance));
  return n(rng);
}

}  // namespace oracles

#endif  // ENSBMA_TESTS_ORACLES_HPP
