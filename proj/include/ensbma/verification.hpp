#ifndef ENSBMA_VERIFICATION_HPP
#define ENSBMA_VERIFICATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ensbma/dataset.hpp"
#include "ensbma/predictive.hpp"
#include "ensbma/types.hpp"

namespace ensbma {

inline double mae(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw EmptyInputError("mae: no pairs");
  double s = 0.0;
  for (const auto& [f, y] : pairs) s += std::abs(f - y);
  return s / double(pairs.size());
}

inline double rmse(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw EmptyInputError("rmse: no pairs");
  double s = 0.0;
  for (const auto& [f, y] : pairs) s += (f - y) * (f - y);
  return std::sqrt(s / double(pairs.size()));
}

/// CRPS of the raw ensemble, i.e. of its empirical step CDF:
///   (1/m) sum_i |x_i - y| - (1/(2 m^2)) sum_ij |x_i - x_j|.
inline double crps_empirical(const std::vector<double>& ensemble, double y) {
  if (ensemble.empty()) throw EmptyInputError("crps_empirical: empty ensemble");
  const double m = double(ensemble.size());
  double first = 0.0;
  for (double x : ensemble) first += std::abs(x - y);
  double second = 0.0;
  for (std::size_t i = 0; i < ensemble.size(); ++i)
    for (std::size_t j = i + 1; j < ensemble.size(); ++j)
      second += 2.0 * std::abs(ensemble[i] - ensemble[j]);
  return first / m - second / (2.0 * m * m);
}

/// Rank of the observation among the ensemble members, 1..m+1. Ties are
/// broken uniformly at random with the caller's seeded generator so that
/// repeated ties do not bias the histogram.
inline int rank_of_observation(const std::vector<double>& ensemble, double y,
                               std::mt19937_64& rng) {
  if (ensemble.empty()) throw EmptyInputError("rank_of_observation: empty ensemble");
  int below = 0, tied = 0;
  for (double x : ensemble) {
    if (x < y) ++below;
    else if (x == y) ++tied;
  }
  int offset = 0;
  if (tied > 0) offset = int(std::uniform_int_distribution<int>(0, tied)(rng));
  return 1 + below + offset;
}

/// Fraction of cases whose observation lies within the ensemble range
/// (min member <= y <= max member). Cases without observation or members are
/// skipped; NaN when nothing is countable.
inline double containment_fraction(const std::vector<ForecastCase>& cases) {
  long n = 0, inside = 0;
  for (const auto& c : cases) {
    if (!c.observation.has_value() || c.empty()) continue;
    const auto values = c.present_values();
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    ++n;
    if (*lo <= *c.observation && *c.observation <= *hi) ++inside;
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return double(inside) / double(n);
}

inline double containment_fraction(const Dataset& data) {
  std::vector<ForecastCase> cases;
  cases.reserve(data.size());
  for (const auto& [k, c] : data.cases()) cases.push_back(c);
  return containment_fraction(cases);
}

/// Probability integral transform: the predictive CDF at the observation.
inline double pit(const PredictiveDistribution& d, double y) { return d.cdf(y); }

/// Kolmogorov tail probability Q(lambda) = 2 sum_{k>=1} (-1)^{k-1}
/// exp(-2 k^2 lambda^2), truncated once terms fall below 1e-12.
inline double kolmogorov_q(double lambda) {
  if (lambda <= 1e-8) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1;; ++k) {
    const double term = std::exp(-2.0 * double(k) * double(k) * lambda * lambda);
    sum += sign * term;
    if (term < 1e-12) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic;  // D_n
  double p_value;    // asymptotic Q(sqrt(n) D_n)
};

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1).
inline KsResult ks_uniform_test(const std::vector<double>& values) {
  if (values.empty()) throw EmptyInputError("ks_uniform_test: no values");
  std::vector<double> u(values);
  for (double v : u)
    if (!(v >= 0.0 && v <= 1.0))
      throw ValueError("ks_uniform_test: value outside [0, 1]");
  std::sort(u.begin(), u.end());
  const double n = double(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double fi = double(i);
    d = std::max(d, std::max((fi + 1.0) / n - u[i], u[i] - fi / n));
  }
  return {d, kolmogorov_q(std::sqrt(n) * d)};
}

/// Sample quantile by linear interpolation of order statistics
/// (Hyndman & Fan definition 7): h = (n-1)p + 1,
/// q = x_(floor(h)) + (h - floor(h)) (x_(floor(h)+1) - x_(floor(h))).
inline double hf7_quantile(std::vector<double> sample, double p) {
  if (sample.empty()) throw EmptyInputError("hf7_quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0))
    throw ValueError("hf7_quantile: p outside [0, 1]");
  std::sort(sample.begin(), sample.end());
  const std::size_t n = sample.size();
  const double h = double(n - 1) * p;  // 0-based position
  const std::size_t lo = std::min(std::size_t(h), n - 1);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - double(lo);
  return sample[lo] + frac * (sample[hi] - sample[lo]);
}

/// Same, for a sample the caller has already sorted.
inline double hf7_quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw EmptyInputError("hf7_quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0))
    throw ValueError("hf7_quantile: p outside [0, 1]");
  const std::size_t n = sorted.size();
  const double h = double(n - 1) * p;
  const std::size_t lo = std::min(std::size_t(h), n - 1);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - double(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct IntervalStats {
  double coverage;
  double avg_width;  // Kelvin
};

struct IntervalCase {
  double lo;
  double hi;
  double y;
};

/// Coverage and mean width of central prediction intervals.
inline IntervalStats central_interval_stats(const std::vector<IntervalCase>& cases) {
  if (cases.empty()) throw EmptyInputError("central_interval_stats: no intervals");
  long covered = 0;
  double width = 0.0;
  for (const auto& c : cases) {
    if (c.hi < c.lo)
      throw IntervalError("central_interval_stats: interval with hi < lo");
    if (c.lo <= c.y && c.y <= c.hi) ++covered;
    width += c.hi - c.lo;
  }
  return {double(covered) / double(cases.size()), width / double(cases.size())};
}

namespace detail {

/// Regularized upper incomplete gamma Q(a, x): series expansion of P for
/// x < a + 1, Lentz continued fraction for Q otherwise.
inline double regularized_gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw ValueError("regularized_gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    const double p = sum * std::exp(-x + a * std::log(x) - lg);
    return std::clamp(1.0 - p, 0.0, 1.0);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -double(i) * (double(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  const double q = std::exp(-x + a * std::log(x) - lg) * h;
  return std::clamp(q, 0.0, 1.0);
}

}  // namespace detail

struct ChiSquareResult {
  double statistic;
  double p_value;
};

/// Pearson chi-square test of the bin counts against a uniform histogram.
inline ChiSquareResult chi_square_uniform_test(const std::vector<long long>& counts) {
  if (counts.size() < 2) throw EmptyInputError("chi_square_uniform_test: need >= 2 bins");
  long long total = 0;
  for (long long c : counts) total += c;
  if (total == 0) throw EmptyInputError("chi_square_uniform_test: empty histogram");
  const double expected = double(total) / double(counts.size());
  double stat = 0.0;
  for (long long c : counts) {
    const double d = double(c) - expected;
    stat += d * d / expected;
  }
  const double dof = double(counts.size() - 1);
  return {stat, detail::regularized_gamma_q(0.5 * dof, 0.5 * stat)};
}

/// Aggregated scores for one forecast system over an evaluation run. The
/// calibrated side stores PIT values (with the KS p-value), the raw side the
/// verification rank histogram; rank_counts has m+1 bins for an m-member
/// ensemble (ranks of cases with missing members occupy the low bins).
struct VerificationReport {
  std::string label;
  long long n_cases = 0;
  double mean_crps = 0.0;
  double mae_median = 0.0;
  double mae_mean = 0.0;
  double rmse_median = 0.0;
  double rmse_mean = 0.0;
  double coverage = 0.0;
  double avg_width = 0.0;
  std::vector<double> pit_values;
  std::vector<long long> rank_counts;
  std::optional<double> ks_p;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["label"] = label;
    j["n_cases"] = n_cases;
    j["mean_crps"] = mean_crps;
    j["mae_median"] = mae_median;
    j["mae_mean"] = mae_mean;
    j["rmse_median"] = rmse_median;
    j["rmse_mean"] = rmse_mean;
    j["coverage"] = coverage;
    j["avg_width"] = avg_width;
    if (ks_p) j["ks_p"] = *ks_p;
    if (!rank_counts.empty()) j["rank_counts"] = rank_counts;
    if (!pit_values.empty()) j["pit_values"] = pit_values;
    return j;
  }

  static std::string csv_header() {
    return "label,n_cases,mean_crps,mae_median,mae_mean,rmse_median,rmse_mean,"
           "coverage,avg_width,ks_p";
  }

  std::string csv_row() const {
    std::string row = label;
    auto add = [&row](double v) {
      row += ',';
      row += detail::format_double(v);
    };
    row += ',' + std::to_string(n_cases);
    add(mean_crps);
    add(mae_median);
    add(mae_mean);
    add(rmse_median);
    add(rmse_mean);
    add(coverage);
    add(avg_width);
    row += ',';
    if (ks_p) row += detail::format_double(*ks_p);
    return row;
  }
};

}  // namespace ensbma

#endif  // ENSBMA_VERIFICATION_HPP
