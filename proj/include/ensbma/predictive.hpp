#ifndef ENSBMA_PREDICTIVE_HPP
#define ENSBMA_PREDICTIVE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "ensbma/estimation.hpp"
#include "ensbma/normal.hpp"
#include "ensbma/types.hpp"

namespace ensbma {

struct MixtureComponent {
  double weight;
  double mean;      // Kelvin
  double variance;  // Kelvin^2
};

enum class EventSide { Below, Above };

/// Gaussian-mixture predictive distribution for one forecast case. Immutable;
/// all operations are pure.
class PredictiveDistribution {
public:
  explicit PredictiveDistribution(std::vector<MixtureComponent> components,
                                  Date date = {}, std::string station = {})
      : components_(std::move(components)),
        date_(date),
        station_(std::move(station)) {
    if (components_.empty())
      throw EmptyInputError("PredictiveDistribution: no components");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.weight >= 0.0))
        throw Error("PredictiveDistribution: negative weight");
      if (!(c.variance > 0.0))
        throw Error("PredictiveDistribution: variance must be positive");
      total += c.weight;
    }
    if (!(total > 0.0))
      throw Error("PredictiveDistribution: weights sum to zero");
    for (auto& c : components_) c.weight /= total;
  }

  const std::vector<MixtureComponent>& components() const { return components_; }
  Date date() const { return date_; }
  const std::string& station() const { return station_; }

  double pdf(double x) const {
    double d = 0.0;
    for (const auto& c : components_)
      d += c.weight * norm_pdf(x, c.mean, std::sqrt(c.variance));
    return d;
  }

  double cdf(double x) const {
    double p = 0.0;
    for (const auto& c : components_)
      p += c.weight * norm_cdf(x, c.mean, std::sqrt(c.variance));
    // the weighted sum can overshoot 1 by an ulp
    return std::clamp(p, 0.0, 1.0);
  }

  double mean() const {
    double m = 0.0;
    for (const auto& c : components_) m += c.weight * c.mean;
    return m;
  }

  double median() const { return quantile(0.5); }

  /// Inverse CDF by bracketed bisection, to |cdf(x) - p| < 1e-9. Bisection is
  /// chosen over Newton for guaranteed convergence on mixture CDFs. The
  /// initial bracket spans all component means plus 12 max standard
  /// deviations; it is doubled up to 4 times before giving up.
  double quantile(double p) const {
    if (!(p > 0.0 && p < 1.0))
      throw ValueError("quantile: p must lie in (0, 1)");
    double sigma_max = 0.0, mu_lo = components_[0].mean, mu_hi = mu_lo;
    for (const auto& c : components_) {
      sigma_max = std::max(sigma_max, std::sqrt(c.variance));
      mu_lo = std::min(mu_lo, c.mean);
      mu_hi = std::max(mu_hi, c.mean);
    }
    double lo = mu_lo - 12.0 * sigma_max;
    double hi = mu_hi + 12.0 * sigma_max;
    int widenings = 0;
    while (cdf(lo) > p || cdf(hi) < p) {
      if (widenings++ == 4)
        throw BracketError("quantile: failed to bracket p after widening");
      const double c = 0.5 * (lo + hi), h = hi - lo;
      lo = c - h;
      hi = c + h;
    }
    constexpr double tol = 1e-9;
    while (true) {
      const double mid = 0.5 * (lo + hi);
      const double f = cdf(mid);
      if (std::abs(f - p) < tol || mid <= lo || mid >= hi) return mid;
      (f < p ? lo : hi) = mid;
    }
  }

  /// Continuous ranked probability score against observation y, in Kelvin.
  /// Uses the closed form for normal mixtures:
  ///   sum_i w_i A(y - mu_i, s_i^2) - 1/2 sum_ij w_i w_j A(mu_i - mu_j,
  ///   s_i^2 + s_j^2),  A(m, s^2) = m (2 Phi(m/s) - 1) + 2 s phi(m/s),
  /// where A(m, s^2) is E|X| for X ~ N(m, s^2).
  double crps(double y) const {
    double first = 0.0;
    for (const auto& c : components_)
      first += c.weight * expected_abs(y - c.mean, c.variance);
    double second = 0.0;
    for (std::size_t i = 0; i < components_.size(); ++i) {
      const auto& ci = components_[i];
      second += ci.weight * ci.weight * expected_abs(0.0, 2.0 * ci.variance);
      for (std::size_t j = i + 1; j < components_.size(); ++j) {
        const auto& cj = components_[j];
        second += 2.0 * ci.weight * cj.weight *
                  expected_abs(ci.mean - cj.mean, ci.variance + cj.variance);
      }
    }
    return first - 0.5 * second;
  }

  double event_probability(double threshold, EventSide side) const {
    const double below = cdf(threshold);
    return side == EventSide::Below ? below : 1.0 - below;
  }

private:
  static double expected_abs(double m, double s2) {
    const double s = std::sqrt(s2);
    const double z = m / s;
    return m * (2.0 * norm_cdf(z) - 1.0) + 2.0 * s * norm_pdf(z);
  }

  std::vector<MixtureComponent> components_;
  Date date_;
  std::string station_;
};

/// One mixture component per present member: the group's bias-corrected mean
/// with the fitted variance, weights renormalized over the present members.
inline PredictiveDistribution make_predictive(const BmaParameters& params,
                                              const ForecastCase& c) {
  if (c.empty())
    throw EmptyInputError("make_predictive: case has no forecast values");
  std::vector<MixtureComponent> components;
  components.reserve(size_t(c.present_members()));
  for (const auto& gm : group_members(c, params.scheme)) {
    const auto& b = params.bias[size_t(gm.group)];
    components.push_back({params.member_weight[size_t(gm.group)],
                          b.intercept + b.slope * gm.value,
                          params.variance_of_group(size_t(gm.group))});
  }
  return PredictiveDistribution(std::move(components), c.date, c.station_id);
}

inline nlohmann::ordered_json to_json(const PredictiveDistribution& d) {
  nlohmann::ordered_json j;
  if (!d.station().empty()) {
    j["date"] = d.date().to_string();
    j["station"] = d.station();
  }
  auto comps = nlohmann::ordered_json::array();
  for (const auto& c : d.components())
    comps.push_back({{"weight", c.weight},
                     {"mean", c.mean},
                     {"variance", c.variance}});
  j["components"] = std::move(comps);
  return j;
}

}  // namespace ensbma

#endif  // ENSBMA_PREDICTIVE_HPP
