#ifndef ENSBMA_ESTIMATION_HPP
#define ENSBMA_ESTIMATION_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ensbma/dataset.hpp"
#include "ensbma/normal.hpp"
#include "ensbma/types.hpp"

namespace ensbma {

struct EmControl {
  double tol = 1e-6;           // relative log-likelihood change
  int max_iter = 1000;
  double sigma2_floor = 1e-6;  // K^2
  bool per_group_variance = false;
};

struct BiasCoefficients {
  double intercept = 0.0;
  double slope = 1.0;
};

struct FitFlags {
  bool degenerate_regression = false;
  bool variance_collapse = false;
  bool non_convergence = false;
  bool likelihood_floored = false;

  bool any() const {
    return degenerate_regression || variance_collapse || non_convergence ||
           likelihood_floored;
  }
};

struct FitMeta {
  int iterations = 0;
  double log_likelihood = std::numeric_limits<double>::quiet_NaN();
  int training_cases = 0;
  /// Log-likelihood evaluated at the initial parameters and after every
  /// M-step, in order. Non-decreasing up to floating-point slack.
  std::vector<double> likelihood_trace;
};

/// Forecast/observation pairs from the n calendar days preceding a forecast
/// day. Only cases with a verifying observation and at least one member are
/// usable; others are dropped on construction.
class TrainingSet {
public:
  TrainingSet() = default;

  explicit TrainingSet(std::vector<ForecastCase> cases) {
    cases_.reserve(cases.size());
    for (auto& c : cases)
      if (c.observation.has_value() && !c.empty()) cases_.push_back(std::move(c));
  }

  static TrainingSet from_window(const Dataset& data, Date forecast_day,
                                 int window_days) {
    std::vector<ForecastCase> cases;
    for (int back = window_days; back >= 1; --back)
      for (const ForecastCase* c : data.cases_on(forecast_day - back))
        cases.push_back(*c);
    return TrainingSet(std::move(cases));
  }

  const std::vector<ForecastCase>& cases() const { return cases_; }
  bool empty() const { return cases_.empty(); }

  /// Total number of (member, case) pairs.
  int member_pairs() const {
    int n = 0;
    for (const auto& c : cases_) n += c.present_members();
    return n;
  }

private:
  std::vector<ForecastCase> cases_;
};

/// Fitted model for one forecast day: per-group bias coefficients, per-group
/// member weights and the common variance of the normal mixture.
struct BmaParameters {
  GroupScheme scheme = GroupScheme::two_group();
  BiasMode bias_mode = BiasMode::None;
  std::vector<BiasCoefficients> bias;  // one per group
  /// Weight of each individual member of group g; group totals are
  /// member_weight[g] * group size and sum to 1 over all groups.
  std::vector<double> member_weight;
  double sigma2 = 1.0;
  /// Per-group variances when the equal-variance constraint is lifted.
  std::optional<std::vector<double>> group_sigma2;
  FitMeta fit_meta;
  FitFlags flags;

  double weight_of_slot(int slot) const {
    return member_weight[size_t(scheme.group_of_slot(slot))];
  }
  double group_total_weight(std::size_t g) const {
    return member_weight[g] * double(scheme.group_size(g));
  }
  double variance_of_group(std::size_t g) const {
    return group_sigma2 ? (*group_sigma2)[g] : sigma2;
  }
  double component_mean(int slot, double forecast) const {
    const auto& b = bias[size_t(scheme.group_of_slot(slot))];
    return b.intercept + b.slope * forecast;
  }

  void validate() const {
    const std::size_t k = scheme.group_count();
    if (bias.size() != k || member_weight.size() != k)
      throw Error("BmaParameters: group count mismatch");
    double total = 0.0;
    for (std::size_t g = 0; g < k; ++g) {
      if (!(member_weight[g] >= 0.0))
        throw Error("BmaParameters: negative weight");
      total += group_total_weight(g);
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw Error("BmaParameters: weights do not sum to 1");
    if (!(sigma2 > 0.0)) throw Error("BmaParameters: sigma2 must be positive");
    if (group_sigma2) {
      if (group_sigma2->size() != k)
        throw Error("BmaParameters: group variance count mismatch");
      for (double v : *group_sigma2)
        if (!(v > 0.0)) throw Error("BmaParameters: group variance must be positive");
    }
    for (const auto& b : bias) {
      if (bias_mode != BiasMode::Linear && b.slope != 1.0)
        throw Error("BmaParameters: slope must be 1 without linear bias correction");
      if (bias_mode == BiasMode::None && b.intercept != 0.0)
        throw Error("BmaParameters: intercept must be 0 without bias correction");
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["scheme"] = scheme_variant_name(scheme.variant());
    j["bias_mode"] = bias_mode_name(bias_mode);
    auto groups = nlohmann::ordered_json::array();
    for (std::size_t g = 0; g < scheme.group_count(); ++g) {
      nlohmann::ordered_json jg;
      jg["id"] = scheme.groups()[g].id;
      jg["intercept"] = bias[g].intercept;
      jg["slope"] = bias[g].slope;
      jg["member_weight"] = member_weight[g];
      if (group_sigma2) jg["sigma2"] = (*group_sigma2)[g];
      groups.push_back(std::move(jg));
    }
    j["groups"] = std::move(groups);
    auto weights = nlohmann::ordered_json::object();
    for (int s = 0; s < kEnsembleMembers; ++s)
      weights[slot_name(s)] = weight_of_slot(s);
    j["weights"] = std::move(weights);
    j["sigma2"] = sigma2;
    j["fit"] = {{"iterations", fit_meta.iterations},
                {"log_likelihood", fit_meta.log_likelihood},
                {"training_cases", fit_meta.training_cases},
                {"flags",
                 {{"degenerate_regression", flags.degenerate_regression},
                  {"variance_collapse", flags.variance_collapse},
                  {"non_convergence", flags.non_convergence},
                  {"likelihood_floored", flags.likelihood_floored}}}};
    return j;
  }

  static BmaParameters from_json(const nlohmann::json& j) {
    BmaParameters p;
    const auto variant = parse_scheme_variant(j.at("scheme").get<std::string>());
    const auto mode = parse_bias_mode(j.at("bias_mode").get<std::string>());
    if (!variant || !mode) throw DataError("BmaParameters: bad scheme or bias mode");
    p.scheme = GroupScheme::make(*variant);
    p.bias_mode = *mode;
    const auto& groups = j.at("groups");
    if (groups.size() != p.scheme.group_count())
      throw DataError("BmaParameters: group count mismatch");
    for (const auto& jg : groups) {
      p.bias.push_back({jg.at("intercept").get<double>(), jg.at("slope").get<double>()});
      p.member_weight.push_back(jg.at("member_weight").get<double>());
      if (jg.contains("sigma2")) {
        if (!p.group_sigma2) p.group_sigma2.emplace();
        p.group_sigma2->push_back(jg.at("sigma2").get<double>());
      }
    }
    p.sigma2 = j.at("sigma2").get<double>();
    p.validate();
    return p;
  }
};

namespace detail {

struct PreparedMember {
  int group;
  double mean;  // bias-corrected component mean
};

struct PreparedCase {
  double y;
  std::vector<PreparedMember> members;
};

inline std::vector<PreparedCase> prepare_cases(
    const TrainingSet& train, const GroupScheme& scheme,
    const std::vector<BiasCoefficients>& bias) {
  std::vector<PreparedCase> out;
  out.reserve(train.cases().size());
  for (const auto& c : train.cases()) {
    PreparedCase pc;
    pc.y = *c.observation;
    pc.members.reserve(size_t(c.present_members()));
    for (const auto& gm : group_members(c, scheme)) {
      const auto& b = bias[size_t(gm.group)];
      pc.members.push_back({gm.group, b.intercept + b.slope * gm.value});
    }
    out.push_back(std::move(pc));
  }
  return out;
}

/// Mixture log-density of one case: log sum over present members of
/// w_g * N(y; mu_m, sigma_g^2), evaluated in log space. Returns -inf when
/// every present member has zero weight.
inline double case_log_density(const PreparedCase& pc,
                               const std::vector<double>& log_weight,
                               const std::vector<double>& sigma2_of_group,
                               std::vector<double>& scratch) {
  scratch.clear();
  double max_lw = -std::numeric_limits<double>::infinity();
  for (const auto& m : pc.members) {
    const double lw =
        log_weight[size_t(m.group)] +
        norm_logpdf(pc.y, m.mean, sigma2_of_group[size_t(m.group)]);
    scratch.push_back(lw);
    max_lw = std::max(max_lw, lw);
  }
  if (!std::isfinite(max_lw)) return -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (double lw : scratch) sum += std::exp(lw - max_lw);
  return max_lw + std::log(sum);
}

inline const double kLogDensityFloor =
    std::log(std::numeric_limits<double>::min());

}  // namespace detail

/// Group-wise bias coefficients from the training window. Linear mode is
/// ordinary least squares of observation on forecast over all pooled
/// (member, case) pairs of the group; a group whose forecasts are constant
/// falls back to additive correction and raises the degenerate flag.
inline std::vector<BiasCoefficients> fit_bias(const TrainingSet& train,
                                              const GroupScheme& scheme,
                                              BiasMode mode,
                                              FitFlags* flags = nullptr) {
  const std::size_t k = scheme.group_count();
  std::vector<BiasCoefficients> out(k);
  if (mode == BiasMode::None) return out;

  std::vector<std::vector<std::pair<double, double>>> pairs(k);  // (f, y)
  for (const auto& c : train.cases())
    for (const auto& gm : group_members(c, scheme))
      pairs[size_t(gm.group)].push_back({gm.value, *c.observation});

  auto mark_degenerate = [&] {
    if (flags) flags->degenerate_regression = true;
  };

  for (std::size_t g = 0; g < k; ++g) {
    const auto& p = pairs[g];
    const double n = double(p.size());
    if (p.empty()) {  // group absent from the entire window: identity
      mark_degenerate();
      continue;
    }
    double f_mean = 0.0, y_mean = 0.0;
    for (const auto& [f, y] : p) {
      f_mean += f;
      y_mean += y;
    }
    f_mean /= n;
    y_mean /= n;

    if (mode == BiasMode::Additive) {
      out[g] = {y_mean - f_mean, 1.0};
      continue;
    }

    double sxx = 0.0, sxy = 0.0;
    for (const auto& [f, y] : p) {
      sxx += (f - f_mean) * (f - f_mean);
      sxy += (f - f_mean) * (y - y_mean);
    }
    if (p.size() < 2 || sxx <= n * 1e-9) {
      // constant forecasts: slope is unidentifiable, keep the day usable
      mark_degenerate();
      out[g] = {y_mean - f_mean, 1.0};
      continue;
    }
    const double slope = sxy / sxx;
    out[g] = {y_mean - slope * f_mean, slope};
  }
  return out;
}

/// Mixture log-likelihood of the training set under `params`:
/// sum over cases of log(sum over present members of w_g N(y; mu, sigma_g^2)).
/// Cases whose mixture density underflows contribute the log of the smallest
/// positive normal double instead of -inf; `floored` reports that this
/// happened.
inline double log_likelihood(const BmaParameters& params,
                             const TrainingSet& train,
                             bool* floored = nullptr) {
  const auto prepared = detail::prepare_cases(train, params.scheme, params.bias);
  const std::size_t k = params.scheme.group_count();
  std::vector<double> log_w(k), s2(k);
  for (std::size_t g = 0; g < k; ++g) {
    log_w[g] = std::log(params.member_weight[g]);
    s2[g] = params.variance_of_group(g);
  }
  double ll = 0.0;
  std::vector<double> scratch;
  for (const auto& pc : prepared) {
    double ld = detail::case_log_density(pc, log_w, s2, scratch);
    if (!std::isfinite(ld)) {
      ld = detail::kLogDensityFloor;
      if (floored) *floored = true;
    }
    ll += ld;
  }
  return ll;
}

/// Maximum-likelihood weights and variance by EM, with bias coefficients fixed
/// by regression beforehand. Both steps are closed-form: the E-step computes
/// member responsibilities z under the current parameters, the M-step sets
/// each group weight to its responsibility share (divided by group size for
/// the per-member weight) and the variance to the responsibility-weighted mean
/// squared residual. Iterates until the relative log-likelihood change drops
/// below ctrl.tol or ctrl.max_iter M-steps were applied.
inline BmaParameters fit_bma(const TrainingSet& train, const GroupScheme& scheme,
                             BiasMode mode, const EmControl& ctrl = {}) {
  if (train.empty()) throw EmptyInputError("fit_bma: empty training set");

  BmaParameters params;
  params.scheme = scheme;
  params.bias_mode = mode;
  params.bias = fit_bias(train, scheme, mode, &params.flags);

  const auto prepared = detail::prepare_cases(train, scheme, params.bias);
  const std::size_t k = scheme.group_count();
  const std::size_t n_cases = prepared.size();

  // Symmetric deterministic start: uniform per-member weights and the pooled
  // mean squared residual after bias correction.
  params.member_weight.assign(k, 1.0 / double(kEnsembleMembers));
  double ssr = 0.0;
  std::size_t n_pairs = 0;
  for (const auto& pc : prepared)
    for (const auto& m : pc.members) {
      ssr += (pc.y - m.mean) * (pc.y - m.mean);
      ++n_pairs;
    }
  double sigma2 = std::max(ssr / double(n_pairs), ctrl.sigma2_floor);
  std::vector<double> group_s2(k, sigma2);

  std::vector<double> log_w(k), s2_of_group(k);
  std::vector<double> acc_z(k), acc_sq(k);
  std::vector<double> scratch;
  auto& trace = params.fit_meta.likelihood_trace;
  double ll_prev = -std::numeric_limits<double>::infinity();
  int m_steps = 0;

  for (int iter = 0;; ++iter) {
    for (std::size_t g = 0; g < k; ++g) {
      log_w[g] = std::log(params.member_weight[g]);
      s2_of_group[g] = ctrl.per_group_variance ? group_s2[g] : sigma2;
    }

    // E-step: per-case responsibilities, accumulated per group, plus the
    // log-likelihood of the current parameters.
    std::fill(acc_z.begin(), acc_z.end(), 0.0);
    std::fill(acc_sq.begin(), acc_sq.end(), 0.0);
    double ll = 0.0;
    double z_total = 0.0;
    for (const auto& pc : prepared) {
      const double ld = detail::case_log_density(pc, log_w, s2_of_group, scratch);
      if (!std::isfinite(ld)) {
        ll += detail::kLogDensityFloor;
        params.flags.likelihood_floored = true;
        continue;  // responsibilities are undefined for this case
      }
      ll += ld;
      for (std::size_t i = 0; i < pc.members.size(); ++i) {
        const auto& m = pc.members[i];
        const double z = std::exp(scratch[i] - ld);
        acc_z[size_t(m.group)] += z;
        acc_sq[size_t(m.group)] += z * (pc.y - m.mean) * (pc.y - m.mean);
        z_total += z;
      }
    }
    trace.push_back(ll);

    if (iter > 0 && std::abs(ll - ll_prev) <= ctrl.tol * std::max(1.0, std::abs(ll))) {
      break;
    }
    if (iter == ctrl.max_iter || z_total <= 0.0) {
      params.flags.non_convergence = true;
      break;
    }
    ll_prev = ll;

    // M-step: group weights from responsibility shares, variance from the
    // responsibility-weighted mean squared residual.
    for (std::size_t g = 0; g < k; ++g)
      params.member_weight[g] = acc_z[g] / (z_total * double(scheme.group_size(g)));
    if (ctrl.per_group_variance) {
      for (std::size_t g = 0; g < k; ++g) {
        if (acc_z[g] > 0.0) group_s2[g] = acc_sq[g] / acc_z[g];
        if (group_s2[g] < ctrl.sigma2_floor) {
          group_s2[g] = ctrl.sigma2_floor;
          params.flags.variance_collapse = true;
        }
      }
    } else {
      double sq = 0.0;
      for (std::size_t g = 0; g < k; ++g) sq += acc_sq[g];
      sigma2 = sq / z_total;
      if (sigma2 < ctrl.sigma2_floor) {
        sigma2 = ctrl.sigma2_floor;
        params.flags.variance_collapse = true;
      }
    }
    ++m_steps;
  }

  params.sigma2 = ctrl.per_group_variance ? group_s2[0] : sigma2;
  if (ctrl.per_group_variance) {
    params.group_sigma2 = group_s2;
    // keep the scalar field meaningful as the weighted pooled variance
    double num = 0.0, den = 0.0;
    for (std::size_t g = 0; g < k; ++g) {
      num += group_s2[g] * params.group_total_weight(g);
      den += params.group_total_weight(g);
    }
    if (den > 0.0) params.sigma2 = num / den;
  }
  params.fit_meta.iterations = m_steps;
  params.fit_meta.log_likelihood = trace.back();
  params.fit_meta.training_cases = int(n_cases);
  return params;
}

}  // namespace ensbma

#endif  // ENSBMA_ESTIMATION_HPP
