#ifndef ENSBMA_SYNTH_HPP
#define ENSBMA_SYNTH_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "ensbma/dataset.hpp"
#include "ensbma/estimation.hpp"
#include "ensbma/types.hpp"

namespace ensbma {

namespace detail {

/// Deterministic random stream with a pinned draw algorithm (mt19937_64 bits,
/// explicit uniform mapping, Box-Muller normals), so generated datasets are
/// reproducible bit for bit across platforms and library versions.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed) : rng_(seed) {}

  double uniform() {  // [0, 1)
    return double(rng_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

private:
  std::mt19937_64 rng_;
};

}  // namespace detail

struct RegimeShift {
  Date date;
  double bias_delta;  // added to observations from this date onward
};

/// Controls the synthetic dataset generator. Latent daily truth follows a
/// seasonal sine plus AR(1) noise; members scatter around it with noise
/// scaled by spread_factor; the observation is drawn from the mixture model
/// applied to the generated members, so the true predictive law is exactly
/// the configured model whatever the ensemble spread. spread_factor 1 gives
/// members whose scatter matches member_spread; values below 1 shrink the
/// ensemble and leave the observation noise unchanged, producing the
/// under-dispersion the raw ensemble is known for.
struct SynthSpec {
  int n_days = 200;
  int n_stations = 10;
  Date start_date = Date::from_ymd(2010, 10, 1);
  SchemeVariant scheme = SchemeVariant::TwoGroup;
  /// Per-group weight of each individual member; empty means uniform (1/11).
  std::vector<double> member_weights;
  /// True per-group bias applied when drawing the observation; empty means
  /// identity (no bias).
  std::vector<BiasCoefficients> bias;
  /// Systematic per-group offset added to the member values themselves;
  /// empty means none.
  std::vector<double> group_offset;
  double sigma = 1.0;          // mixture component standard deviation (K)
  double member_spread = 1.1;  // member noise standard deviation at factor 1
  double spread_factor = 1.0;  // < 1 under-dispersive, > 1 over-dispersive
  /// Five perturbations added to odd members and subtracted from even ones;
  /// when off, every perturbed member gets independent noise.
  bool mirrored_perturbations = true;
  double base_temperature = 278.0;  // K
  double seasonal_amplitude = 8.0;  // K
  double ar1_rho = 0.8;
  double ar1_sigma = 2.0;  // K
  double station_spread = 1.5;  // K, fixed per-station offsets
  std::vector<RegimeShift> regime_shifts;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_days < 1 || n_stations < 1) throw Error("SynthSpec: need days and stations");
    if (!(sigma > 0.0)) throw Error("SynthSpec: sigma must be positive");
    if (!(member_spread > 0.0)) throw Error("SynthSpec: member_spread must be positive");
    if (!(spread_factor > 0.0)) throw Error("SynthSpec: spread_factor must be positive");
    const GroupScheme scheme_obj = GroupScheme::make(scheme);
    if (!member_weights.empty()) {
      if (member_weights.size() != scheme_obj.group_count())
        throw Error("SynthSpec: one weight per group required");
      double total = 0.0;
      for (std::size_t g = 0; g < member_weights.size(); ++g) {
        if (!(member_weights[g] >= 0.0)) throw Error("SynthSpec: negative weight");
        total += member_weights[g] * double(scheme_obj.group_size(g));
      }
      if (std::abs(total - 1.0) > 1e-9)
        throw Error("SynthSpec: group weights must sum to 1 over members");
    }
    if (!bias.empty() && bias.size() != scheme_obj.group_count())
      throw Error("SynthSpec: one bias pair per group required");
    if (!group_offset.empty() && group_offset.size() != scheme_obj.group_count())
      throw Error("SynthSpec: one member offset per group required");
  }
};

/// Deterministic synthetic dataset following the configured mixture model.
inline Dataset generate(const SynthSpec& spec) {
  spec.validate();
  const GroupScheme scheme = GroupScheme::make(spec.scheme);
  const std::vector<double> weights = spec.member_weights.empty()
      ? std::vector<double>(scheme.group_count(), 1.0 / double(kEnsembleMembers))
      : spec.member_weights;
  const std::vector<BiasCoefficients> bias = spec.bias.empty()
      ? std::vector<BiasCoefficients>(scheme.group_count())
      : spec.bias;
  const std::vector<double> offset = spec.group_offset.empty()
      ? std::vector<double>(scheme.group_count(), 0.0)
      : spec.group_offset;
  auto offset_of_slot = [&](int slot) {
    return offset[size_t(scheme.group_of_slot(slot))];
  };

  detail::RandomStream rng(spec.seed);

  std::vector<double> station_offset(size_t(spec.n_stations));
  for (auto& o : station_offset) o = spec.station_spread * rng.normal();

  std::vector<std::string> station_ids(size_t(spec.n_stations));
  for (int s = 0; s < spec.n_stations; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%02d", s + 1);
    station_ids[size_t(s)] = buf;
  }

  const double member_sd = spec.spread_factor * spec.member_spread;
  const double two_pi = 2.0 * 3.14159265358979323846;

  Dataset data;
  double ar = spec.ar1_sigma / std::sqrt(1.0 - spec.ar1_rho * spec.ar1_rho) *
              rng.normal();
  for (int day = 0; day < spec.n_days; ++day) {
    const Date date = spec.start_date + day;
    if (day > 0) ar = spec.ar1_rho * ar + spec.ar1_sigma * rng.normal();
    const double seasonal =
        spec.seasonal_amplitude * std::sin(two_pi * double(day) / 365.25);

    double shift = 0.0;
    for (const auto& rs : spec.regime_shifts)
      if (rs.date <= date) shift += rs.bias_delta;

    for (int st = 0; st < spec.n_stations; ++st) {
      const double truth =
          spec.base_temperature + seasonal + ar + station_offset[size_t(st)];

      ForecastCase c;
      c.date = date;
      c.station_id = station_ids[size_t(st)];
      c.control = truth + offset_of_slot(0) + member_sd * rng.normal();
      if (spec.mirrored_perturbations) {
        for (int j = 0; j < 5; ++j) {
          const double delta = member_sd * rng.normal();
          c.perturbed[size_t(2 * j)] =
              truth + offset_of_slot(2 * j + 1) + delta;  // odd slot
          c.perturbed[size_t(2 * j + 1)] =
              truth + offset_of_slot(2 * j + 2) - delta;  // even slot
        }
      } else {
        for (int j = 0; j < kPerturbedMembers; ++j)
          c.perturbed[size_t(j)] =
              truth + offset_of_slot(j + 1) + member_sd * rng.normal();
      }

      // Pick the mixture component, then draw the observation around the
      // bias-corrected member value.
      const double u = rng.uniform();
      int slot = kEnsembleMembers - 1;
      double cum = 0.0;
      for (int s = 0; s < kEnsembleMembers; ++s) {
        cum += weights[size_t(scheme.group_of_slot(s))];
        if (u < cum) {
          slot = s;
          break;
        }
      }
      const auto& b = bias[size_t(scheme.group_of_slot(slot))];
      const double mu = b.intercept + b.slope * *c.member(slot);
      c.observation = mu + spec.sigma * rng.normal() + shift;

      data.insert(std::move(c));
    }
  }
  return data;
}

}  // namespace ensbma

#endif  // ENSBMA_SYNTH_HPP
