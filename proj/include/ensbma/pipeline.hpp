#ifndef ENSBMA_PIPELINE_HPP
#define ENSBMA_PIPELINE_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ensbma/dataset.hpp"
#include "ensbma/estimation.hpp"
#include "ensbma/predictive.hpp"
#include "ensbma/types.hpp"
#include "ensbma/verification.hpp"

namespace ensbma {

struct DateRange {
  Date start;
  Date end;  // inclusive
};

struct RunConfig {
  SchemeVariant scheme = SchemeVariant::TwoGroup;
  BiasMode bias_mode = BiasMode::None;
  int window_days = 33;
  /// Defaults to [dataset start + window_days, dataset end].
  std::optional<DateRange> eval_range;
  double nominal_level = 5.0 / 6.0;  // central prediction interval mass
  EmControl em;
  double freezing_threshold = 273.15;  // K
  std::uint64_t seed = 1;
  /// Days whose window holds fewer (member, case) pairs are skipped.
  int min_training_pairs = 50;
  /// Fit one parameter set per station instead of pooling all stations.
  bool per_station = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["scheme"] = scheme_variant_name(scheme);
    j["bias"] = bias_mode_name(bias_mode);
    j["window_days"] = window_days;
    if (eval_range) {
      j["eval_start"] = eval_range->start.to_string();
      j["eval_end"] = eval_range->end.to_string();
    }
    j["nominal_level"] = nominal_level;
    j["freezing_threshold"] = freezing_threshold;
    j["seed"] = seed;
    j["min_training_pairs"] = min_training_pairs;
    j["per_station"] = per_station;
    j["em"] = {{"tol", em.tol},
               {"max_iter", em.max_iter},
               {"sigma2_floor", em.sigma2_floor},
               {"per_group_variance", em.per_group_variance}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig cfg;
    const auto variant = parse_scheme_variant(j.at("scheme").get<std::string>());
    const auto mode = parse_bias_mode(j.at("bias").get<std::string>());
    if (!variant || !mode) throw DataError("RunConfig: bad scheme or bias mode");
    cfg.scheme = *variant;
    cfg.bias_mode = *mode;
    cfg.window_days = j.at("window_days").get<int>();
    if (j.contains("eval_start")) {
      const auto s = Date::parse(j.at("eval_start").get<std::string>());
      const auto e = Date::parse(j.at("eval_end").get<std::string>());
      if (!s || !e) throw DataError("RunConfig: bad eval range dates");
      cfg.eval_range = DateRange{*s, *e};
    }
    cfg.nominal_level = j.at("nominal_level").get<double>();
    cfg.freezing_threshold = j.at("freezing_threshold").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.min_training_pairs = j.at("min_training_pairs").get<int>();
    cfg.per_station = j.at("per_station").get<bool>();
    const auto& em = j.at("em");
    cfg.em.tol = em.at("tol").get<double>();
    cfg.em.max_iter = em.at("max_iter").get<int>();
    cfg.em.sigma2_floor = em.at("sigma2_floor").get<double>();
    cfg.em.per_group_variance = em.at("per_group_variance").get<bool>();
    return cfg;
  }
};

struct StationSummary {
  std::string station;
  int n_members = 0;
  bool scored = false;  // observation present, counted in both reports
  double bma_median = 0.0, bma_mean = 0.0, bma_lo = 0.0, bma_hi = 0.0;
  std::optional<double> bma_crps, pit;
  double raw_median = 0.0, raw_mean = 0.0, raw_lo = 0.0, raw_hi = 0.0;
  std::optional<double> raw_crps;
  std::optional<int> rank;
};

struct DayFlags {
  bool insufficient_training = false;
  bool non_convergence = false;
  bool degenerate_regression = false;
  bool variance_collapse = false;
};

struct DailyRecord {
  Date date;
  std::optional<BmaParameters> params;                  // pooled fit
  std::map<std::string, BmaParameters> station_params;  // per-station mode
  std::vector<StationSummary> stations;
  DayFlags flags;
  int training_cases = 0;
  int training_pairs = 0;
};

struct RunResult {
  RunConfig config;  // eval range resolved
  std::vector<DailyRecord> days;
  VerificationReport bma;
  VerificationReport raw;
};

namespace detail {

struct ReportAccumulator {
  std::vector<double> crps;
  std::vector<std::pair<double, double>> median_pairs, mean_pairs;
  std::vector<IntervalCase> intervals;

  void finish(VerificationReport& r) const {
    r.n_cases = (long long)(crps.size());
    if (crps.empty()) return;
    r.mean_crps = std::accumulate(crps.begin(), crps.end(), 0.0) / double(crps.size());
    r.mae_median = mae(median_pairs);
    r.mae_mean = mae(mean_pairs);
    r.rmse_median = rmse(median_pairs);
    r.rmse_mean = rmse(mean_pairs);
    const auto stats = central_interval_stats(intervals);
    r.coverage = stats.coverage;
    r.avg_width = stats.avg_width;
  }
};

}  // namespace detail

/// Rolling-origin evaluation. For every day of the evaluation range that has
/// cases, parameters are fitted on the preceding window_days calendar days
/// (pooled over stations unless cfg.per_station), every station case is
/// scored against its observation, and BMA and raw-ensemble reports are
/// accumulated over the identical case set. Days whose window carries fewer
/// than cfg.min_training_pairs (member, case) pairs are flagged and skipped.
inline RunResult run_rolling(const Dataset& data, const RunConfig& cfg_in) {
  if (data.empty()) throw DataError("run_rolling: empty dataset");
  if (cfg_in.window_days < 1) throw Error("run_rolling: window_days must be >= 1");

  RunResult result;
  result.config = cfg_in;
  RunConfig& cfg = result.config;
  if (!cfg.eval_range)
    cfg.eval_range = DateRange{data.start_date() + cfg.window_days, data.end_date()};
  if (cfg.eval_range->start > cfg.eval_range->end)
    throw DataError("run_rolling: empty evaluation range");

  const GroupScheme scheme = GroupScheme::make(cfg.scheme);
  const double lo_p = 0.5 * (1.0 - cfg.nominal_level);
  const double hi_p = 1.0 - lo_p;
  std::mt19937_64 tie_rng(cfg.seed);

  detail::ReportAccumulator bma_acc, raw_acc;
  std::vector<double> pit_values;
  std::vector<long long> rank_counts(size_t(kEnsembleMembers) + 1, 0);

  auto fit_window = [&](const TrainingSet& train,
                        DayFlags& flags) -> std::optional<BmaParameters> {
    if (train.member_pairs() < cfg.min_training_pairs) {
      flags.insufficient_training = true;
      return std::nullopt;
    }
    BmaParameters params = fit_bma(train, scheme, cfg.bias_mode, cfg.em);
    params.validate();
    flags.non_convergence |= params.flags.non_convergence;
    flags.degenerate_regression |= params.flags.degenerate_regression;
    flags.variance_collapse |= params.flags.variance_collapse;
    return params;
  };

  for (Date d = cfg.eval_range->start; d <= cfg.eval_range->end; d += 1) {
    const auto day_cases = data.cases_on(d);
    if (day_cases.empty()) continue;

    DailyRecord rec;
    rec.date = d;
    if (!cfg.per_station) {
      const TrainingSet train = TrainingSet::from_window(data, d, cfg.window_days);
      rec.training_cases = int(train.cases().size());
      rec.training_pairs = train.member_pairs();
      rec.params = fit_window(train, rec.flags);
    }

    for (const ForecastCase* c : day_cases) {
      if (c->empty()) continue;

      const BmaParameters* params = nullptr;
      if (cfg.per_station) {
        std::vector<ForecastCase> window_cases;
        for (int back = cfg.window_days; back >= 1; --back)
          if (const ForecastCase* tc = data.find(d - back, c->station_id))
            window_cases.push_back(*tc);
        const TrainingSet train{std::move(window_cases)};
        rec.training_cases += int(train.cases().size());
        rec.training_pairs += train.member_pairs();
        if (auto fitted = fit_window(train, rec.flags))
          params = &rec.station_params.emplace(c->station_id, std::move(*fitted))
                        .first->second;
      } else if (rec.params) {
        params = &*rec.params;
      }
      if (!params) continue;

      StationSummary s;
      s.station = c->station_id;
      s.n_members = c->present_members();

      const auto pred = make_predictive(*params, *c);
      s.bma_median = pred.median();
      s.bma_mean = pred.mean();
      s.bma_lo = pred.quantile(lo_p);
      s.bma_hi = pred.quantile(hi_p);

      auto values = c->present_values();
      std::sort(values.begin(), values.end());
      s.raw_median = hf7_quantile_sorted(values, 0.5);
      s.raw_mean = std::accumulate(values.begin(), values.end(), 0.0) /
                   double(values.size());
      s.raw_lo = hf7_quantile_sorted(values, lo_p);
      s.raw_hi = hf7_quantile_sorted(values, hi_p);

      if (c->observation.has_value()) {
        const double y = *c->observation;
        s.scored = true;
        s.bma_crps = pred.crps(y);
        s.pit = pred.cdf(y);
        s.raw_crps = crps_empirical(values, y);
        s.rank = rank_of_observation(values, y, tie_rng);

        bma_acc.crps.push_back(*s.bma_crps);
        bma_acc.median_pairs.push_back({s.bma_median, y});
        bma_acc.mean_pairs.push_back({s.bma_mean, y});
        bma_acc.intervals.push_back({s.bma_lo, s.bma_hi, y});
        pit_values.push_back(*s.pit);

        raw_acc.crps.push_back(*s.raw_crps);
        raw_acc.median_pairs.push_back({s.raw_median, y});
        raw_acc.mean_pairs.push_back({s.raw_mean, y});
        raw_acc.intervals.push_back({s.raw_lo, s.raw_hi, y});
        ++rank_counts[size_t(*s.rank - 1)];
      }
      rec.stations.push_back(std::move(s));
    }
    result.days.push_back(std::move(rec));
  }

  result.bma.label = "bma";
  bma_acc.finish(result.bma);
  result.bma.pit_values = std::move(pit_values);
  if (!result.bma.pit_values.empty())
    result.bma.ks_p = ks_uniform_test(result.bma.pit_values).p_value;

  result.raw.label = "raw";
  raw_acc.finish(result.raw);
  result.raw.rank_counts = std::move(rank_counts);
  return result;
}

struct SweepRow {
  int window_days;
  long long n_cases;
  double mean_crps;
  double mae_median;
  double rmse_mean;
  double coverage;
  double avg_width;
};

/// Training-window sweep: every length is evaluated over the identical date
/// range, which starts after the longest window so all lengths are comparable.
inline std::vector<SweepRow> sweep_window(const Dataset& data,
                                          const RunConfig& base,
                                          const std::vector<int>& lengths) {
  if (lengths.empty()) throw Error("sweep_window: no window lengths");
  const int max_len = *std::max_element(lengths.begin(), lengths.end());
  Date start = data.start_date() + max_len;
  Date end = data.end_date();
  if (base.eval_range) {
    start = std::max(start, base.eval_range->start);
    end = base.eval_range->end;
  }
  if (start > end)
    throw DataError("sweep_window: no common evaluation range for the longest window");

  std::vector<SweepRow> rows;
  rows.reserve(lengths.size());
  for (int len : lengths) {
    RunConfig cfg = base;
    cfg.window_days = len;
    cfg.eval_range = DateRange{start, end};
    const RunResult rr = run_rolling(data, cfg);
    rows.push_back({len, rr.bma.n_cases, rr.bma.mean_crps, rr.bma.mae_median,
                    rr.bma.rmse_mean, rr.bma.coverage, rr.bma.avg_width});
  }
  return rows;
}

struct WeightPoint {
  Date date;
  std::vector<double> member_weight;  // per group
  std::vector<double> group_weight;   // per group, member weight times size
  bool real_mixture;                  // no group holds more than 0.99
};

/// Per-day group weights from the pooled fits, with the degeneracy flag:
/// a day is a real mixture when no group's total weight exceeds 0.99.
inline std::vector<WeightPoint> weight_series(const std::vector<DailyRecord>& days) {
  std::vector<WeightPoint> out;
  for (const auto& rec : days) {
    if (!rec.params) continue;
    WeightPoint p;
    p.date = rec.date;
    const auto& params = *rec.params;
    bool real = true;
    for (std::size_t g = 0; g < params.scheme.group_count(); ++g) {
      p.member_weight.push_back(params.member_weight[g]);
      p.group_weight.push_back(params.group_total_weight(g));
      if (p.group_weight.back() > 0.99) real = false;
    }
    p.real_mixture = real;
    out.push_back(std::move(p));
  }
  return out;
}

struct EventPoint {
  Date date;
  std::string station;
  double bma_prob;
  double raw_prob;  // fraction of members beyond the threshold
  std::optional<bool> observed;
};

/// Per-day, per-station threshold event probabilities (e.g. freezing) from
/// the fitted distributions and from the raw member counts.
inline std::vector<EventPoint> event_series(const std::vector<DailyRecord>& days,
                                            const Dataset& data, double threshold,
                                            EventSide side) {
  std::vector<EventPoint> out;
  for (const auto& rec : days) {
    for (const ForecastCase* c : data.cases_on(rec.date)) {
      if (c->empty()) continue;
      const BmaParameters* params = nullptr;
      if (rec.params) {
        params = &*rec.params;
      } else {
        const auto it = rec.station_params.find(c->station_id);
        if (it != rec.station_params.end()) params = &it->second;
      }
      if (!params) continue;

      EventPoint p;
      p.date = rec.date;
      p.station = c->station_id;
      p.bma_prob = make_predictive(*params, *c).event_probability(threshold, side);
      const auto values = c->present_values();
      long beyond = 0;
      for (double v : values)
        if (side == EventSide::Below ? v <= threshold : v > threshold) ++beyond;
      p.raw_prob = double(beyond) / double(values.size());
      if (c->observation.has_value())
        p.observed = side == EventSide::Below ? *c->observation <= threshold
                                              : *c->observation > threshold;
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output files

inline nlohmann::ordered_json report_json(const RunResult& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config.to_json();
  j["bma"] = r.bma.to_json();
  j["raw"] = r.raw.to_json();
  return j;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string{};
}

}  // namespace detail

inline void write_report_json(const RunResult& r, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << report_json(r).dump(2) << '\n';
}

inline void write_daily_csv(const RunResult& r, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "date,station,n_members,bma_median,bma_mean,bma_lo,bma_hi,bma_crps,pit,"
         "rank,raw_median,raw_mean,raw_lo,raw_hi,raw_crps,sigma2,iterations,"
         "insufficient_training,non_convergence,degenerate_regression,"
         "variance_collapse\n";
  using detail::format_double;
  for (const auto& rec : r.days) {
    const std::string flags = std::string(",") +
        (rec.flags.insufficient_training ? "1" : "0") + ',' +
        (rec.flags.non_convergence ? "1" : "0") + ',' +
        (rec.flags.degenerate_regression ? "1" : "0") + ',' +
        (rec.flags.variance_collapse ? "1" : "0");
    if (rec.stations.empty()) {  // day skipped: keep the flags visible
      out << rec.date.to_string() << ",,,,,,,,,,,,,,,,," << flags.substr(1) << '\n';
      continue;
    }
    for (const auto& s : rec.stations) {
      const BmaParameters* params = rec.params ? &*rec.params : nullptr;
      if (!params) {
        const auto it = rec.station_params.find(s.station);
        if (it != rec.station_params.end()) params = &it->second;
      }
      out << rec.date.to_string() << ',' << s.station << ',' << s.n_members << ','
          << format_double(s.bma_median) << ',' << format_double(s.bma_mean) << ','
          << format_double(s.bma_lo) << ',' << format_double(s.bma_hi) << ','
          << detail::opt_field(s.bma_crps) << ',' << detail::opt_field(s.pit) << ','
          << (s.rank ? std::to_string(*s.rank) : std::string{}) << ','
          << format_double(s.raw_median) << ',' << format_double(s.raw_mean) << ','
          << format_double(s.raw_lo) << ',' << format_double(s.raw_hi) << ','
          << detail::opt_field(s.raw_crps) << ','
          << (params ? format_double(params->sigma2) : std::string{}) << ','
          << (params ? std::to_string(params->fit_meta.iterations) : std::string{})
          << flags << '\n';
    }
  }
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows,
                            const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "window_days,n_cases,mean_crps,mae_median,rmse_mean,coverage,avg_width\n";
  using detail::format_double;
  for (const auto& row : rows)
    out << row.window_days << ',' << row.n_cases << ','
        << format_double(row.mean_crps) << ',' << format_double(row.mae_median)
        << ',' << format_double(row.rmse_mean) << ','
        << format_double(row.coverage) << ',' << format_double(row.avg_width)
        << '\n';
}

inline void write_weights_csv(const std::vector<WeightPoint>& points,
                              const GroupScheme& scheme,
                              const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "date";
  for (const auto& g : scheme.groups()) out << ",w_" << g.id;
  for (const auto& g : scheme.groups()) out << ",W_" << g.id;
  out << ",real_mixture\n";
  for (const auto& p : points) {
    out << p.date.to_string();
    for (double w : p.member_weight) out << ',' << detail::format_double(w);
    for (double w : p.group_weight) out << ',' << detail::format_double(w);
    out << ',' << (p.real_mixture ? 1 : 0) << '\n';
  }
}

inline void write_events_csv(const std::vector<EventPoint>& points,
                             const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "date,station,bma_prob,raw_prob,observed\n";
  for (const auto& p : points) {
    out << p.date.to_string() << ',' << p.station << ','
        << detail::format_double(p.bma_prob) << ','
        << detail::format_double(p.raw_prob) << ',';
    if (p.observed) out << (*p.observed ? 1 : 0);
    out << '\n';
  }
}

inline void write_pit_csv(const RunResult& r, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "date,station,pit\n";
  for (const auto& rec : r.days)
    for (const auto& s : rec.stations)
      if (s.pit)
        out << rec.date.to_string() << ',' << s.station << ','
            << detail::format_double(*s.pit) << '\n';
}

inline void write_ranks_csv(const RunResult& r, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "rank,count\n";
  for (std::size_t i = 0; i < r.raw.rank_counts.size(); ++i)
    out << (i + 1) << ',' << r.raw.rank_counts[i] << '\n';
}

}  // namespace ensbma

#endif  // ENSBMA_PIPELINE_HPP
