#ifndef ENSBMA_CLI_HPP
#define ENSBMA_CLI_HPP

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ensbma/ensbma.hpp"

namespace ensbma::cli {

namespace detail {

inline std::string date_validator(const std::string& s) {
  return Date::parse(s) ? std::string{} : "not an ISO date (YYYY-MM-DD): " + s;
}

inline std::vector<int> parse_lengths(const std::string& spec) {
  std::vector<int> out;
  auto parse_int = [](const std::string& s) {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size() || v < 1) throw CLI::ValidationError("--lengths", "bad window length '" + s + "'");
    return v;
  };
  const auto colon = spec.find(':');
  if (colon != std::string::npos) {
    const int a = parse_int(spec.substr(0, colon));
    const int b = parse_int(spec.substr(colon + 1));
    if (b < a) throw CLI::ValidationError("--lengths", "range end before start");
    for (int v = a; v <= b; ++v) out.push_back(v);
    return out;
  }
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const auto piece = spec.substr(start, comma == std::string::npos
                                              ? std::string::npos
                                              : comma - start);
    out.push_back(parse_int(piece));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<RegimeShift> parse_shifts(const std::vector<std::string>& specs) {
  std::vector<RegimeShift> out;
  for (const auto& s : specs) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos)
      throw CLI::ValidationError("--shift", "expected DATE:DELTA, got '" + s + "'");
    const auto date = Date::parse(s.substr(0, colon));
    if (!date) throw CLI::ValidationError("--shift", "bad date in '" + s + "'");
    out.push_back({*date, std::stod(s.substr(colon + 1))});
  }
  return out;
}

struct ModelFlags {
  std::string scheme = "two";
  std::string bias = "none";
  int window = 33;
  double level = 5.0 / 6.0;
  double threshold = 273.15;
  std::uint64_t seed = 1;
  int min_train_pairs = 50;
  double tol = 1e-6;
  int max_iter = 1000;
  double sigma2_floor = 1e-6;
  bool per_station = false;
  bool per_group_variance = false;
  std::string start, end;

  void attach(CLI::App& app, bool with_window = true) {
    app.add_option("--scheme", scheme, "Exchangeable-group scheme")
        ->check(CLI::IsMember({"two", "three"}))
        ->capture_default_str();
    app.add_option("--bias", bias, "Bias-correction mode")
        ->check(CLI::IsMember({"linear", "additive", "none"}))
        ->capture_default_str();
    if (with_window)
      app.add_option("--window", window, "Training window in calendar days")
          ->check(CLI::PositiveNumber)
          ->capture_default_str();
    app.add_option("--start", start, "First evaluation day (YYYY-MM-DD)")
        ->check(date_validator);
    app.add_option("--end", end, "Last evaluation day (YYYY-MM-DD)")
        ->check(date_validator);
    app.add_option("--level", level, "Central prediction interval mass")
        ->check(CLI::Range(1e-6, 1.0 - 1e-6))
        ->capture_default_str();
    app.add_option("--threshold", threshold, "Event threshold in Kelvin")
        ->capture_default_str();
    app.add_option("--seed", seed, "Seed for randomized tie-breaking")
        ->capture_default_str();
    app.add_option("--min-train-pairs", min_train_pairs,
                   "Skip days whose window has fewer (member, case) pairs")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--tol", tol, "EM relative log-likelihood tolerance")
        ->capture_default_str();
    app.add_option("--max-iter", max_iter, "EM iteration cap")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--sigma2-floor", sigma2_floor, "Lower bound on the fitted variance")
        ->capture_default_str();
    app.add_flag("--per-station", per_station, "Fit each station separately instead of pooling");
    app.add_flag("--per-group-variance", per_group_variance,
                 "Fit one variance per group instead of a common one");
  }

  RunConfig to_config(const Dataset& data) const {
    RunConfig cfg;
    cfg.scheme = *parse_scheme_variant(scheme);
    cfg.bias_mode = *parse_bias_mode(bias);
    cfg.window_days = window;
    cfg.nominal_level = level;
    cfg.freezing_threshold = threshold;
    cfg.seed = seed;
    cfg.min_training_pairs = min_train_pairs;
    cfg.per_station = per_station;
    cfg.em.tol = tol;
    cfg.em.max_iter = max_iter;
    cfg.em.sigma2_floor = sigma2_floor;
    cfg.em.per_group_variance = per_group_variance;
    const Date s = start.empty() ? data.start_date() + window : *Date::parse(start);
    const Date e = end.empty() ? data.end_date() : *Date::parse(end);
    cfg.eval_range = DateRange{s, e};
    return cfg;
  }
};

inline void run_outputs(const RunResult& rr, const Dataset& data,
                        const std::filesystem::path& out_dir,
                        const std::string& format) {
  std::filesystem::create_directories(out_dir);
  if (format == "csv") {
    auto out = ensbma::detail::open_out(out_dir / "report.csv");
    out << VerificationReport::csv_header() << '\n'
        << rr.bma.csv_row() << '\n'
        << rr.raw.csv_row() << '\n';
  } else {
    write_report_json(rr, out_dir / "report.json");
  }
  write_daily_csv(rr, out_dir / "daily.csv");
  write_weights_csv(weight_series(rr.days), GroupScheme::make(rr.config.scheme),
                    out_dir / "weights.csv");
  write_events_csv(event_series(rr.days, data, rr.config.freezing_threshold,
                                EventSide::Below),
                   out_dir / "events.csv");
  write_pit_csv(rr, out_dir / "pit.csv");
  write_ranks_csv(rr, out_dir / "ranks.csv");
}

}  // namespace detail

/// Entry point behind the binary; args exclude the program name.
/// Exit codes: 0 success, 1 usage error, 2 data error.
inline int run(std::vector<std::string> args) {
  CLI::App app{"BMA calibration of exchangeable-group ensemble temperature forecasts"};
  app.require_subcommand(1);

  // --- run ---------------------------------------------------------------
  auto* cmd_run = app.add_subcommand("run", "Rolling-origin evaluation with full reports");
  std::string run_data, run_out = ".", run_format = "json";
  detail::ModelFlags run_flags;
  cmd_run->add_option("--data", run_data, "Input dataset CSV")->required();
  cmd_run->add_option("--out", run_out, "Output directory")->capture_default_str();
  run_flags.attach(*cmd_run);
  cmd_run->add_option("--format", run_format, "Report format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  // --- sweep -------------------------------------------------------------
  auto* cmd_sweep = app.add_subcommand("sweep", "Training-window length sweep");
  std::string sweep_data, sweep_out = ".", sweep_lengths = "10:60";
  detail::ModelFlags sweep_flags;
  cmd_sweep->add_option("--data", sweep_data, "Input dataset CSV")->required();
  cmd_sweep->add_option("--out", sweep_out, "Output directory")->capture_default_str();
  cmd_sweep->add_option("--lengths", sweep_lengths,
                        "Window lengths, A:B range or comma list")
      ->capture_default_str();
  sweep_flags.attach(*cmd_sweep, /*with_window=*/false);

  // --- synth -------------------------------------------------------------
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic dataset CSV");
  std::string synth_out, synth_scheme = "two", synth_start = "2010-10-01";
  int synth_days = 200, synth_stations = 10;
  double synth_spread = 1.0, synth_sigma = 1.0, synth_member_spread = 1.0;
  double omega_control = -1.0, omega_odd = -1.0, omega_even = -1.0;
  bool synth_no_mirror = false;
  std::uint64_t synth_seed = 1;
  std::vector<std::string> synth_shifts;
  cmd_synth->add_option("--out", synth_out, "Output CSV path")->required();
  cmd_synth->add_option("--days", synth_days, "Number of days")
      ->check(CLI::PositiveNumber)->capture_default_str();
  cmd_synth->add_option("--stations", synth_stations, "Number of stations")
      ->check(CLI::PositiveNumber)->capture_default_str();
  cmd_synth->add_option("--spread", synth_spread,
                        "Ensemble spread factor (1 calibrated, <1 under-dispersive)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  cmd_synth->add_option("--sigma", synth_sigma, "Mixture component std dev (K)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  cmd_synth->add_option("--member-spread", synth_member_spread,
                        "Member noise std dev at spread 1 (K)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  cmd_synth->add_option("--scheme", synth_scheme, "True grouping scheme")
      ->check(CLI::IsMember({"two", "three"}))->capture_default_str();
  cmd_synth->add_option("--omega-control", omega_control,
                        "True weight of the control member (default uniform)");
  cmd_synth->add_option("--omega-odd", omega_odd,
                        "True weight of each odd member (three-group only)");
  cmd_synth->add_option("--omega-even", omega_even,
                        "True weight of each even member (three-group only)");
  cmd_synth->add_flag("--no-mirror", synth_no_mirror,
                      "Independent member noise instead of mirrored perturbation pairs");
  cmd_synth->add_option("--start", synth_start, "First day (YYYY-MM-DD)")
      ->check(detail::date_validator)->capture_default_str();
  cmd_synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  cmd_synth->add_option("--shift", synth_shifts,
                        "Observation bias shift DATE:DELTA, repeatable");

  // --- rankhist ----------------------------------------------------------
  auto* cmd_rank = app.add_subcommand(
      "rankhist", "Verification rank histogram of the raw ensemble");
  std::string rank_data, rank_out = "ranks.csv";
  std::uint64_t rank_seed = 1;
  cmd_rank->add_option("--data", rank_data, "Input dataset CSV")->required();
  cmd_rank->add_option("--out", rank_out, "Output CSV path")->capture_default_str();
  cmd_rank->add_option("--seed", rank_seed, "Seed for randomized tie-breaking")
      ->capture_default_str();

  // --- inspect -----------------------------------------------------------
  auto* cmd_inspect = app.add_subcommand(
      "inspect", "Fitted predictive distribution for one (date, station)");
  std::string ins_data, ins_date, ins_station, ins_out = "-";
  detail::ModelFlags ins_flags;
  cmd_inspect->add_option("--data", ins_data, "Input dataset CSV")->required();
  cmd_inspect->add_option("--date", ins_date, "Forecast day (YYYY-MM-DD)")
      ->required()->check(detail::date_validator);
  cmd_inspect->add_option("--station", ins_station, "Station id")->required();
  ins_flags.attach(*cmd_inspect);
  cmd_inspect->add_option("--out", ins_out, "Output path, - for stdout")
      ->capture_default_str();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*cmd_run) {
      const Dataset data = load_dataset(run_data);
      const RunConfig cfg = run_flags.to_config(data);
      const RunResult rr = run_rolling(data, cfg);
      detail::run_outputs(rr, data, run_out, run_format);
      std::printf("evaluated %lld cases over %zu days\n", rr.bma.n_cases,
                  rr.days.size());
      std::printf("mean CRPS  bma %.4f  raw %.4f\n", rr.bma.mean_crps,
                  rr.raw.mean_crps);
      std::printf("coverage   bma %.4f  raw %.4f  (nominal %.4f)\n",
                  rr.bma.coverage, rr.raw.coverage, cfg.nominal_level);
      if (rr.bma.ks_p)
        std::printf("PIT KS p   %.4g\n", *rr.bma.ks_p);
    } else if (*cmd_sweep) {
      const Dataset data = load_dataset(sweep_data);
      const RunConfig cfg = sweep_flags.to_config(data);
      const auto lengths = detail::parse_lengths(sweep_lengths);
      const auto rows = sweep_window(data, cfg, lengths);
      std::filesystem::create_directories(sweep_out);
      write_sweep_csv(rows, std::filesystem::path(sweep_out) / "sweep.csv");
      std::printf("swept %zu window lengths over %lld cases each\n", rows.size(),
                  rows.empty() ? 0LL : rows.front().n_cases);
    } else if (*cmd_synth) {
      SynthSpec spec;
      spec.n_days = synth_days;
      spec.n_stations = synth_stations;
      spec.spread_factor = synth_spread;
      spec.sigma = synth_sigma;
      spec.member_spread = synth_member_spread;
      spec.scheme = *parse_scheme_variant(synth_scheme);
      spec.mirrored_perturbations = !synth_no_mirror;
      spec.start_date = *Date::parse(synth_start);
      spec.seed = synth_seed;
      spec.regime_shifts = detail::parse_shifts(synth_shifts);
      if (omega_control >= 0.0) {
        if (spec.scheme == SchemeVariant::TwoGroup) {
          spec.member_weights = {omega_control, (1.0 - omega_control) / 10.0};
        } else {
          if (omega_odd < 0.0 || omega_even < 0.0)
            throw DataError("three-group weights need --omega-odd and --omega-even");
          spec.member_weights = {omega_control, omega_odd, omega_even};
        }
      }
      const Dataset data = generate(spec);
      write_dataset(data, std::filesystem::path(synth_out));
      std::printf("wrote %zu cases (%d days x %d stations) to %s\n", data.size(),
                  spec.n_days, spec.n_stations, synth_out.c_str());
    } else if (*cmd_rank) {
      const Dataset data = load_dataset(rank_data);
      std::mt19937_64 rng(rank_seed);
      std::vector<long long> counts(size_t(kEnsembleMembers) + 1, 0);
      long long n = 0;
      for (const auto& [key, c] : data.cases()) {
        if (!c.observation.has_value() || c.empty()) continue;
        const int rank = rank_of_observation(c.present_values(), *c.observation, rng);
        ++counts[size_t(rank - 1)];
        ++n;
      }
      if (n == 0) throw DataError("rankhist: no cases with observations");
      {
        auto out = ensbma::detail::open_out(rank_out);
        out << "rank,count\n";
        for (std::size_t i = 0; i < counts.size(); ++i)
          out << (i + 1) << ',' << counts[i] << '\n';
      }
      std::printf("ranked %lld observations; containment %.4f\n", n,
                  containment_fraction(data));
    } else if (*cmd_inspect) {
      const Dataset data = load_dataset(ins_data);
      const Date day = *Date::parse(ins_date);
      const ForecastCase* c = data.find(day, ins_station);
      if (!c) throw DataError("no case for " + ins_date + ", " + ins_station);
      if (c->empty()) throw DataError("case has no forecast values");
      const TrainingSet train = TrainingSet::from_window(data, day, ins_flags.window);
      if (train.member_pairs() < ins_flags.min_train_pairs)
        throw DataError("training window too small: " +
                        std::to_string(train.member_pairs()) + " member pairs");
      EmControl em;
      em.tol = ins_flags.tol;
      em.max_iter = ins_flags.max_iter;
      em.sigma2_floor = ins_flags.sigma2_floor;
      em.per_group_variance = ins_flags.per_group_variance;
      const auto params = fit_bma(train, GroupScheme::make(*parse_scheme_variant(ins_flags.scheme)),
                                  *parse_bias_mode(ins_flags.bias), em);
      const auto pred = make_predictive(params, *c);
      nlohmann::ordered_json j = to_json(pred);
      const double lo_p = 0.5 * (1.0 - ins_flags.level);
      j["median"] = pred.median();
      j["mean"] = pred.mean();
      j["interval"] = {{"level", ins_flags.level},
                       {"lo", pred.quantile(lo_p)},
                       {"hi", pred.quantile(1.0 - lo_p)}};
      if (c->observation) {
        j["observation"] = *c->observation;
        j["pit"] = pred.cdf(*c->observation);
        j["crps"] = pred.crps(*c->observation);
      }
      j["params"] = params.to_json();
      if (ins_out == "-") {
        std::cout << j.dump(2) << '\n';
      } else {
        auto out = ensbma::detail::open_out(ins_out);
        out << j.dump(2) << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

}  // namespace ensbma::cli

#endif  // ENSBMA_CLI_HPP
