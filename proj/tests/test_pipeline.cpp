#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "ensbma/pipeline.hpp"
#include "ensbma/synth.hpp"

using namespace ensbma;

namespace {

Dataset small_underdispersive(std::uint64_t seed = 2024, int days = 140,
                              int stations = 6) {
  SynthSpec spec;
  spec.n_days = days;
  spec.n_stations = stations;
  spec.spread_factor = 0.4;
  spec.seed = seed;
  return generate(spec);
}

Dataset rebuild(const Dataset& data,
                const std::function<bool(ForecastCase&)>& edit) {
  Dataset out;
  for (const auto& [key, c] : data.cases()) {
    ForecastCase copy = c;
    if (edit(copy)) out.insert(std::move(copy));
  }
  return out;
}

std::filesystem::path make_temp_dir(const std::string& tag) {
  const auto ticks =
      std::chrono::steady_clock::now().time_since_epoch().count();
  const auto dir = std::filesystem::temp_directory_path() /
                   ("ensbma_" + tag + "_" + std::to_string(ticks));
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

long count_lines(const std::string& text) {
  long n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("identical config and seed give bit-identical reports") {
  const Dataset data = small_underdispersive();
  RunConfig cfg;
  cfg.seed = 99;
  const auto a = run_rolling(data, cfg);
  const auto b = run_rolling(data, cfg);
  CHECK(report_json(a).dump(2) == report_json(b).dump(2));

  SECTION("the config echoed in the report reproduces the run") {
    const auto echoed = RunConfig::from_json(report_json(a).at("config"));
    const auto c = run_rolling(data, echoed);
    CHECK(report_json(a).dump(2) == report_json(c).dump(2));
  }
}

TEST_CASE("BMA and raw reports aggregate the identical case set") {
  Dataset data = small_underdispersive(7);
  // drop some observations and all members of one station-day
  int i = 0;
  data = rebuild(data, [&](ForecastCase& c) {
    ++i;
    if (i % 11 == 0) c.observation.reset();
    if (i % 37 == 0)
      for (int s = 0; s < kEnsembleMembers; ++s) c.member(s).reset();
    return true;
  });

  const auto rr = run_rolling(data, RunConfig{});
  CHECK(rr.bma.n_cases == rr.raw.n_cases);
  CHECK(rr.bma.n_cases > 0);
  CHECK(long(rr.bma.pit_values.size()) == rr.bma.n_cases);
  long long rank_total = 0;
  for (long long c : rr.raw.rank_counts) rank_total += c;
  CHECK(rank_total == rr.raw.n_cases);

  // scored summaries carry both sides or neither
  for (const auto& day : rr.days)
    for (const auto& s : day.stations) {
      CHECK(s.bma_crps.has_value() == s.scored);
      CHECK(s.raw_crps.has_value() == s.scored);
      CHECK(s.pit.has_value() == s.scored);
      CHECK(s.rank.has_value() == s.scored);
    }
}

TEST_CASE("post-processing beats the under-dispersive raw ensemble") {
  const Dataset data = small_underdispersive();
  const auto rr = run_rolling(data, RunConfig{});

  CHECK(rr.bma.mean_crps < rr.raw.mean_crps);
  const double nominal = 5.0 / 6.0;
  CHECK(std::abs(rr.bma.coverage - nominal) < std::abs(rr.raw.coverage - nominal));
  CHECK(rr.bma.avg_width > rr.raw.avg_width);  // the raw ensemble is too sharp
  REQUIRE(rr.bma.ks_p.has_value());
  CHECK(*rr.bma.ks_p > 0.01);
}

TEST_CASE("days without enough training pairs are flagged and skipped") {
  const Dataset data = small_underdispersive(3, 60, 2);
  RunConfig cfg;
  cfg.eval_range = DateRange{data.start_date(), data.start_date() + 1};
  const auto rr = run_rolling(data, cfg);
  REQUIRE(rr.days.size() == 2);
  for (const auto& day : rr.days) {
    CHECK(day.flags.insufficient_training);
    CHECK_FALSE(day.params.has_value());
    CHECK(day.stations.empty());
  }
  CHECK(rr.bma.n_cases == 0);
  CHECK(rr.raw.n_cases == 0);
}

TEST_CASE("windows are calendar days, so data gaps shrink but never shift them") {
  Dataset data = small_underdispersive(5, 80, 3);
  const Date hole = data.start_date() + 50;
  data = rebuild(data, [&](ForecastCase& c) { return c.date != hole; });

  RunConfig cfg;
  cfg.window_days = 10;
  const auto rr = run_rolling(data, cfg);

  for (const auto& day : rr.days) {
    CHECK(day.date != hole);  // nothing was issued on the missing day
    const int expected = (day.date > hole && day.date <= hole + 10) ? 9 * 3 : 10 * 3;
    CHECK(day.training_cases == expected);
  }
}

TEST_CASE("cases without any member are left out of scoring") {
  Dataset data = small_underdispersive(6, 70, 3);
  const Date day = data.start_date() + 50;
  data = rebuild(data, [&](ForecastCase& c) {
    if (c.date == day && c.station_id == "S02")
      for (int s = 0; s < kEnsembleMembers; ++s) c.member(s).reset();
    return true;
  });
  const auto rr = run_rolling(data, RunConfig{});
  for (const auto& rec : rr.days) {
    if (rec.date != day) continue;
    REQUIRE(rec.stations.size() == 2);
    CHECK(rec.stations[0].station == "S01");
    CHECK(rec.stations[1].station == "S03");
  }
}

TEST_CASE("fitted parameters satisfy their invariants on every day") {
  const Dataset data = small_underdispersive(8, 90, 4);
  const auto rr = run_rolling(data, RunConfig{});
  int checked = 0;
  for (const auto& day : rr.days) {
    if (!day.params) continue;
    CHECK_NOTHROW(day.params->validate());
    double total = 0.0;
    for (std::size_t g = 0; g < day.params->scheme.group_count(); ++g)
      total += day.params->group_total_weight(g);
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("window sweeps share one evaluation range") {
  SynthSpec spec;
  spec.n_days = 75;
  spec.n_stations = 2;
  spec.seed = 44;
  const Dataset data = generate(spec);

  std::vector<int> lengths;
  for (int len = 10; len <= 60; ++len) lengths.push_back(len);
  const auto rows = sweep_window(data, RunConfig{}, lengths);
  REQUIRE(rows.size() == 51);
  for (const auto& row : rows) {
    CHECK(row.n_cases == rows.front().n_cases);
    CHECK(row.n_cases == (75 - 60) * 2);
  }
  CHECK(rows.front().window_days == 10);
  CHECK(rows.back().window_days == 60);

  SECTION("an infeasible range refuses") {
    CHECK_THROWS_AS(sweep_window(data, RunConfig{}, {100}), DataError);
  }
}

TEST_CASE("diagnostics are flat in window length on stationary data") {
  SynthSpec spec;
  spec.n_days = 160;
  spec.n_stations = 6;
  spec.seed = 1;
  const Dataset data = generate(spec);

  const auto rows = sweep_window(data, RunConfig{}, {10, 25, 40, 55});
  double mean = 0.0;
  for (const auto& r : rows) mean += r.mean_crps;
  mean /= double(rows.size());
  double sq = 0.0;
  for (const auto& r : rows) sq += (r.mean_crps - mean) * (r.mean_crps - mean);
  CHECK(std::sqrt(sq / double(rows.size())) / mean < 0.02);
}

TEST_CASE("bias jumps favour an intermediate window length") {
  SynthSpec spec;
  spec.n_days = 230;
  spec.n_stations = 1;
  spec.sigma = 2.0;
  spec.regime_shifts = {{spec.start_date + 100, 5.0},
                        {spec.start_date + 160, -5.0}};
  spec.seed = 5;
  const Dataset data = generate(spec);

  RunConfig cfg;
  cfg.bias_mode = BiasMode::Additive;
  const auto rows = sweep_window(data, cfg, {5, 15, 45});
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].mean_crps < rows[0].mean_crps);
  CHECK(rows[1].mean_crps < rows[2].mean_crps);
}

TEST_CASE("weight series flag degenerate mixtures") {
  auto record_with_omega = [](int day, double omega) {
    DailyRecord rec;
    rec.date = Date::from_ymd(2011, 1, 1) + day;
    BmaParameters p;
    p.scheme = GroupScheme::two_group();
    p.bias_mode = BiasMode::None;
    p.bias = {{}, {}};
    p.member_weight = {omega, (1.0 - omega) / 10.0};
    p.sigma2 = 1.0;
    rec.params = std::move(p);
    return rec;
  };

  std::vector<DailyRecord> days;
  const std::vector<double> omegas{0.995, 1.0 / 11.0, 0.5, 0.004, 0.3};
  for (std::size_t i = 0; i < omegas.size(); ++i)
    days.push_back(record_with_omega(int(i), omegas[i]));
  days.push_back(DailyRecord{});  // a skipped day contributes nothing

  const auto series = weight_series(days);
  REQUIRE(series.size() == omegas.size());
  CHECK_FALSE(series[0].real_mixture);  // control group above 0.99
  CHECK(series[1].real_mixture);        // uniform weights
  CHECK(series[2].real_mixture);
  CHECK_FALSE(series[3].real_mixture);  // exchangeable group above 0.99
  CHECK(series[4].real_mixture);

  int real = 0;
  for (const auto& p : series) real += p.real_mixture ? 1 : 0;
  CHECK(real == 3);
  CHECK_THAT(series[0].group_weight[0] + series[0].group_weight[1],
             Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("event series compare mixture and member-count probabilities") {
  // static: computed once, shared by the sections below
  static const Dataset data = small_underdispersive(11, 200, 4);
  static const RunResult rr = run_rolling(data, RunConfig{});

  SECTION("a threshold below every value gives zero probabilities") {
    const auto points = event_series(rr.days, data, 100.0, EventSide::Below);
    REQUIRE_FALSE(points.empty());
    for (const auto& p : points) {
      CHECK(p.raw_prob == 0.0);
      CHECK(p.bma_prob < 1e-12);
      REQUIRE(p.observed.has_value());
      CHECK_FALSE(*p.observed);
    }
  }

  SECTION("raw probability is the fraction of members beyond the threshold") {
    const double threshold = 280.0;
    const auto points = event_series(rr.days, data, threshold, EventSide::Below);
    for (const auto& p : points) {
      const ForecastCase* c = data.find(p.date, p.station);
      REQUIRE(c != nullptr);
      long below = 0;
      const auto values = c->present_values();
      for (double v : values)
        if (v <= threshold) ++below;
      CHECK(p.raw_prob == double(below) / double(values.size()));
    }
  }

  SECTION("the calibrated probabilities have the better Brier score") {
    const double threshold = 280.0;
    const auto points = event_series(rr.days, data, threshold, EventSide::Below);
    double brier_bma = 0.0, brier_raw = 0.0;
    long n = 0;
    for (const auto& p : points) {
      if (!p.observed) continue;
      const double y = *p.observed ? 1.0 : 0.0;
      brier_bma += (p.bma_prob - y) * (p.bma_prob - y);
      brier_raw += (p.raw_prob - y) * (p.raw_prob - y);
      ++n;
    }
    REQUIRE(n > 0);
    CHECK(brier_bma < brier_raw);
  }
}

TEST_CASE("per-station fitting is available behind its switch") {
  const Dataset data = small_underdispersive(13, 100, 3);
  RunConfig pooled;
  RunConfig split;
  split.per_station = true;
  split.min_training_pairs = 30 * 11;  // a single station's window
  const auto a = run_rolling(data, pooled);
  const auto b = run_rolling(data, split);
  CHECK(a.bma.n_cases == b.bma.n_cases);
  bool saw_station_params = false;
  for (const auto& day : b.days) {
    CHECK_FALSE(day.params.has_value());
    if (!day.station_params.empty()) {
      saw_station_params = true;
      for (const auto& [st, params] : day.station_params)
        CHECK_NOTHROW(params.validate());
    }
  }
  CHECK(saw_station_params);
}

TEST_CASE("run outputs land in their documented files") {
  const Dataset data = small_underdispersive(15, 90, 3);
  RunConfig cfg;
  const auto rr = run_rolling(data, cfg);
  const auto dir = make_temp_dir("pipeline");

  write_report_json(rr, dir / "report.json");
  write_daily_csv(rr, dir / "daily.csv");
  write_pit_csv(rr, dir / "pit.csv");
  write_ranks_csv(rr, dir / "ranks.csv");
  write_weights_csv(weight_series(rr.days), GroupScheme::make(cfg.scheme),
                    dir / "weights.csv");
  write_events_csv(event_series(rr.days, data, 273.15, EventSide::Below),
                   dir / "events.csv");
  write_sweep_csv(sweep_window(data, cfg, {35, 40}), dir / "sweep.csv");

  const auto parsed = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(parsed.at("bma").at("n_cases").get<long long>() == rr.bma.n_cases);
  CHECK(parsed.at("raw").at("rank_counts").size() == 12);

  CHECK(count_lines(slurp(dir / "pit.csv")) == rr.bma.n_cases + 1);
  CHECK(count_lines(slurp(dir / "ranks.csv")) == 13);

  const std::string daily = slurp(dir / "daily.csv");
  CHECK_THAT(daily, Catch::Matchers::StartsWith("date,station,n_members,"));
  long scored_rows = 0;
  for (const auto& day : rr.days) scored_rows += long(day.stations.size());
  CHECK(count_lines(daily) == scored_rows + 1);

  CHECK(count_lines(slurp(dir / "sweep.csv")) == 3);
  const std::string weights = slurp(dir / "weights.csv");
  CHECK_THAT(weights,
             Catch::Matchers::StartsWith(
                 "date,w_control,w_exchangeable,W_control,W_exchangeable,"
                 "real_mixture"));

  std::filesystem::remove_all(dir);
}

TEST_CASE("the nominal level steers the central interval") {
  SynthSpec spec;
  spec.n_days = 120;
  spec.n_stations = 5;
  spec.seed = 21;
  const Dataset data = generate(spec);
  RunConfig cfg;
  cfg.nominal_level = 0.5;
  const auto rr = run_rolling(data, cfg);
  CHECK_THAT(rr.bma.coverage, Catch::Matchers::WithinAbs(0.5, 0.06));
}
