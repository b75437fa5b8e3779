#ifndef ENSBMA_DATASET_HPP
#define ENSBMA_DATASET_HPP

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ensbma/types.hpp"

namespace ensbma {

/// CSV dialect and load-time validation options. The value bounds are a
/// sanity guard against unit mistakes (degrees Celsius in a Kelvin column).
struct CsvOptions {
  char delimiter = ',';
  std::string missing_token = "NA";  // empty fields always count as missing
  double min_value = 150.0;          // Kelvin
  double max_value = 350.0;          // Kelvin
};

namespace detail {

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line,
                                                  char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::vector<std::string> csv_header(char delim) {
  std::vector<std::string> h{"date", "station", "obs"};
  for (int s = 0; s < kEnsembleMembers; ++s) h.push_back(slot_name(s));
  (void)delim;
  return h;
}

}  // namespace detail

/// Immutable-after-load collection of forecast cases keyed by
/// (date, station). Safe for concurrent reads.
class Dataset {
public:
  using Key = std::pair<Date, std::string>;

  void insert(ForecastCase c) {
    Key key{c.date, c.station_id};
    auto [it, inserted] = cases_.emplace(std::move(key), std::move(c));
    if (!inserted)
      throw DataError("duplicate (date, station) key: " +
                      it->first.first.to_string() + ", " + it->first.second);
    stations_.insert(it->second.station_id);
  }

  const std::map<Key, ForecastCase>& cases() const { return cases_; }
  const std::set<std::string>& stations() const { return stations_; }
  bool empty() const { return cases_.empty(); }
  std::size_t size() const { return cases_.size(); }

  Date start_date() const { return cases_.begin()->first.first; }
  Date end_date() const { return cases_.rbegin()->first.first; }

  const ForecastCase* find(Date d, const std::string& station) const {
    auto it = cases_.find({d, station});
    return it == cases_.end() ? nullptr : &it->second;
  }

  /// All cases for one calendar day, in station order.
  std::vector<const ForecastCase*> cases_on(Date d) const {
    std::vector<const ForecastCase*> out;
    for (auto it = cases_.lower_bound({d, std::string{}});
         it != cases_.end() && it->first.first == d; ++it)
      out.push_back(&it->second);
    return out;
  }

private:
  std::map<Key, ForecastCase> cases_;
  std::set<std::string> stations_;
};

/// Parse the CSV schema `date,station,obs,fc,f01,...,f10` (header required).
/// Missing values are empty fields or the configured missing token. Rows with
/// unparseable or out-of-range numerics are rejected with the line number.
inline Dataset load_dataset(std::istream& in, const CsvOptions& opts = {}) {
  Dataset data;
  std::string line;
  long line_no = 0;

  auto fail = [&](const std::string& what) -> void {
    throw DataError("line " + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line))
    throw DataError("empty input: missing header row");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto expected = detail::csv_header(opts.delimiter);
  const auto header = detail::split_fields(line, opts.delimiter);
  if (header.size() != expected.size())
    fail("header has " + std::to_string(header.size()) + " columns, expected " +
         std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (header[i] != expected[i])
      fail("header column " + std::to_string(i + 1) + " is '" +
           std::string(header[i]) + "', expected '" + expected[i] + "'");

  auto parse_value = [&](std::string_view field,
                         const char* col) -> std::optional<double> {
    if (field.empty() || field == opts.missing_token) return std::nullopt;
    double v{};
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
      fail(std::string("unparseable numeric in column ") + col + ": '" +
           std::string(field) + "'");
    if (!std::isfinite(v) || v < opts.min_value || v > opts.max_value)
      fail(std::string("value out of range in column ") + col + ": " +
           detail::format_double(v) + " not in [" +
           detail::format_double(opts.min_value) + ", " +
           detail::format_double(opts.max_value) + "]");
    return v;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const auto fields = detail::split_fields(line, opts.delimiter);
    if (fields.size() != expected.size())
      fail("row has " + std::to_string(fields.size()) + " columns, expected " +
           std::to_string(expected.size()));

    ForecastCase c;
    const auto date = Date::parse(fields[0]);
    if (!date) fail("bad date '" + std::string(fields[0]) + "'");
    c.date = *date;
    if (fields[1].empty()) fail("empty station id");
    c.station_id = std::string(fields[1]);
    c.observation = parse_value(fields[2], "obs");
    c.control = parse_value(fields[3], "fc");
    for (int s = 1; s <= kPerturbedMembers; ++s)
      c.perturbed[size_t(s - 1)] =
          parse_value(fields[size_t(3 + s)], slot_name(s).c_str());

    try {
      data.insert(std::move(c));
    } catch (const DataError& e) {
      fail(e.what());
    }
  }
  if (in.bad()) throw DataError("I/O failure while reading dataset");
  return data;
}

inline Dataset load_dataset(const std::filesystem::path& path,
                            const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return load_dataset(in, opts);
}

inline void write_dataset(const Dataset& data, std::ostream& out,
                          const CsvOptions& opts = {}) {
  const auto header = detail::csv_header(opts.delimiter);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out << opts.delimiter;
    out << header[i];
  }
  out << '\n';
  auto put = [&](const std::optional<double>& v) {
    out << opts.delimiter;
    if (v.has_value()) out << detail::format_double(*v);
  };
  for (const auto& [key, c] : data.cases()) {
    out << c.date.to_string() << opts.delimiter << c.station_id;
    put(c.observation);
    put(c.control);
    for (const auto& p : c.perturbed) put(p);
    out << '\n';
  }
}

inline void write_dataset(const Dataset& data, const std::filesystem::path& path,
                          const CsvOptions& opts = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_dataset(data, out, opts);
  out.flush();
  if (!out) throw DataError("I/O failure while writing " + path.string());
}

}  // namespace ensbma

#endif  // ENSBMA_DATASET_HPP
