#ifndef ENSBMA_DATE_HPP
#define ENSBMA_DATE_HPP

#include <chrono>
#include <compare>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ensbma {

/// Calendar date at day resolution. Thin wrapper over std::chrono::sys_days
/// with ISO-8601 parsing/formatting and calendar-day arithmetic.
class Date {
public:
  Date() = default;
  explicit Date(std::chrono::sys_days d) : days_(d) {}

  static Date from_ymd(int year, unsigned month, unsigned day) {
    const std::chrono::year_month_day ymd{std::chrono::year{year},
                                          std::chrono::month{month},
                                          std::chrono::day{day}};
    if (!ymd.ok())
      throw std::invalid_argument("invalid calendar date");
    return Date{std::chrono::sys_days{ymd}};
  }

  /// Parse "YYYY-MM-DD". Returns nullopt on malformed or invalid dates.
  static std::optional<Date> parse(std::string_view iso) {
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-')
      return std::nullopt;
    int y = 0;
    unsigned m = 0, d = 0;
    if (std::sscanf(std::string(iso).c_str(), "%4d-%2u-%2u", &y, &m, &d) != 3)
      return std::nullopt;
    const std::chrono::year_month_day ymd{
        std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok())
      return std::nullopt;
    return Date{std::chrono::sys_days{ymd}};
  }

  std::string to_string() const {
    const std::chrono::year_month_day ymd{days_};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()));
    return buf;
  }

  Date& operator+=(int days) {
    days_ += std::chrono::days{days};
    return *this;
  }
  friend Date operator+(Date d, int days) { return d += days; }
  friend Date operator-(Date d, int days) { return d += -days; }

  /// Difference in calendar days.
  friend int operator-(Date a, Date b) {
    return int((a.days_ - b.days_).count());
  }

  auto operator<=>(const Date&) const = default;

  std::chrono::sys_days raw() const { return days_; }

private:
  std::chrono::sys_days days_{};
};

}  // namespace ensbma

#endif  // ENSBMA_DATE_HPP
