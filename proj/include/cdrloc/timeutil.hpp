#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>

namespace cdrloc {

/// UTC seconds since the Unix epoch.
using Timestamp = std::int64_t;

inline constexpr int kMinutesPerDay = 1440;
inline constexpr int kWindowCount = 7;

/// Accepts `YYYY-MM-DDTHH:MM:SS` followed by `Z`, `+HH:MM`, `-HH:MM` or
/// nothing (treated as UTC). A space may replace the `T`.
std::optional<Timestamp> parse_iso8601(std::string_view text);

/// Always emits `YYYY-MM-DDTHH:MM:SSZ`.
std::string format_iso8601(Timestamp ts);

/// Days since 1970-01-01 for a civil date; nullopt for invalid dates.
std::optional<std::int64_t> parse_date(std::string_view yyyy_mm_dd);
std::string format_date(std::int64_t day);

/// A fixed-offset local clock. All hour ranges are half-open [start, end).
class LocalClock {
 public:
  explicit LocalClock(int tz_offset_minutes = 0) : offset_s_(std::int64_t{tz_offset_minutes} * 60) {}

  int tz_offset_minutes() const { return static_cast<int>(offset_s_ / 60); }
  int minute_of_day(Timestamp ts) const;
  int hour(Timestamp ts) const { return minute_of_day(ts) / 60; }
  /// Local calendar day index (days since 1970-01-01 in local time).
  std::int64_t day(Timestamp ts) const;
  /// ISO weekday of the local date: 1 = Monday ... 7 = Sunday.
  int iso_weekday(Timestamp ts) const;
  bool is_weekend(Timestamp ts) const { return iso_weekday(ts) >= 6; }
  /// UTC timestamp of local midnight starting `day`.
  Timestamp local_midnight(std::int64_t day) const { return day * 86400 - offset_s_; }

 private:
  std::int64_t offset_s_;
};

int iso_weekday_of_day(std::int64_t day);

struct TimeWindow {
  int id;
  int start_minute;
  int end_minute;  // may be < start_minute when the window wraps midnight
};

/// 07-09, 09-12, 12-13, 13-16:30, 16:30-19, 19-22, 22-07.
const std::array<TimeWindow, kWindowCount>& canonical_windows();

int window_of_minute(int minute_of_day);
int window_of(Timestamp ts, int tz_offset_minutes);

/// Local clock plus a set of non-working local days.
class Calendar {
 public:
  Calendar() = default;
  Calendar(int tz_offset_minutes, std::set<std::int64_t> holidays)
      : clock_(tz_offset_minutes), holidays_(std::move(holidays)) {}

  const LocalClock& clock() const { return clock_; }
  const std::set<std::int64_t>& holidays() const { return holidays_; }
  bool is_holiday(std::int64_t day) const { return holidays_.count(day) != 0; }
  bool is_workday(Timestamp ts) const {
    return !clock_.is_weekend(ts) && !is_holiday(clock_.day(ts));
  }

 private:
  LocalClock clock_{0};
  std::set<std::int64_t> holidays_;
};

}  // namespace cdrloc
