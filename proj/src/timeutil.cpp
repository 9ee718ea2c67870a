#include "cdrloc/timeutil.hpp"

#include <chrono>
#include <cstdio>

namespace cdrloc {

namespace {

using std::chrono::day;
using std::chrono::month;
using std::chrono::sys_days;
using std::chrono::year;
using std::chrono::year_month_day;

bool read_digits(std::string_view s, std::size_t pos, std::size_t count, int& out) {
  if (pos + count > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + count; ++i) {
    const char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

std::optional<std::int64_t> days_from_civil(int y, int m, int d) {
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd}.time_since_epoch().count();
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

std::optional<std::int64_t> parse_date(std::string_view s) {
  int y = 0, m = 0, d = 0;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!read_digits(s, 0, 4, y) || !read_digits(s, 5, 2, m) || !read_digits(s, 8, 2, d)) return std::nullopt;
  return days_from_civil(y, m, d);
}

std::string format_date(std::int64_t d) {
  const year_month_day ymd{sys_days{std::chrono::days{d}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::optional<Timestamp> parse_iso8601(std::string_view s) {
  if (s.size() < 19) return std::nullopt;
  const auto date = parse_date(s.substr(0, 10));
  if (!date) return std::nullopt;
  if (s[10] != 'T' && s[10] != ' ') return std::nullopt;
  int hh = 0, mm = 0, ss = 0;
  if (!read_digits(s, 11, 2, hh) || s[13] != ':' || !read_digits(s, 14, 2, mm) || s[16] != ':' ||
      !read_digits(s, 17, 2, ss)) {
    return std::nullopt;
  }
  if (hh > 23 || mm > 59 || ss > 59) return std::nullopt;
  std::int64_t offset_s = 0;
  const std::string_view rest = s.substr(19);
  if (rest.empty() || rest == "Z") {
    offset_s = 0;
  } else if (rest.size() == 6 && (rest[0] == '+' || rest[0] == '-') && rest[3] == ':') {
    int oh = 0, om = 0;
    if (!read_digits(rest, 1, 2, oh) || !read_digits(rest, 4, 2, om) || oh > 23 || om > 59) {
      return std::nullopt;
    }
    offset_s = (oh * 3600 + om * 60) * (rest[0] == '-' ? -1 : 1);
  } else {
    return std::nullopt;
  }
  return *date * 86400 + hh * 3600 + mm * 60 + ss - offset_s;
}

std::string format_iso8601(Timestamp ts) {
  const std::int64_t d = floor_div(ts, 86400);
  const std::int64_t sec = ts - d * 86400;
  char buf[32];
  const std::string date = format_date(d);
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", date.c_str(), static_cast<int>(sec / 3600),
                static_cast<int>((sec / 60) % 60), static_cast<int>(sec % 60));
  return buf;
}

int LocalClock::minute_of_day(Timestamp ts) const {
  const std::int64_t local = ts + offset_s_;
  const std::int64_t sec = local - floor_div(local, 86400) * 86400;
  return static_cast<int>(sec / 60);
}

std::int64_t LocalClock::day(Timestamp ts) const { return floor_div(ts + offset_s_, 86400); }

int iso_weekday_of_day(std::int64_t d) {
  return static_cast<int>(std::chrono::weekday{sys_days{std::chrono::days{d}}}.iso_encoding());
}

int LocalClock::iso_weekday(Timestamp ts) const { return iso_weekday_of_day(day(ts)); }

const std::array<TimeWindow, kWindowCount>& canonical_windows() {
  static const std::array<TimeWindow, kWindowCount> windows{{
      {0, 7 * 60, 9 * 60},
      {1, 9 * 60, 12 * 60},
      {2, 12 * 60, 13 * 60},
      {3, 13 * 60, 16 * 60 + 30},
      {4, 16 * 60 + 30, 19 * 60},
      {5, 19 * 60, 22 * 60},
      {6, 22 * 60, 7 * 60},
  }};
  return windows;
}

int window_of_minute(int m) {
  if (m < 7 * 60 || m >= 22 * 60) return 6;
  if (m < 9 * 60) return 0;
  if (m < 12 * 60) return 1;
  if (m < 13 * 60) return 2;
  if (m < 16 * 60 + 30) return 3;
  if (m < 19 * 60) return 4;
  return 5;
}

int window_of(Timestamp ts, int tz_offset_minutes) {
  return window_of_minute(LocalClock(tz_offset_minutes).minute_of_day(ts));
}

}  // namespace cdrloc
