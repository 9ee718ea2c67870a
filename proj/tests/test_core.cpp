#include <algorithm>
#include <cmath>
#include <numbers>

#include "cdrloc/error.hpp"
#include "cdrloc/geo.hpp"
#include "cdrloc/model.hpp"
#include "cdrloc/region.hpp"
#include "cdrloc/rng.hpp"
#include "cdrloc/timeutil.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cdrloc;

namespace {

// Spherical law of cosines; independent of the haversine form.
double cosine_law_km(LatLon a, LatLon b) {
  const double d = std::numbers::pi / 180.0;
  const double c = std::sin(a.lat * d) * std::sin(b.lat * d) +
                   std::cos(a.lat * d) * std::cos(b.lat * d) * std::cos((b.lon - a.lon) * d);
  return kEarthRadiusKm * std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace

TEST_CASE("haversine agrees with the law of cosines") {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    LatLon a{rng.uniform(-80, 80), rng.uniform(-179, 179)};
    LatLon b{rng.uniform(-80, 80), rng.uniform(-179, 179)};
    CHECK(haversine_km(a, b) == doctest::Approx(cosine_law_km(a, b)).epsilon(1e-9));
  }
  CHECK(haversine_km({6.9, 79.9}, {6.9, 79.9}) == 0.0);
  const LatLon colombo{6.9271, 79.8612};
  const LatLon east{6.9271, 79.8712};
  CHECK(haversine_km(colombo, colombo) == 0.0);
  // acos is poorly conditioned near 1, hence the looser tolerance at this range
  CHECK(haversine_km(colombo, east) == doctest::Approx(cosine_law_km(colombo, east)).epsilon(1e-6));
  CHECK(std::abs(haversine_km(colombo, east) - 1.1038) < 1e-3);
  CHECK(std::abs(haversine_km({0, 0}, {0, 1}) - kEarthRadiusKm * std::numbers::pi / 180.0) < 1e-9);
  CHECK(std::abs(haversine_km({0, 0}, {0, 1}) - 111.195) < 0.01);
}

TEST_CASE("planar distance stays close to haversine at city scale") {
  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    LatLon a{rng.uniform(6.6, 7.0), rng.uniform(79.8, 80.2)};
    LatLon b{a.lat + rng.uniform(-0.05, 0.05), a.lon + rng.uniform(-0.05, 0.05)};
    const double h = haversine_km(a, b);
    CHECK(std::abs(planar_km(a, b) - h) <= 1e-3 * h + 1e-12);
  }
  CHECK(parse_distance_mode("planar") == DistanceMode::Planar);
  CHECK(parse_distance_mode("haversine") == DistanceMode::Haversine);
  CHECK_FALSE(parse_distance_mode("manhattan"));
}

TEST_CASE("coordinate validity") {
  CHECK(valid_coordinates({0, 0}));
  CHECK(valid_coordinates({90, 180}));
  CHECK_FALSE(valid_coordinates({90.5, 0}));
  CHECK_FALSE(valid_coordinates({0, -180.5}));
  CHECK_FALSE(valid_coordinates({std::nan(""), 0}));
}

TEST_CASE("iso8601 parsing and formatting") {
  CHECK(parse_iso8601("2024-01-01T00:00:00Z") == testing::kMonday);
  CHECK(parse_iso8601("2024-01-01 00:00:00") == testing::kMonday);
  CHECK(parse_iso8601("2024-01-01T05:30:00+05:30") == testing::kMonday);
  CHECK(parse_iso8601("2023-12-31T23:00:00-01:00") == testing::kMonday);
  CHECK_FALSE(parse_iso8601("2024-02-30T00:00:00Z"));
  CHECK_FALSE(parse_iso8601("2024-01-01T24:00:00Z"));
  CHECK_FALSE(parse_iso8601("yesterday"));
  CHECK(format_iso8601(testing::kMonday + 3661) == "2024-01-01T01:01:01Z");
  for (Timestamp t : {0LL, 951782400LL, 1709164800LL, 4102444799LL})
    CHECK(parse_iso8601(format_iso8601(t)) == t);
  CHECK(parse_date("2024-02-29") == 19782);
  CHECK_FALSE(parse_date("2023-02-29"));
  CHECK(format_date(19723) == "2024-01-01");
}

TEST_CASE("local clock and calendar") {
  LocalClock utc;
  CHECK(utc.iso_weekday(testing::kMonday) == 1);
  CHECK(utc.iso_weekday(testing::kMonday + 6 * 86400) == 7);
  LocalClock colombo(330);
  // 19:00 UTC Monday is 00:30 Tuesday at +05:30.
  const Timestamp t = testing::kMonday + 19 * 3600;
  CHECK(colombo.minute_of_day(t) == 30);
  CHECK(colombo.iso_weekday(t) == 2);
  CHECK(colombo.day(t) == 19724);
  CHECK(colombo.local_midnight(19724) == testing::kMonday + 86400 - 330 * 60);
  LocalClock west(-300);
  CHECK(west.day(testing::kMonday) == 19722);
  Calendar cal(0, {19723});
  CHECK_FALSE(cal.is_workday(testing::kMonday));
  CHECK(cal.is_workday(testing::kMonday + 86400));
  CHECK_FALSE(cal.is_workday(testing::kMonday + 5 * 86400));
}

TEST_CASE("time windows are half-open and cover the day") {
  CHECK(window_of_minute(7 * 60 - 1) == 6);
  CHECK(window_of_minute(7 * 60) == 0);
  CHECK(window_of_minute(9 * 60) == 1);
  CHECK(window_of_minute(12 * 60) == 2);
  CHECK(window_of_minute(13 * 60) == 3);
  CHECK(window_of_minute(16 * 60 + 29) == 3);
  CHECK(window_of_minute(16 * 60 + 30) == 4);
  CHECK(window_of_minute(19 * 60) == 5);
  CHECK(window_of_minute(22 * 60) == 6);
  CHECK(window_of_minute(0) == 6);
  int counts[kWindowCount] = {};
  for (int m = 0; m < kMinutesPerDay; ++m) ++counts[window_of_minute(m)];
  int total = 0;
  for (int c : counts) {
    CHECK(c > 0);
    total += c;
  }
  CHECK(total == kMinutesPerDay);
  CHECK(window_of(testing::kMonday + 8 * 3600, 0) == 0);
  CHECK(window_of(testing::kMonday + 8 * 3600, 330) == 3);
}

TEST_CASE("region grid lookup and validation") {
  const Rect area{0, 1, 0, 1};
  auto grid = RegionGrid::uniform(area, 2, 2);
  REQUIRE(grid.size() == 4);
  CHECK(grid.region_of({0.25, 0.25}) == std::string_view("R0_0"));
  CHECK(grid.region_of({0.75, 0.75}) == std::string_view("R1_1"));
  // shared edge goes to the earlier region
  CHECK(grid.region_of({0.5, 0.5}) == std::string_view("R0_0"));
  CHECK_FALSE(grid.region_of({1.5, 0.5}));
  CHECK(grid.find("R1_0") == 2u);

  CHECK_THROWS_AS(RegionGrid({{"a", {0, 1, 0, 1}, true}, {"b", {0.5, 1.5, 0.5, 1.5}, true}}), Error);
  CHECK_THROWS_AS(RegionGrid({{"a", {1, 0, 0, 1}, true}}), Error);
  CHECK_THROWS_AS(RegionGrid({{"a", {0, 1, 0, 1}, true}, {"a", {2, 3, 0, 1}, true}}), Error);

  RegionGrid partial({{"in", {0, 1, 0, 1}, true}, {"out", {1, 2, 0, 1}, false}});
  CHECK(partial.in_study_area({0.5, 0.5}));
  CHECK_FALSE(partial.in_study_area({1.5, 0.5}));
}

TEST_CASE("tower registry") {
  TowerRegistry reg({{"b", {0, 0}, 10, ""}, {"a", {1, 1}, 20, ""}});
  CHECK(reg.size() == 2);
  CHECK(reg.find("a")->value == 0);
  CHECK(reg[CellIndex{1}].cell_id == "b");
  CHECK_FALSE(reg.find("z"));
  try {
    TowerRegistry({{"a", {0, 0}, 1, ""}, {"a", {1, 1}, 2, ""}});
    FAIL("expected DuplicateKey");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DuplicateKey);
  }
  try {
    TowerRegistry({{"a", {0, 0}, 0, ""}});
    FAIL("expected NonPositivePower");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositivePower);
  }
}

TEST_CASE("segments round trip through names") {
  for (auto s : kAllSegments) CHECK(parse_segment(to_string(s)) == s);
  CHECK_FALSE(parse_segment("astronaut"));
}

TEST_CASE("error carries code, line and detail") {
  Error e(ErrorCode::RowParseError, "bad duration", 7);
  CHECK(e.code() == ErrorCode::RowParseError);
  CHECK(e.line() == 7);
  CHECK(e.detail() == "bad duration");
  CHECK(std::string(e.what()).find("line 7") != std::string::npos);
}

TEST_CASE("rng streams are reproducible and unbiased") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
  Rng r(99);
  double sum = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += r.poisson(3.5);
  CHECK(sum / n == doctest::Approx(3.5).epsilon(0.01));
  double u = 0;
  for (int i = 0; i < n; ++i) u += r.uniform();
  CHECK(u / n == doctest::Approx(0.5).epsilon(0.01));
}
