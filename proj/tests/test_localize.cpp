#include <algorithm>
#include <cmath>

#include "cdrloc/error.hpp"
#include "cdrloc/localize.hpp"
#include "cdrloc/rng.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cdrloc;

namespace {

constexpr double kKmPerDegLat = 111.195;

LatLon north_of(LatLon p, double km) { return {p.lat + km / kKmPerDegLat, p.lon}; }

CellStats stats(std::uint32_t cell, LatLon pos, double l, double inv_p, double days) {
  CellStats c;
  c.cell = CellIndex{cell};
  c.pos = pos;
  c.load_shared = l;
  c.inv_power = inv_p;
  c.days = days;
  c.records = 1;
  return c;
}

// Nights (22:00 local) on the given days at one cell.
void add_nights(UserStream& s, std::uint32_t cell, int first_day, int days, int per_night = 1) {
  for (int d = first_day; d < first_day + days; ++d)
    for (int i = 0; i < per_night; ++i)
      s.records.push_back(testing::rec(testing::kMonday + d * 86400 + 22 * 3600 + i * 60 + cell, cell));
  std::sort(s.records.begin(), s.records.end(), record_less);
}

}  // namespace

TEST_CASE("dbscan density rule counts record multiplicity") {
  const LatLon o{6.9, 79.9};
  std::vector<WeightedPoint> close{{o, 1}, {north_of(o, 0.1), 1}, {north_of(o, 0.2), 1}};
  auto r = dbscan_stay_clusters(close);
  CHECK(r.clusters == 1);
  CHECK(r.label == std::vector<int>{0, 0, 0});

  std::vector<WeightedPoint> apart{{o, 5}, {north_of(o, 50), 5}};
  r = dbscan_stay_clusters(apart);
  CHECK(r.clusters == 2);
  CHECK(r.label == std::vector<int>{0, 1});

  std::vector<WeightedPoint> lone{{o, 1}};
  CHECK(dbscan_stay_clusters(lone).label == std::vector<int>{kNoise});
  lone[0].weight = 3;
  CHECK(dbscan_stay_clusters(lone).clusters == 1);

  // border point joins a cluster but does not expand it
  std::vector<WeightedPoint> chain;
  for (double km : {-0.6, 0.0, 0.6, 1.5, 2.6}) chain.push_back({north_of(o, km), 1});
  r = dbscan_stay_clusters(chain);
  CHECK(r.label == std::vector<int>{0, 0, 0, 0, kNoise});
}

TEST_CASE("minmax scaling") {
  CHECK(minmax_scale(std::vector<double>{0, 5, 10}) == std::vector<double>{0, 0.5, 1});
  CHECK(minmax_scale(std::vector<double>{7, 7, 7}) == std::vector<double>{1, 1, 1});
  CHECK(minmax_scale(std::vector<double>{3}) == std::vector<double>{1});
}

TEST_CASE("cell weight arithmetic") {
  const LatLon o{6.9, 79.9};
  std::vector<CellStats> cells{stats(0, o, 0, 0, 0), stats(1, o, 5, 0.2, 3), stats(2, o, 10, 1, 10)};
  auto w = cell_weights(cells, {1, 1, 1});
  CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[0] == 0.0);
  CHECK(w[2] == 3.0);
  for (double x : cell_weights(cells, {0, 0, 0})) CHECK(x == 0.0);
  std::vector<CellStats> single{stats(0, o, 2, 0.5, 4)};
  CHECK(cell_weights(single, {0.2, 0.3, 0.4})[0] == doctest::Approx(0.9));
}

TEST_CASE("cell weights are invariant to rescaling a factor") {
  Rng rng(21);
  const LatLon o{6.9, 79.9};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CellStats> cells;
    const int n = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < n; ++i) cells.push_back(stats(i, o, rng.uniform(0, 20), rng.uniform(0, 1), rng.uniform(1, 14)));
    SegmentParams p{rng.uniform(), rng.uniform(), rng.uniform()};
    auto base = cell_weights(cells, p);
    const double a = rng.uniform(0.01, 100), b = rng.uniform(0.01, 100), c = rng.uniform(0.01, 100);
    for (auto& cell : cells) {
      cell.load_shared *= a;
      cell.inv_power *= b;
      cell.days *= c;
    }
    auto scaled = cell_weights(cells, p);
    for (int i = 0; i < n; ++i) CHECK(scaled[i] == doctest::Approx(base[i]).epsilon(1e-9));
  }
}

TEST_CASE("weighted k-means closed forms") {
  const LatLon a{6.90, 79.90}, b{6.94, 79.86};
  std::vector<LatLon> pts{a, b};
  auto mid = weighted_kmeanspp(pts, std::vector<double>{1, 1}, 1, 3);
  CHECK(mid.centroids[0].lat == doctest::Approx(6.92).epsilon(1e-12));
  CHECK(mid.centroids[0].lon == doctest::Approx(79.88).epsilon(1e-12));
  auto quarter = weighted_kmeanspp(pts, std::vector<double>{3, 1}, 1, 3);
  CHECK(std::abs(quarter.centroids[0].lat - (a.lat + 0.25 * (b.lat - a.lat))) < 1e-12);
  CHECK(std::abs(quarter.centroids[0].lon - (a.lon + 0.25 * (b.lon - a.lon))) < 1e-12);
  auto two = weighted_kmeanspp(pts, std::vector<double>{1, 1}, 2, 3);
  REQUIRE(two.centroids.size() == 2);
  CHECK(two.cost_history.back() == doctest::Approx(0.0));
  CHECK(two.assignment[0] != two.assignment[1]);

  try {
    weighted_kmeanspp(pts, std::vector<double>{0, 0}, 1, 3);
    FAIL("expected ZeroTotalWeight");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroTotalWeight);
  }
  CHECK_THROWS_AS(weighted_kmeanspp(std::vector<LatLon>{a, a}, std::vector<double>{1, 1}, 2, 3), Error);
}

TEST_CASE("k=1 centroid equals the weighted mean and stays in the bounding box") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    std::vector<LatLon> pts;
    std::vector<double> w;
    double sw = 0, slat = 0, slon = 0;
    for (int i = 0; i < n; ++i) {
      pts.push_back({rng.uniform(6.6, 7.0), rng.uniform(79.8, 80.2)});
      w.push_back(rng.uniform(0.01, 5));
      sw += w.back();
      slat += w.back() * pts.back().lat;
      slon += w.back() * pts.back().lon;
    }
    auto r = weighted_kmeanspp(pts, w, 1, trial);
    CHECK(std::abs(r.centroids[0].lat - slat / sw) < 1e-12);
    CHECK(std::abs(r.centroids[0].lon - slon / sw) < 1e-12);
    auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](auto& x, auto& y) { return x.lat < y.lat; });
    CHECK(r.centroids[0].lat >= lo->lat - 1e-12);
    CHECK(r.centroids[0].lat <= hi->lat + 1e-12);
  }
}

TEST_CASE("lloyd cost never increases") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LatLon> pts;
    std::vector<double> w;
    for (int i = 0; i < 60; ++i) {
      pts.push_back({rng.uniform(6.6, 7.0), rng.uniform(79.8, 80.2)});
      w.push_back(rng.uniform(0, 3));
    }
    auto r = weighted_kmeanspp(pts, w, 1 + rng.below(5), trial);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i)
      CHECK(r.cost_history[i] <= r.cost_history[i - 1] * (1 + 1e-12) + 1e-15);
  }
}

TEST_CASE("home anchors and the call-days baseline") {
  const LatLon a{6.90, 79.90};
  const LatLon b = north_of(a, 20);
  TowerRegistry towers({{"a", a, 100, ""}, {"b", b, 100, ""}});
  Calendar cal;
  UserStream s{"u", {}, {}, {}};
  add_nights(s, 0, 0, 10);
  LoadShareFlags flags(s.records.size(), 0);
  auto home = infer_anchor(s, flags, AnchorKind::Home, {1, 1, 1}, towers, cal);
  REQUIRE(home);
  CHECK(home->pos.lat == doctest::Approx(a.lat).epsilon(1e-12));
  CHECK(home->cluster_days == 10);
  CHECK_FALSE(infer_anchor(s, flags, AnchorKind::Work, {1, 1, 1}, towers, cal));
  CHECK_FALSE(calldays_anchor(s, AnchorKind::Work, towers, cal));

  add_nights(s, 1, 10, 2, 5);
  flags.assign(s.records.size(), 0);
  home = infer_anchor(s, flags, AnchorKind::Home, {1, 1, 1}, towers, cal);
  REQUIRE(home);
  CHECK(home->pos.lat == doctest::Approx(a.lat).epsilon(1e-12));
  CHECK(home->cluster_days == 10);
  auto cd = calldays_anchor(s, AnchorKind::Home, towers, cal);
  REQUIRE(cd);
  CHECK(cd->pos == a);
}

TEST_CASE("call-days ties break on records then cell order") {
  const LatLon a{6.90, 79.90};
  const LatLon b = north_of(a, 0.5);
  TowerRegistry towers({{"a", a, 100, ""}, {"b", b, 100, ""}});
  Calendar cal;
  UserStream s{"u", {}, {}, {}};
  add_nights(s, 0, 0, 5, 2);
  add_nights(s, 1, 0, 5, 4);
  CHECK(calldays_anchor(s, AnchorKind::Home, towers, cal)->pos == b);
  UserStream even{"u", {}, {}, {}};
  add_nights(even, 0, 0, 5);
  add_nights(even, 1, 0, 5);
  CHECK(calldays_anchor(even, AnchorKind::Home, towers, cal)->pos == a);
  UserStream week{"u", {}, {}, {}};
  add_nights(week, 0, 0, 7);
  add_nights(week, 1, 7, 3);
  CHECK(calldays_anchor(week, AnchorKind::Home, towers, cal)->pos == a);
}

TEST_CASE("work hours exclude weekends and holidays") {
  const LatLon a{6.90, 79.90};
  TowerRegistry towers({{"a", a, 100, ""}});
  UserStream s{"u", {}, {}, {}};
  for (int d = 0; d < 7; ++d) s.records.push_back(testing::rec(testing::kMonday + d * 86400 + 11 * 3600, 0));
  CHECK(restrict_records(s, AnchorKind::Work, Calendar()).size() == 5);
  CHECK(restrict_records(s, AnchorKind::Work, Calendar(0, {19723})).size() == 4);
  CHECK(restrict_records(s, AnchorKind::Home, Calendar()).empty());
  // 11:00 UTC is 16:30 at +05:30, outside work hours
  CHECK(restrict_records(s, AnchorKind::Work, Calendar(330, {})).empty());
}

TEST_CASE("cluster selection order") {
  StayCluster x, y;
  x.active_days = 5;
  x.records = 10;
  x.centroid = {6.9, 79.9};
  y = x;
  y.centroid = {6.8, 79.9};
  CHECK(select_stay_cluster({x, y})->centroid == y.centroid);
  y.records = 9;
  CHECK(select_stay_cluster({x, y})->centroid == x.centroid);
  y.active_days = 6;
  CHECK(select_stay_cluster({x, y})->centroid == y.centroid);
  CHECK_FALSE(select_stay_cluster({}));
}

TEST_CASE("parameter fit tie rule and box") {
  StayCluster c;
  c.members = {stats(0, {6.9, 79.9}, 0, 0.01, 3)};
  FitSample sample{c, north_of({6.9, 79.9}, 0.3), 1};
  auto r = fit_segment_params({sample});
  CHECK(r.params == SegmentParams{0, 0, 0.1});
  CHECK(r.params.in_unit_box());
  CHECK(r.median_error_m == doctest::Approx(300).epsilon(1e-3));
  try {
    fit_segment_params({});
    FAIL("expected NoLabeledUsers");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoLabeledUsers);
  }
}

TEST_CASE("fit finds the informative factor") {
  // L is zero and P constant everywhere; the true home is the most-visited
  // tower, so only C carries signal.
  Rng rng(51);
  std::vector<FitSample> samples;
  for (int u = 0; u < 15; ++u) {
    StayCluster c;
    const LatLon base{rng.uniform(6.7, 6.9), rng.uniform(79.85, 80.1)};
    const int n = 3 + static_cast<int>(rng.below(3));
    LatLon truth;
    for (int i = 0; i < n; ++i) {
      const LatLon p = north_of(base, 0.3 * i);
      const double days = i == 0 ? 14 : rng.uniform(1, 4);
      c.members.push_back(stats(i, p, 0, 0.01, days));
      if (i == 0) truth = p;
    }
    samples.push_back({c, truth, static_cast<std::uint64_t>(u)});
  }
  auto r = fit_segment_params(samples);
  CHECK(r.params.alpha == 0.0);
  CHECK(r.params.beta == 0.0);
  CHECK(r.params.gamma > 0.0);
  std::vector<double> errs;
  for (const auto& s : samples)
    errs.push_back(1000 * haversine_km(weighted_anchor(s.cluster, {0, 0, 1}, s.seed), s.truth));
  CHECK(r.median_error_m == doctest::Approx(median(errs)).epsilon(1e-9));

  auto again = fit_segment_params(samples, 0.1, DistanceMode::Haversine, 3);
  CHECK(again.params == r.params);
  CHECK(again.median_error_m == r.median_error_m);
}

TEST_CASE("gps anchor is the median of fixes in the kind's hours") {
  std::vector<GpsFix> fixes;
  for (int d = 0; d < 5; ++d) {
    fixes.push_back({testing::kMonday + d * 86400 + 23 * 3600, {6.90 + d * 1e-4, 79.90}});
    fixes.push_back({testing::kMonday + d * 86400 + 11 * 3600, {6.95, 79.85}});
  }
  auto home = gps_anchor(fixes, AnchorKind::Home, Calendar());
  REQUIRE(home);
  CHECK(home->lat == doctest::Approx(6.9002));
  auto work = gps_anchor(fixes, AnchorKind::Work, Calendar());
  REQUIRE(work);
  CHECK(work->lon == doctest::Approx(79.85));
  CHECK_FALSE(gps_anchor({}, AnchorKind::Home, Calendar()));
}
