#include <algorithm>
#include <cmath>
#include <limits>

#include "cdrloc/error.hpp"
#include "cdrloc/loadshare.hpp"
#include "cdrloc/rng.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cdrloc;

namespace {

const LatLon kA{6.9271, 79.8612};
const LatLon kB{6.9271, 79.8712};

TowerRegistry pair_towers() { return TowerRegistry({{"a", kA, 10, "R0_0"}, {"b", kB, 10, "R0_0"}}); }

// Towers 1 km apart along a meridian.
TowerRegistry line_towers(int n) {
  std::vector<CellTower> t;
  for (int i = 0; i < n; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "t%03d", i);
    t.push_back({id, {6.80 + i * (1.0 / 111.195), 79.90}, 10, "R0_0"});
  }
  return TowerRegistry(std::move(t));
}

UserStream pair_stream(Timestamp t0, std::uint32_t from, std::uint32_t to, double dt_s) {
  return UserStream{"u", {testing::rec(t0, from), testing::rec(t0 + static_cast<Timestamp>(dt_s), to)}, {}, {}};
}

double f1_at(const std::vector<double>& speeds, const std::vector<bool>& truth, double theta) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < speeds.size(); ++i) {
    const bool flag = speeds[i] > theta;
    tp += flag && truth[i];
    fp += flag && !truth[i];
    fn += !flag && truth[i];
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

double harmonic(double p, double r) { return 2 * p * r / (p + r); }

}  // namespace

TEST_CASE("pairwise speed examples") {
  auto towers = pair_towers();
  CHECK(pairwise_speed(testing::rec(0, 0), testing::rec(500, 0), towers) == 0.0);
  CHECK(pairwise_speed(testing::rec(0, 0), testing::rec(0, 0), towers) == 0.0);
  const double km = haversine_km(kA, kB);
  CHECK(std::abs(km - 1.1038) < 1e-3);
  const double v = pairwise_speed(testing::rec(0, 0), testing::rec(60, 1), towers);
  CHECK(v == doctest::Approx(km * 60.0).epsilon(1e-12));
  CHECK(std::abs(v - 66.3) < 0.1);
  CHECK(pairwise_speed(testing::rec(0, 0), testing::rec(0, 1), towers) == kInfiniteSpeed);
  CHECK_THROWS_AS(pairwise_speed(testing::rec(0, 0), testing::rec(1, 7), towers), Error);
}

TEST_CASE("fixed threshold detection is strict") {
  auto towers = line_towers(3);
  UserStream still{"u", {testing::rec(0, 0), testing::rec(60, 0), testing::rec(120, 0)}, {}, {}};
  CHECK(detect_fixed(still, towers) == LoadShareFlags{0, 0, 0});

  const double km = pairwise_speed(testing::rec(0, 0), testing::rec(3600, 1), towers);
  // Δt picked so the jump runs at 150 km/h, then one at exactly 120.
  UserStream jump{"u", {testing::rec(0, 0), testing::rec(0, 0), testing::rec(0, 0)}, {}, {}};
  jump.records[1] = CdrRecord{1000, CellIndex{1}, 0};
  jump.records[2] = CdrRecord{5000, CellIndex{2}, 0};
  CHECK(pairwise_speed(jump.records[0], jump.records[1], towers) == doctest::Approx(km * 3.6));
  auto flags = detect_fixed(jump, towers, km * 3.6 - 1e-9);
  CHECK(flags == LoadShareFlags{0, 1, 0});
  CHECK(detect_fixed(jump, towers, km * 3.6 + 1e-9) == LoadShareFlags{0, 0, 0});

  // speed exactly equal to the threshold
  UserStream exact{"u", {testing::rec(0, 0), testing::rec(30, 1)}, {}, {}};
  const double v = pairwise_speed(exact.records[0], exact.records[1], towers);
  CHECK(detect_fixed(exact, towers, v) == LoadShareFlags{0, 0});
}

TEST_CASE("ground truth labels from gps") {
  auto towers = pair_towers();
  UserStream s{"u", {testing::rec(0, 0), testing::rec(600, 1), testing::rec(1200, 0), testing::rec(5000, 1)}, {}, {}};
  s.gps = {{0, kA}, {600, kA}, {1200, {kA.lat + 0.045, kA.lon}}};
  auto labels = label_ground_truth(s);
  REQUIRE(labels.size() == 4);
  CHECK(labels[0] == Label::Unknown);
  CHECK(labels[1] == Label::Positive);
  CHECK(labels[2] == Label::Negative);
  CHECK(labels[3] == Label::Unknown);

  UserStream same{"u", {testing::rec(0, 0), testing::rec(60, 0)}, {{0, kA}, {60, {kA.lat + 0.1, kA.lon}}}, {}};
  CHECK(label_ground_truth(same)[1] == Label::Negative);
  UserStream none{"u", {testing::rec(0, 0)}, {}, {}};
  CHECK_THROWS_AS(label_ground_truth(none), Error);
}

TEST_CASE("theta grid") {
  auto g = theta_grid();
  CHECK(g.size() == 41);
  CHECK(g.front() == 0);
  CHECK(g.back() == 200);
  CHECK(g[8] == 40);
}

TEST_CASE("calibration matches an exhaustive scan") {
  auto towers = line_towers(2);
  auto grid = RegionGrid::uniform({6.7, 7.0, 79.8, 80.0}, 1, 1);
  const Timestamp morning = testing::kMonday + 8 * 3600;

  auto run = [&](const std::vector<double>& pos, const std::vector<double>& neg) {
    std::vector<UserStream> streams;
    std::vector<std::vector<Label>> labels;
    std::vector<double> speeds;
    std::vector<bool> truth;
    const double km = haversine_km(towers[CellIndex{0}].pos, towers[CellIndex{1}].pos);
    for (int k = 0; k < 2; ++k) {
      for (double s : k == 0 ? pos : neg) {
        streams.push_back(pair_stream(morning, 0, 1, std::round(km / s * 3600.0)));
        labels.push_back({Label::Unknown, k == 0 ? Label::Positive : Label::Negative});
        speeds.push_back(pairwise_speed(streams.back().records[0], streams.back().records[1], towers));
        truth.push_back(k == 0);
      }
    }
    double best = -1, best_theta = -1;
    for (double theta : theta_grid()) {
      const double f = f1_at(speeds, truth, theta);
      if (f > best + 1e-12) best = f, best_theta = theta;
    }
    auto res = calibrate_speed_table(streams, labels, towers, grid);
    REQUIRE(res.keys.size() == 1);
    CHECK(res.keys[0].theta == best_theta);
    CHECK(res.keys[0].f1 == doctest::Approx(best));
    CHECK(res.table.threshold("R0_0", 0) == best_theta);
    return best_theta;
  };

  CHECK(run({45, 60, 80, 150}, {5, 20, 38, 39}) == 40);
  // negatives below 35 leave 35 as the smallest perfect threshold
  CHECK(run({45, 60, 80, 150}, {5, 20, 30, 34}) == 35);

  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> pos, neg;
    for (int i = 0; i < 20; ++i) (rng.bernoulli(0.4) ? pos : neg).push_back(rng.uniform(1, 250));
    if (pos.empty() || neg.empty()) continue;
    run(pos, neg);
  }
}

TEST_CASE("calibration defaults and degenerate keys") {
  auto towers = line_towers(2);
  auto grid = RegionGrid::uniform({6.7, 7.0, 79.8, 80.0}, 1, 1);
  const Timestamp morning = testing::kMonday + 8 * 3600;
  std::vector<UserStream> streams{pair_stream(morning, 0, 1, 60)};
  auto res = calibrate_speed_table(streams, {{Label::Unknown, Label::Negative}}, towers, grid);
  CHECK(res.table.threshold("R0_0", 0) == 200);
  CHECK(res.table.threshold("R0_0", 5) == 120);
  CHECK(res.table.threshold(std::nullopt, 0) == 120);
  try {
    calibrate_speed_table(streams, {{Label::Unknown, Label::Unknown}}, towers, grid);
    FAIL("expected NoLabeledData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoLabeledData);
  }
  CHECK(res.table.on_grid(theta_grid()));

  CalibrationOptions opt;
  opt.priors = {{"R0_0", 3, 42.0}};
  auto with_prior = calibrate_speed_table(streams, {{Label::Unknown, Label::Negative}}, towers, grid, opt);
  CHECK(with_prior.table.threshold("R0_0", 3) == 45);
}

TEST_CASE("adaptive detection uses the key's threshold") {
  std::vector<CellTower> t{{"a", {6.80, 79.90}, 10, "R0_0"},
                           {"b", {6.80 + 1 / 111.195, 79.90}, 10, "R0_0"},
                           {"x", {8.0, 79.90}, 10, ""}};
  TowerRegistry towers(t);
  auto grid = RegionGrid::uniform({6.7, 7.0, 79.8, 80.0}, 1, 1);
  const Timestamp morning = testing::kMonday + 8 * 3600;
  const double km = haversine_km(t[0].pos, t[1].pos);
  auto s = pair_stream(morning, 0, 1, km / 50.0 * 3600.0);
  const double v = pairwise_speed(s.records[0], s.records[1], towers);
  CHECK(v == doctest::Approx(50).epsilon(0.01));
  SpeedTable low, high;
  low.set("R0_0", 0, 40);
  high.set("R0_0", 0, 80);
  CHECK(detect_adaptive(s, low, towers, grid) == LoadShareFlags{0, 1});
  CHECK(detect_adaptive(s, high, towers, grid) == LoadShareFlags{0, 0});

  // outside every region: default 120 applies
  auto far = UserStream{"u", {testing::rec(morning, 2), testing::rec(morning + 60, 0)}, {}, {}};
  SpeedTable zero(120);
  zero.set("R0_0", 0, 0);
  AdaptiveDetector det(zero, towers, grid);
  CHECK(det.threshold_for(far.records[0]) == 120);
  CHECK(det.detect(far) == LoadShareFlags{0, 1});
}

TEST_CASE("speed table file round trip") {
  testing::TempDir dir("speed_table");
  SpeedTable t(120);
  t.set("R0_0", 0, 35);
  t.set("R1_2", 6, 200);
  t.save(dir.file("t.csv"));
  auto back = SpeedTable::load(dir.file("t.csv"));
  CHECK(back.entries() == t.entries());
  testing::write_file(dir.file("bad.csv"), "x,y\n");
  CHECK_THROWS_AS(SpeedTable::load(dir.file("bad.csv")), Error);
}

TEST_CASE("detection metrics") {
  auto m = detection_metrics(LoadShareFlags{1, 0, 1, 0}, {Label::Positive, Label::Negative, Label::Positive,
                                                          Label::Unknown});
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.counts.tn == 1);

  DetectionCounts base{914, 86, 4592, 0};
  auto b = detection_metrics(base);
  CHECK(b.precision == doctest::Approx(0.914).epsilon(1e-3));
  CHECK(b.recall == doctest::Approx(0.166).epsilon(1e-3));
  CHECK(b.f1 == doctest::Approx(0.281).epsilon(0.002));
  auto ours = detection_metrics(DetectionCounts{864, 136, 323, 0});
  CHECK(ours.precision == doctest::Approx(0.864).epsilon(1e-3));
  CHECK(ours.recall == doctest::Approx(0.728).epsilon(1e-3));
  CHECK(ours.f1 == doctest::Approx(0.790).epsilon(0.002));
  CHECK(ours.f1 == doctest::Approx(harmonic(ours.precision, ours.recall)).epsilon(1e-12));

  auto none = detection_metrics(LoadShareFlags{0, 0}, {Label::Negative, Label::Negative});
  CHECK(none.no_positives);
  CHECK(none.recall == 0.0);
  DetectionCounts c;
  CHECK_THROWS_AS(c.add(LoadShareFlags{0}, {}), Error);
}
