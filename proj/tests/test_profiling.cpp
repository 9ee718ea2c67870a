#include <cmath>

#include "cdrloc/error.hpp"
#include "cdrloc/geo.hpp"
#include "cdrloc/profiling.hpp"
#include "cdrloc/rng.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cdrloc;

namespace {

TowerRegistry two_towers() {
  return TowerRegistry({{"a", {6.9271, 79.8612}, 10, ""}, {"b", {6.9271, 79.8712}, 10, ""}});
}

FeatureVector point(double a, double b) {
  FeatureVector x{};
  x[0] = a;
  x[1] = b;
  return x;
}

}  // namespace

TEST_CASE("features of a single-hour single-cell stream") {
  auto towers = two_towers();
  UserStream s{"u", {}, {}, {}};
  for (int d = 0; d < 5; ++d) s.records.push_back(testing::rec(testing::kMonday + d * 86400 + 9 * 3600 + d * 60, 0));
  auto f = extract_features(s, towers, LocalClock(0));
  CHECK(f[kHourlyFreqOffset + 9] == 1.0);
  for (int h = 0; h < 24; ++h) CHECK(f[kHourlyDistanceOffset + h] == 0.0);
  CHECK(f[kDistinctCellRatio] == doctest::Approx(1.0 / 5));
  CHECK(f[kWeekendFraction] == 0.0);
}

TEST_CASE("hourly distance for alternating cells") {
  auto towers = two_towers();
  const double d = haversine_km(towers[CellIndex{0}].pos, towers[CellIndex{1}].pos);
  UserStream s{"u", {}, {}, {}};
  for (int h = 0; h < 10; ++h) s.records.push_back(testing::rec(testing::kMonday + 5 * 86400 + h * 3600, h % 2));
  auto f = extract_features(s, towers, LocalClock(0));
  for (int h = 0; h < 9; ++h) CHECK(f[kHourlyDistanceOffset + h] == doctest::Approx(d).epsilon(1e-12));
  CHECK(std::abs(d - 1.1038) < 1e-3);
  CHECK(f[kWeekendFraction] == 1.0);
  double sum = 0;
  for (int h = 0; h < 24; ++h) sum += f[kHourlyFreqOffset + h];
  CHECK(sum == doctest::Approx(1.0));
  CHECK_THROWS_AS(extract_features(UserStream{"e", {}, {}, {}}, towers, LocalClock(0)), Error);
}

TEST_CASE("separable toy set is learned exactly and deterministically") {
  std::vector<FeatureVector> x;
  std::vector<UserSegment> y;
  Rng rng(3);
  for (int i = 0; i < 60; ++i) {
    const bool pos = i % 2 == 0;
    x.push_back(point(pos ? rng.uniform(2, 3) : rng.uniform(-3, -2), rng.uniform(-1, 1)));
    y.push_back(pos ? UserSegment::Student : UserSegment::Retired);
  }
  TrainOptions opt;
  opt.seed = 9;
  auto m1 = train_segment_classifier(x, y, opt);
  auto m2 = train_segment_classifier(x, y, opt);
  CHECK(m1.weights == m2.weights);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(predict_segment(m1, x[i]) == y[i]);

  auto back = SegmentClassifier::deserialize(m1.serialize());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.scores(x[i]) == m1.scores(x[i]));
  CHECK_THROWS_AS(SegmentClassifier::deserialize("garbage"), Error);
}

TEST_CASE("training rejects single-class and mismatched input") {
  std::vector<FeatureVector> x{point(0, 0), point(1, 1)};
  try {
    train_segment_classifier(x, {UserSegment::Other, UserSegment::Other});
    FAIL("expected SingleClassData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingleClassData);
  }
  try {
    train_segment_classifier(x, {UserSegment::Other});
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("class weighting recovers the minority class") {
  // 90 majority points around -1, 10 minority points around +0.6 with a few
  // majority points mixed in; the unweighted fit sacrifices the minority.
  std::vector<FeatureVector> x;
  std::vector<UserSegment> y;
  Rng rng(17);
  for (int i = 0; i < 90; ++i) {
    x.push_back(point(i < 80 ? rng.uniform(-2, 0) : rng.uniform(0.2, 1.0), rng.uniform(-1, 1)));
    y.push_back(UserSegment::FullTime);
  }
  for (int i = 0; i < 10; ++i) {
    x.push_back(point(rng.uniform(0.2, 1.0), rng.uniform(-1, 1)));
    y.push_back(UserSegment::Housewife);
  }
  auto recall_of = [&](bool weighted) {
    TrainOptions opt;
    opt.class_weighting = weighted;
    auto m = train_segment_classifier(x, y, opt);
    int hit = 0;
    for (std::size_t i = 90; i < x.size(); ++i) hit += predict_segment(m, x[i]) == UserSegment::Housewife;
    return hit / 10.0;
  };
  CHECK(recall_of(true) == 1.0);
  CHECK(recall_of(false) < 1.0);
}

TEST_CASE("prediction tie goes to the first segment") {
  SegmentClassifier m;
  m.scale.fill(1.0);
  CHECK(predict_segment(m, FeatureVector{}) == UserSegment::FullTime);
  std::vector<double> short_x(3, 0.0);
  CHECK_THROWS_AS(predict_segment(m, short_x), Error);
}

TEST_CASE("classification report definitions") {
  using S = UserSegment;
  std::vector<S> t{S::FullTime, S::Student, S::Student, S::Other};
  auto perfect = classification_report(t, t);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.per_class[0].f1 == 1.0);

  std::vector<S> a{S::FullTime, S::Student, S::FullTime, S::Student};
  std::vector<S> b{S::Student, S::FullTime, S::Student, S::FullTime};
  auto wrong = classification_report(a, b);
  CHECK(wrong.macro_f1 == 0.0);
  CHECK(wrong.per_class[0].precision == 0.0);
  CHECK(wrong.per_class[0].recall == 0.0);

  CHECK(f1_score(0.71, 0.66) == doctest::Approx(0.684).epsilon(0.001));
  CHECK(f1_score(0, 0) == 0.0);

  Rng rng(5);
  std::vector<S> p, q;
  for (int i = 0; i < 500; ++i) {
    p.push_back(kAllSegments[rng.below(6)]);
    q.push_back(rng.bernoulli(0.6) ? p.back() : kAllSegments[rng.below(6)]);
  }
  auto r = classification_report(p, q);
  for (const auto& c : r.per_class) CHECK(c.f1 == doctest::Approx(f1_score(c.precision, c.recall)).epsilon(1e-12));
  CHECK(classification_report_header().rfind("model,", 0) == 0);
}
