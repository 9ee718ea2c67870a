#include <algorithm>
#include <cmath>

#include "cdrloc/error.hpp"
#include "cdrloc/odmatrix.hpp"
#include "cdrloc/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace cdrloc;

namespace {

const Matrix kSurvey{{44, 2, 1}, {10, 27, 1}, {4, 1, 10}};
const Matrix kCdrA{{52, 2, 2}, {12, 18, 1}, {5, 1, 7}};
const Matrix kCdrB{{44, 3, 2}, {8, 30, 1}, {1, 1, 10}};

RegionGrid districts() {
  return RegionGrid({{"Colombo", {6.8, 7.0, 79.8, 80.0}, true},
                     {"Gampaha", {7.0, 7.2, 79.8, 80.0}, true},
                     {"Kalutara", {6.6, 6.8, 79.8, 80.0}, true}});
}

}  // namespace

TEST_CASE("chi-squared statistic on the reference tables") {
  CHECK(chi_squared_statistic(kSurvey, kSurvey) == 0.0);
  // hand sums over the nine cells
  const double a = 64.0 / 44 + 0 + 1 + 4.0 / 10 + 81.0 / 27 + 0 + 1.0 / 4 + 0 + 9.0 / 10;
  const double b = 0 + 0.5 + 1 + 0.4 + 9.0 / 27 + 0 + 9.0 / 4 + 0 + 0;
  std::vector<double> contrib;
  CHECK(chi_squared_statistic(kCdrA, kSurvey, &contrib) == doctest::Approx(a).epsilon(1e-12));
  CHECK(a == doctest::Approx(7.00).epsilon(0.001));
  CHECK(chi_squared_statistic(kCdrB, kSurvey) == doctest::Approx(b).epsilon(1e-12));
  CHECK(b == doctest::Approx(4.48).epsilon(0.001));
  double sum = 0;
  for (double c : contrib) sum += c;
  CHECK(contrib.size() == 9);
  CHECK(sum == doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("chi-squared errors") {
  Matrix zero{{0, 1}, {1, 1}};
  try {
    chi_squared_statistic(zero, zero);
    FAIL("expected ZeroExpectedCell");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroExpectedCell);
  }
  try {
    chi_squared_statistic(kSurvey, Matrix{{1, 2}, {3, 4}});
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("p-values for the reference comparisons") {
  auto a = chi_squared_test(kCdrA, kSurvey, DfMode::Cells);
  CHECK(a.df == 9);
  CHECK(std::abs(a.p - 0.64) <= 0.01);
  auto b = chi_squared_test(kCdrB, kSurvey, DfMode::Cells);
  CHECK(std::abs(b.p - 0.88) <= 0.01);
  CHECK(chi_squared_test(kCdrA, kSurvey, DfMode::Contingency).df == 4);
  CHECK(chi_squared_p(0.0, 9) == 1.0);
}

TEST_CASE("p matches quadrature of the density") {
  for (int df = 1; df <= 12; ++df)
    for (double x = 0.5; x <= 20.0; x += 0.5)
      CHECK(std::abs(chi_squared_p(x, df) - testing::chi2_tail_quadrature(x, df)) < 1e-6);
  // closed forms: df=2 is exp(-x/2)
  for (double x : {0.1, 1.0, 7.0, 30.0}) CHECK(chi_squared_p(x, 2) == doctest::Approx(std::exp(-x / 2)).epsilon(1e-12));
}

TEST_CASE("p is strictly decreasing and tends to zero") {
  for (int df : {1, 4, 9, 20}) {
    double prev = chi_squared_p(0.0, df);
    for (double x = 0.25; x <= 60; x += 0.25) {
      const double p = chi_squared_p(x, df);
      CHECK(p < prev);
      CHECK(p >= 0.0);
      prev = p;
    }
    CHECK(chi_squared_p(500, df) < 1e-50);
  }
  CHECK(regularized_gamma_q(1.0, 2.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("statistic is zero exactly when matrices agree") {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    Matrix e(3, std::vector<double>(3));
    for (auto& row : e)
      for (auto& v : row) v = rng.uniform(0.5, 40);
    CHECK(chi_squared_statistic(e, e) == 0.0);
    Matrix o = e;
    o[rng.below(3)][rng.below(3)] += 0.01;
    CHECK(chi_squared_statistic(o, e) > 0.0);
  }
}

TEST_CASE("od matrix from anchors") {
  auto grid = districts();
  std::vector<UserAnchors> users;
  for (int i = 0; i < 100; ++i) users.push_back({"u" + std::to_string(i), LatLon{6.9, 79.9}, LatLon{6.9, 79.9}});
  auto od = build_od_matrix(users, grid);
  CHECK(od.total == 100);
  CHECK(od.percent()[0][0] == 100.0);

  // Build the reference layout from counts and read it back in percent.
  users.clear();
  const LatLon centre[3] = {{6.9, 79.9}, {7.1, 79.9}, {6.7, 79.9}};
  int n = 0;
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 3; ++w)
      for (int i = 0; i < kSurvey[h][w]; ++i) users.push_back({"u" + std::to_string(n++), centre[h], centre[w]});
  users.push_back({"nohome", std::nullopt, centre[0]});
  users.push_back({"outside", LatLon{9.0, 81.0}, centre[0]});
  od = build_od_matrix(users, grid);
  CHECK(od.total == 100);
  auto pct = od.percent();
  CHECK(pct[0][0] == 44);
  CHECK(pct[1][0] == 10);
  CHECK(pct[2][2] == 10);

  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    for (std::size_t i = users.size() - 1; i > 0; --i) std::swap(users[i], users[rng.below(i + 1)]);
    CHECK(build_od_matrix(users, grid).counts == od.counts);
  }

  testing::TempDir dir("od");
  od.save(dir.file("od.csv"));
  std::vector<std::string> names;
  auto back = load_percent_matrix(dir.file("od.csv"), &names);
  CHECK(names == std::vector<std::string>{"Colombo", "Gampaha", "Kalutara"});
  CHECK(back == pct);

  try {
    build_od_matrix({{"x", std::nullopt, std::nullopt}}, grid);
    FAIL("expected NoUsers");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoUsers);
  }
}

TEST_CASE("error percentiles") {
  std::vector<double> zeros(10, 0.0);
  std::vector<double> pcts{70, 80, 90};
  CHECK(error_percentiles(zeros, pcts) == std::vector<double>{0, 0, 0});
  std::vector<double> errs;
  for (int i = 1; i <= 100; ++i) errs.push_back(i * 10.0);
  CHECK(error_percentiles(errs, pcts) == std::vector<double>{700, 800, 900});
  // reference percentile curves are non-decreasing
  for (auto ref : {std::vector<double>{3651, 6439, 9647}, std::vector<double>{1865, 3231, 4673},
                   std::vector<double>{2164, 4172, 6428}, std::vector<double>{1399, 2834, 5267}})
    CHECK(std::is_sorted(ref.begin(), ref.end()));
  CHECK(1865.0 / 3651.0 <= 0.8);
}
