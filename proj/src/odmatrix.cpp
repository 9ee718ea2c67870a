#include "cdrloc/odmatrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cdrloc/csv.hpp"
#include "cdrloc/entropy.hpp"
#include "cdrloc/error.hpp"

namespace cdrloc {

Matrix OdMatrix::percent() const {
  Matrix out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out[i].resize(counts[i].size(), 0.0);
    if (total == 0) continue;
    for (std::size_t j = 0; j < counts[i].size(); ++j) {
      out[i][j] = 100.0 * static_cast<double>(counts[i][j]) / static_cast<double>(total);
    }
  }
  return out;
}

void OdMatrix::save(const std::string& path, int decimals) const {
  std::string header = "home\\work";
  for (const auto& d : districts) header += "," + d;
  csv::Writer w(path, header);
  const Matrix pct = percent();
  for (std::size_t i = 0; i < districts.size(); ++i) {
    std::string row = districts[i];
    for (double v : pct[i]) row += "," + csv::fixed(v, decimals);
    w.row(row);
  }
  w.close();
}

Matrix load_percent_matrix(const std::string& path, std::vector<std::string>* districts) {
  csv::LineReader reader(path);
  std::string_view line;
  if (!reader.next(line)) throw Error(ErrorCode::MalformedHeader, path + " is empty", 1);
  std::vector<std::string_view> f;
  csv::split(line, ',', f);
  if (f.size() < 2) throw Error(ErrorCode::MalformedHeader, path, 1);
  std::vector<std::string> names(f.begin() + 1, f.end());
  Matrix m;
  while (reader.next(line)) {
    if (csv::trim(line).empty()) continue;
    csv::split(line, ',', f);
    if (f.size() != names.size() + 1 || f[0] != names[m.size() < names.size() ? m.size() : 0]) {
      throw Error(ErrorCode::RowParseError, "row does not match the column districts", reader.line_number());
    }
    std::vector<double> row;
    for (std::size_t j = 1; j < f.size(); ++j) {
      std::string_view cell = f[j];
      if (!cell.empty() && cell.back() == '%') cell.remove_suffix(1);
      const auto v = csv::parse_double(cell);
      if (!v) throw Error(ErrorCode::RowParseError, "bad cell value", reader.line_number());
      row.push_back(*v);
    }
    m.push_back(std::move(row));
  }
  if (m.size() != names.size()) throw Error(ErrorCode::RowParseError, path + " is not square");
  if (districts != nullptr) *districts = std::move(names);
  return m;
}

OdMatrix build_od_matrix(const std::vector<UserAnchors>& users, const RegionGrid& districts) {
  OdMatrix od;
  for (const Region& r : districts.regions()) od.districts.push_back(r.id);
  const std::size_t n = od.districts.size();
  od.counts.assign(n, std::vector<std::size_t>(n, 0));
  for (const UserAnchors& u : users) {
    if (!u.home || !u.work) continue;
    const auto h = districts.index_of(*u.home);
    const auto w = districts.index_of(*u.work);
    if (!h || !w) continue;
    ++od.counts[*h][*w];
    ++od.total;
  }
  if (od.total == 0) throw Error(ErrorCode::NoUsers, "no user has both anchors inside the districts");
  return od;
}

double chi_squared_statistic(std::span<const double> observed, std::span<const double> expected,
                             std::vector<double>* contributions) {
  if (observed.size() != expected.size()) throw Error(ErrorCode::DimensionMismatch, "O and E differ in shape");
  double chi2 = 0.0;
  if (contributions != nullptr) contributions->clear();
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (!(expected[i] > 0.0)) {
      throw Error(ErrorCode::ZeroExpectedCell, "expected cell " + std::to_string(i) + " is not positive");
    }
    const double d = observed[i] - expected[i];
    const double c = d * d / expected[i];
    chi2 += c;
    if (contributions != nullptr) contributions->push_back(c);
  }
  return chi2;
}

namespace {

std::vector<double> flatten(const Matrix& m) {
  std::vector<double> out;
  for (const auto& row : m) out.insert(out.end(), row.begin(), row.end());
  return out;
}

void check_same_shape(const Matrix& a, const Matrix& b) {
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].size() == b[i].size();
  if (!same) throw Error(ErrorCode::DimensionMismatch, "O and E differ in shape");
}

/// Lower regularized gamma by its power series; valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

/// Upper regularized gamma by its continued fraction (modified Lentz);
/// valid for x >= a + 1.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double chi_squared_statistic(const Matrix& observed, const Matrix& expected, std::vector<double>* contributions) {
  check_same_shape(observed, expected);
  const auto o = flatten(observed);
  const auto e = flatten(expected);
  return chi_squared_statistic(o, e, contributions);
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0 || std::isnan(x)) throw Error(ErrorCode::InvalidConfig, "gamma Q needs a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return std::clamp(1.0 - gamma_p_series(a, x), 0.0, 1.0);
  return std::clamp(gamma_q_fraction(a, x), 0.0, 1.0);
}

double chi_squared_p(double chi2, int df) {
  if (df < 1) throw Error(ErrorCode::InvalidConfig, "df must be >= 1");
  if (chi2 < 0.0) throw Error(ErrorCode::InvalidConfig, "chi-squared statistic must be >= 0");
  return regularized_gamma_q(0.5 * df, 0.5 * chi2);
}

std::optional<DfMode> parse_df_mode(std::string_view text) {
  if (text == "cells") return DfMode::Cells;
  if (text == "contingency") return DfMode::Contingency;
  return std::nullopt;
}

ChiSquaredResult chi_squared_test(const Matrix& observed, const Matrix& expected, DfMode mode) {
  ChiSquaredResult r;
  r.statistic = chi_squared_statistic(observed, expected, &r.contributions);
  const std::size_t rows = observed.size();
  const std::size_t cols = rows == 0 ? 0 : observed[0].size();
  r.df = mode == DfMode::Cells ? static_cast<int>(rows * cols) : static_cast<int>((rows - 1) * (cols - 1));
  if (r.df < 1) throw Error(ErrorCode::InvalidConfig, "matrix too small for a chi-squared test");
  r.p = chi_squared_p(r.statistic, r.df);
  return r;
}

std::vector<double> error_percentiles(std::span<const double> errors, std::span<const double> pcts) {
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(pcts.size());
  for (double p : pcts) out.push_back(nearest_rank_percentile(sorted, p));
  return out;
}

}  // namespace cdrloc
