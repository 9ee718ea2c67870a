#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdrloc/geo.hpp"
#include "cdrloc/region.hpp"

namespace cdrloc {

using Matrix = std::vector<std::vector<double>>;

/// Home-district (rows) x work-district (columns) user shares.
struct OdMatrix {
  std::vector<std::string> districts;
  std::vector<std::vector<std::size_t>> counts;
  std::size_t total = 0;

  /// Shares in percent; all zero when total is 0.
  Matrix percent() const;

  /// Square CSV: header `home\work,<d1>,...`, one row per home district,
  /// cells in percent with `decimals` places.
  void save(const std::string& path, int decimals = 2) const;
};

/// Reads a square percent matrix written by OdMatrix::save (or by hand).
/// Throws Error(MalformedHeader) / Error(RowParseError) / Error(Io).
Matrix load_percent_matrix(const std::string& path, std::vector<std::string>* districts = nullptr);

struct UserAnchors {
  std::string user_id;
  std::optional<LatLon> home;
  std::optional<LatLon> work;
};

/// Counts users whose home and work anchors both fall in a district.
/// Throws Error(NoUsers) when nobody qualifies.
OdMatrix build_od_matrix(const std::vector<UserAnchors>& users, const RegionGrid& districts);

/// sum (O - E)^2 / E over all cells. Throws Error(ZeroExpectedCell) or
/// Error(DimensionMismatch).
double chi_squared_statistic(std::span<const double> observed, std::span<const double> expected,
                             std::vector<double>* contributions = nullptr);
double chi_squared_statistic(const Matrix& observed, const Matrix& expected,
                             std::vector<double>* contributions = nullptr);

/// Regularized upper incomplete gamma Q(a, x), a > 0, x >= 0.
double regularized_gamma_q(double a, double x);

/// Upper-tail probability of chi-squared with `df` degrees of freedom.
double chi_squared_p(double chi2, int df);

/// Cells: df = number of cells. Contingency: df = (rows - 1)(cols - 1).
enum class DfMode { Cells, Contingency };

std::optional<DfMode> parse_df_mode(std::string_view text);

struct ChiSquaredResult {
  double statistic = 0.0;
  int df = 0;
  double p = 1.0;
  std::vector<double> contributions;  // row-major
};

ChiSquaredResult chi_squared_test(const Matrix& observed, const Matrix& expected, DfMode mode = DfMode::Cells);

/// Nearest-rank percentiles of `errors` (non-empty) at each of `pcts`.
std::vector<double> error_percentiles(std::span<const double> errors, std::span<const double> pcts);

}  // namespace cdrloc
