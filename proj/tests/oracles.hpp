#pragma once

#include <cmath>

namespace testing {

/// Upper tail of the chi-squared distribution by composite Simpson
/// integration of the density after substituting t = u^2, which removes
/// the singularity at 0 for df = 1.
inline double chi2_tail_quadrature(double x, int df, int intervals = 20000) {
  const double k = df / 2.0;
  const double log_norm = -k * std::log(2.0) - std::lgamma(k);
  auto g = [&](double u) {
    if (u == 0.0) return df == 1 ? 2.0 * std::exp(log_norm) : 0.0;
    const double t = u * u;
    return 2.0 * u * std::exp(log_norm + (k - 1.0) * std::log(t) - t / 2.0);
  };
  const double b = std::sqrt(x);
  const double h = b / intervals;
  double sum = g(0.0) + g(b);
  for (int i = 1; i < intervals; ++i) sum += g(i * h) * (i % 2 ? 4.0 : 2.0);
  return 1.0 - sum * h / 3.0;
}

}  // namespace testing
