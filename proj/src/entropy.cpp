#include "cdrloc/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cdrloc/error.hpp"

namespace cdrloc {

LocationDistribution location_distribution(const UserStream& stream) {
  if (stream.records.empty()) throw Error(ErrorCode::EmptyStream, "user " + stream.user_id);
  std::map<CellIndex, std::size_t> counts;
  for (const CdrRecord& r : stream.records) ++counts[r.cell];
  LocationDistribution dist;
  const double total = static_cast<double>(stream.records.size());
  for (const auto& [cell, n] : counts) {
    dist.cells.push_back(cell);
    dist.probabilities.push_back(static_cast<double>(n) / total);
  }
  return dist;
}

double shannon_entropy(const LocationDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probabilities) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h > 0.0 ? h : 0.0;
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw Error(ErrorCode::NoUsers, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

EntropyFilterResult filter_by_entropy(const std::vector<UserStream>& users, double keep_percentile,
                                      EntropyKeep keep) {
  EntropyFilterResult out;
  if (users.empty()) return out;
  out.entropy.reserve(users.size());
  for (const auto& u : users) out.entropy.push_back(shannon_entropy(location_distribution(u)));
  if (keep == EntropyKeep::Low) {
    out.threshold = nearest_rank_percentile(out.entropy, keep_percentile);
  } else {
    std::vector<double> negated(out.entropy.size());
    std::transform(out.entropy.begin(), out.entropy.end(), negated.begin(), [](double h) { return -h; });
    out.threshold = -nearest_rank_percentile(std::move(negated), keep_percentile);
  }
  for (std::size_t i = 0; i < users.size(); ++i) {
    const bool kept = keep == EntropyKeep::Low ? out.entropy[i] <= out.threshold : out.entropy[i] >= out.threshold;
    if (kept) {
      out.retained.push_back(i);
    } else {
      ++out.dropped;
    }
  }
  return out;
}

}  // namespace cdrloc
