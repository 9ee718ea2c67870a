#pragma once

#include <cstddef>
#include <vector>

#include "cdrloc/model.hpp"

namespace cdrloc {

/// Share of a user's records observed at each distinct cell, in cell order.
struct LocationDistribution {
  std::vector<CellIndex> cells;
  std::vector<double> probabilities;

  std::size_t size() const { return probabilities.size(); }
};

/// Throws Error(EmptyStream) for a stream without records.
LocationDistribution location_distribution(const UserStream& stream);

/// H = -sum p log2 p, in bits.
double shannon_entropy(const LocationDistribution& dist);

/// Nearest-rank percentile: the smallest value v such that at least pct% of
/// the sample is <= v. `values` need not be sorted; must be non-empty.
double nearest_rank_percentile(std::vector<double> values, double pct);

enum class EntropyKeep { Low, High };

struct EntropyFilterResult {
  std::vector<std::size_t> retained;  // indices into the input, ascending
  std::vector<double> entropy;        // per input user
  double threshold = 0.0;
  std::size_t dropped = 0;
};

/// Keeps users whose entropy is at or below the keep_percentile-th
/// percentile (Low) or at or above the (100 - keep_percentile)-th (High).
EntropyFilterResult filter_by_entropy(const std::vector<UserStream>& users, double keep_percentile = 80.0,
                                      EntropyKeep keep = EntropyKeep::Low);

}  // namespace cdrloc
