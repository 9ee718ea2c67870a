#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdrloc/geo.hpp"
#include "cdrloc/ingest.hpp"
#include "cdrloc/model.hpp"
#include "cdrloc/region.hpp"

namespace cdrloc {

inline constexpr double kInfiniteSpeed = std::numeric_limits<double>::infinity();
inline constexpr double kDefaultSpeedThreshold = 120.0;

/// Per-record flag aligned to UserStream::records; 1 = load-shared.
using LoadShareFlags = std::vector<std::uint8_t>;

enum class Label : std::int8_t { Unknown = -1, Negative = 0, Positive = 1 };

/// km/h between the serving towers of two consecutive records. Zero when
/// the cell is unchanged, kInfiniteSpeed for a cell change with zero
/// elapsed time. Throws Error(UnknownCell).
double pairwise_speed(const CdrRecord& prev, const CdrRecord& curr, const TowerRegistry& towers,
                      DistanceMode mode = DistanceMode::Haversine);

/// Flags r_k iff speed(r_{k-1}, r_k) > threshold (strict).
LoadShareFlags detect_fixed(const UserStream& stream, const TowerRegistry& towers,
                            double threshold_kmph = kDefaultSpeedThreshold,
                            DistanceMode mode = DistanceMode::Haversine);

struct GroundTruthOptions {
  std::int64_t max_fix_gap_s = 300;
  double stationary_km = 0.1;
  DistanceMode mode = DistanceMode::Haversine;
};

/// Cell change with GPS displacement <= stationary_km is Positive. Records
/// without a fix within max_fix_gap_s of either timestamp, and the first
/// record, are Unknown. Throws Error(NoGps).
std::vector<Label> label_ground_truth(const UserStream& stream, const GroundTruthOptions& options = {});

/// Candidate thresholds {0, step, ..., max}.
std::vector<double> theta_grid(double step = 5.0, double max = 200.0);

/// Thresholds keyed by (region_id, window_id) with a fallback.
class SpeedTable {
 public:
  explicit SpeedTable(double default_threshold = kDefaultSpeedThreshold) : default_(default_threshold) {}

  double default_threshold() const { return default_; }
  void set(std::string region_id, int window_id, double theta) {
    entries_[{std::move(region_id), window_id}] = theta;
  }
  /// Default for unknown keys and for towers outside every region.
  double threshold(std::optional<std::string_view> region_id, int window_id) const;
  const std::map<std::pair<std::string, int>, double>& entries() const { return entries_; }

  /// True when every threshold (and the default) lies on `grid`.
  bool on_grid(const std::vector<double>& grid) const;

  /// speed_table.csv: region_id,window_id,theta_kmph
  void save(const std::string& path) const;
  /// Throws Error(MalformedHeader) / Error(Io); bad rows throw RowParseError.
  static SpeedTable load(const std::string& path, double default_threshold = kDefaultSpeedThreshold);

 private:
  double default_;
  std::map<std::pair<std::string, int>, double> entries_;
};

struct KeyCalibration {
  std::string region_id;
  int window_id = 0;
  double theta = 0.0;
  double f1 = 0.0;
  std::size_t labeled_pairs = 0;
  std::size_t positives = 0;
};

struct CalibrationResult {
  SpeedTable table;
  std::vector<KeyCalibration> keys;  // ordered by (region_id, window_id)
};

struct CalibrationOptions {
  std::vector<double> grid = theta_grid();
  double default_threshold = kDefaultSpeedThreshold;
  int tz_offset_minutes = 0;
  DistanceMode mode = DistanceMode::Haversine;
  /// Optional fallbacks for keys without labeled pairs, snapped up onto the grid.
  std::vector<SpeedPrior> priors;
};

/// Per (region of the earlier record's tower, window of its timestamp):
/// picks the theta maximizing F1 of strict speed > theta against the
/// labels, ties to the smallest theta. Keys whose labels are all Negative
/// take the largest grid value. Throws Error(NoLabeledData) when no pair
/// at all is labeled.
CalibrationResult calibrate_speed_table(const std::vector<UserStream>& streams,
                                        const std::vector<std::vector<Label>>& labels, const TowerRegistry& towers,
                                        const RegionGrid& grid, const CalibrationOptions& options = {});

/// Threshold lookup bound to one registry and region grid.
class AdaptiveDetector {
 public:
  AdaptiveDetector(const SpeedTable& table, const TowerRegistry& towers, const RegionGrid& grid,
                   int tz_offset_minutes = 0, DistanceMode mode = DistanceMode::Haversine);

  LoadShareFlags detect(const UserStream& stream) const;
  double threshold_for(const CdrRecord& earlier) const;

 private:
  const TowerRegistry* towers_;
  LocalClock clock_;
  DistanceMode mode_;
  std::vector<std::array<double, kWindowCount>> per_tower_;
};

LoadShareFlags detect_adaptive(const UserStream& stream, const SpeedTable& table, const TowerRegistry& towers,
                               const RegionGrid& grid, int tz_offset_minutes = 0,
                               DistanceMode mode = DistanceMode::Haversine);

struct DetectionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  /// Unknown labels are skipped. Throws Error(DimensionMismatch).
  void add(const LoadShareFlags& flags, const std::vector<Label>& truth);
};

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  DetectionCounts counts;
  bool no_positives = false;  // recall undefined, reported as 0
};

DetectionMetrics detection_metrics(const DetectionCounts& counts);
DetectionMetrics detection_metrics(const LoadShareFlags& flags, const std::vector<Label>& truth);

}  // namespace cdrloc
