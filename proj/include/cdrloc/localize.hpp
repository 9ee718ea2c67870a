#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdrloc/geo.hpp"
#include "cdrloc/loadshare.hpp"
#include "cdrloc/model.hpp"
#include "cdrloc/timeutil.hpp"

namespace cdrloc {

/// Per-cell factors inside one stay cluster.
struct CellStats {
  CellIndex cell;
  LatLon pos;
  double load_shared = 0.0;  // L: flagged records at this cell
  double inv_power = 0.0;    // 1 / transmit power (1/mW)
  double days = 0.0;         // C: distinct local dates with a record here
  std::size_t records = 0;
};

struct SegmentParams {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  bool in_unit_box() const {
    return alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0 && gamma >= 0.0 && gamma <= 1.0;
  }
  friend bool operator==(const SegmentParams&, const SegmentParams&) = default;
};

struct WeightedPoint {
  LatLon pos;
  std::size_t weight = 1;  // record multiplicity
};

inline constexpr int kNoise = -1;

struct DbscanResult {
  std::vector<int> label;  // cluster id per point, kNoise for noise
  int clusters = 0;
};

/// DBSCAN where a point's density is the summed multiplicity of all points
/// within eps (itself included). Deterministic in input order.
DbscanResult dbscan_stay_clusters(std::span<const WeightedPoint> points, double eps_m = 1000.0,
                                  std::size_t min_pts = 3, DistanceMode mode = DistanceMode::Haversine);

/// (v - min) / (max - min); all 1.0 when max == min.
std::vector<double> minmax_scale(std::span<const double> values);

/// W_i = alpha L^_i + beta (1/P)^_i + gamma C^_i with each factor min-max
/// scaled across the given cells.
std::vector<double> cell_weights(std::span<const CellStats> cells, const SegmentParams& params);

struct KMeansResult {
  std::vector<LatLon> centroids;
  std::vector<std::size_t> assignment;
  std::vector<double> cost_history;  // weighted within-cluster cost after each assignment
  int iterations = 0;
};

struct KMeansOptions {
  int max_iterations = 100;
  double tolerance_deg = 1e-7;
};

/// k-means++ seeding drawn by w then w d^2, then weighted Lloyd iterations
/// in a local equirectangular plane. Throws Error(ZeroTotalWeight) and
/// Error(InvalidConfig) when k exceeds the number of distinct points.
KMeansResult weighted_kmeanspp(std::span<const LatLon> points, std::span<const double> weights, std::size_t k,
                               std::uint64_t seed, const KMeansOptions& options = {});

enum class AnchorKind { Home, Work };

std::string_view to_string(AnchorKind kind);

struct MinuteRange {
  int start;
  int end;  // exclusive; wraps midnight when end <= start
  bool contains(int minute) const {
    return start < end ? minute >= start && minute < end : minute >= start || minute < end;
  }
};

struct AnchorOptions {
  double eps_m = 1000.0;
  std::size_t min_pts = 3;
  std::vector<MinuteRange> home_hours{{20 * 60, 5 * 60}};
  std::vector<MinuteRange> work_hours{{10 * 60, 12 * 60}, {13 * 60, 16 * 60}};
  std::size_t k = 1;
  std::uint64_t seed = 1;
  DistanceMode mode = DistanceMode::Haversine;
};

struct StayCluster {
  std::vector<CellStats> members;  // in cell order
  int label = 0;
  std::size_t active_days = 0;
  std::size_t records = 0;
  LatLon centroid;  // unweighted mean of member towers
};

/// Indices of records falling in the kind's hours (work: workdays only).
std::vector<std::size_t> restrict_records(const UserStream& stream, AnchorKind kind, const Calendar& calendar,
                                          const AnchorOptions& options = {});

/// All stay clusters of the restricted records. When DBSCAN marks every
/// tower as noise, each tower becomes its own cluster.
std::vector<StayCluster> stay_clusters(const UserStream& stream, const LoadShareFlags& flags, AnchorKind kind,
                                       const TowerRegistry& towers, const Calendar& calendar,
                                       const AnchorOptions& options = {});

/// Most active days, then most records, then southern-most, then western-most.
std::optional<StayCluster> select_stay_cluster(std::vector<StayCluster> clusters);

/// Weighted centroid of a cluster; uniform weights replace an all-zero W.
LatLon weighted_anchor(const StayCluster& cluster, const SegmentParams& params, std::uint64_t seed,
                       std::size_t k = 1);

struct Anchor {
  LatLon pos;
  std::size_t cluster_days = 0;
};

std::optional<Anchor> infer_anchor(const UserStream& stream, const LoadShareFlags& flags, AnchorKind kind,
                                   const SegmentParams& params, const TowerRegistry& towers,
                                   const Calendar& calendar, const AnchorOptions& options = {});

/// Tower on the most distinct days within the kind's hours (ties: more
/// records, then cell_id order).
std::optional<Anchor> calldays_anchor(const UserStream& stream, AnchorKind kind, const TowerRegistry& towers,
                                      const Calendar& calendar, const AnchorOptions& options = {});

struct FitSample {
  StayCluster cluster;
  LatLon truth;
  std::uint64_t seed = 1;
};

struct FitResult {
  SegmentParams params;
  double median_error_m = 0.0;
  std::size_t users = 0;
};

double median(std::vector<double> values);

/// Exhaustive search of {0, step, ..., 1}^3 minus the origin for the
/// smallest median anchor error (ties: smaller alpha+beta+gamma, then
/// lexicographic). Throws Error(NoLabeledUsers).
FitResult fit_segment_params(const std::vector<FitSample>& samples, double step = 0.1,
                             DistanceMode mode = DistanceMode::Haversine, unsigned workers = 1);

/// Coordinate-wise median of the GPS fixes inside the kind's hours (work:
/// workdays only); the reference anchor used for fitting. None without fixes.
std::optional<LatLon> gps_anchor(const std::vector<GpsFix>& fixes, AnchorKind kind, const Calendar& calendar,
                                 const AnchorOptions& options = {});

/// Parameters per segment, with a fallback for segments lacking data.
struct ParamsBySegment {
  std::array<std::optional<FitResult>, kSegmentCount> fitted;
  SegmentParams fallback{1.0, 1.0, 1.0};

  const SegmentParams& get(std::optional<UserSegment> s) const {
    if (s && fitted[static_cast<int>(*s)]) return fitted[static_cast<int>(*s)]->params;
    return fallback;
  }
};

}  // namespace cdrloc
