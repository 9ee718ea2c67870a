#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cdrloc/geo.hpp"
#include "cdrloc/ingest.hpp"
#include "cdrloc/loadshare.hpp"
#include "cdrloc/model.hpp"
#include "cdrloc/region.hpp"

namespace cdrloc {

struct WorldConfig {
  std::uint64_t seed = 42;
  Rect area{6.60, 7.00, 79.80, 80.20};
  Rect urban{6.85, 6.95, 79.85, 79.95};
  int region_rows = 3;
  int region_cols = 3;
  int district_rows = 3;
  int district_cols = 1;

  // Two jittered layers: sparse high-power macro cells and dense small cells.
  double macro_spacing_km = 2.0;
  double small_spacing_km = 0.8;
  double urban_density = 4.0;  // tower density multiplier inside the urban rectangle
  double jitter = 0.2;         // fraction of spacing
  std::vector<double> macro_power_mw{3200.0, 6400.0};
  std::vector<double> small_power_mw{50.0, 100.0, 200.0};
  double urban_power_factor = 0.5;
  double min_rx = 400.0;  // coverage cutoff on transmit_power / d^2, mW per km^2
  /// Homes are redrawn until their strongest cell is this close; 0 disables.
  double home_max_serving_km = 1.0;

  std::size_t users = 500;
  int days = 14;
  std::int64_t start_day = 19723;  // 2024-01-01, a Monday
  int tz_offset_minutes = 0;
  std::set<std::int64_t> holidays;

  double p_ls = 0.3;
  double panel_fraction = 0.5;  // users with GPS traces and segment labels
  int gps_interval_s = 600;
  double gps_noise_m = 5.0;
  double work_urban_fraction = 0.8;
  double call_rate_scale = 1.0;
  /// Each call may open a session of quick follow-up events.
  double burst_probability = 0.5;
  double burst_mean_extra = 1.5;
  double burst_gap_s = 60.0;
  /// Upper bound of each user's blend towards the average hourly profile.
  double profile_blend = 0.6;
  std::array<double, kSegmentCount> segment_mix{0.30, 0.15, 0.20, 0.15, 0.10, 0.10};

  /// Free-flow travel speed per time window before the regional factor.
  std::array<double, kWindowCount> window_speed_kmph{12.0, 20.0, 25.0, 25.0, 12.0, 30.0, 45.0};
  double urban_speed_factor = 0.6;
  double min_region_factor = 0.8;
  double max_region_factor = 1.6;
};

/// Throws Error(InvalidConfig) with the offending field.
void validate(const WorldConfig& config);

struct SimUser {
  std::string user_id;
  UserSegment segment = UserSegment::FullTime;
  LatLon home;
  std::optional<LatLon> work;
  bool panel = false;
};

/// Bucketed tower positions in a local km plane for coverage queries.
struct TowerIndex {
  double lat0 = 0.0;
  double lon0 = 0.0;
  double km_per_deg_lat = 0.0;
  double km_per_deg_lon = 0.0;
  double bucket_km = 1.0;
  int nx = 0;
  int ny = 0;
  std::vector<std::vector<std::uint32_t>> buckets;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> power;

  void build(const TowerRegistry& towers, const Rect& area, double bucket_km);
  double to_x(LatLon p) const { return (p.lon - lon0) * km_per_deg_lon; }
  double to_y(LatLon p) const { return (p.lat - lat0) * km_per_deg_lat; }
};

struct World {
  WorldConfig config;
  TowerIndex index;
  TowerRegistry towers;
  RegionGrid regions;
  RegionGrid districts;
  std::vector<SimUser> users;
  /// True travel speed per (region index, window id).
  std::vector<std::array<double, kWindowCount>> speeds;

  double speed_at(LatLon p, int window) const;
};

/// Jittered-grid towers (denser, lower power inside the urban rectangle)
/// and users with homes spread over the area and workplaces biased urban.
World generate_world(const WorldConfig& config);

struct SimRecord {
  CdrRecord record;
  bool load_shared = false;  // served by a non-strongest cell on purpose
  bool truth = false;        // load_shared, or a cell change without 100 m of movement
  LatLon true_pos;
};

struct UserTrace {
  std::vector<SimRecord> records;  // sorted by (timestamp, cell)
  std::vector<GpsFix> gps;         // empty for non-panel users
};

/// One user's days; `seed` is combined with the user id so results do not
/// depend on simulation order.
UserTrace simulate_user(const World& world, const SimUser& user, int days, std::uint64_t seed);

std::vector<UserTrace> simulate_traces(const World& world, int days, std::uint64_t seed, unsigned workers = 1);

/// Candidate serving cells at a point: covering cells sorted by received
/// power (strongest first, ties by cell_id). Never empty; falls back to
/// the strongest nearby tower when nothing covers the point.
std::vector<CellIndex> covering_cells(const World& world, LatLon p);

/// Streams built straight from traces (what ingest would produce).
std::vector<UserStream> to_streams(const World& world, const std::vector<UserTrace>& traces);

struct EmitSummary {
  std::size_t cdr_rows = 0;
  std::size_t gps_rows = 0;
  std::size_t users = 0;
};

/// Writes cdr.csv, towers.csv, gps.csv, labels.csv, regions.csv,
/// districts.csv, speeds.csv, truth_flags.csv and truth_anchors.csv into
/// `dir`, simulating one user at a time. Truth flags can be skipped for
/// very large runs.
EmitSummary emit_dataset(const World& world, const std::string& dir, int days, std::uint64_t seed,
                         bool write_truth_flags = true, unsigned workers = 1);

/// Truth files read back for evaluation.
struct TruthAnchors {
  std::map<std::string, LatLon> home;
  std::map<std::string, LatLon> work;
};

TruthAnchors load_truth_anchors(const std::string& path);

}  // namespace cdrloc
