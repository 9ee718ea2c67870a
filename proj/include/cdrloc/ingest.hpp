#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdrloc/error.hpp"
#include "cdrloc/model.hpp"
#include "cdrloc/region.hpp"

namespace cdrloc {

enum class DatasetKind { Cdr, Towers, Gps, Labels, Regions, Speeds };

std::string_view expected_header(DatasetKind kind);
std::string_view to_string(DatasetKind kind);

struct Rejection {
  std::size_t line = 0;
  ErrorCode code = ErrorCode::RowParseError;
  std::string detail;
};

/// A validated collection plus the rows that were dropped on the way.
template <typename T>
struct Loaded {
  T value;
  std::vector<Rejection> rejected;
};

/// Raw CDR rows before per-user canonicalization. `user[i]` indexes `user_ids`.
struct CdrTable {
  std::vector<std::string> user_ids;
  std::vector<std::uint32_t> user;
  std::vector<CdrRecord> records;

  std::size_t size() const { return records.size(); }
};

struct CdrLoadOptions {
  std::optional<Timestamp> study_start;  // inclusive
  std::optional<Timestamp> study_end;    // exclusive
};

struct SpeedPrior {
  std::string region_id;
  int window_id = 0;
  double avg_speed_kmph = 0.0;
};

// Each loader throws Error(MalformedHeader) when the header does not match
// expected_header(kind) and Error(Io) when the file cannot be read. Row-level
// problems land in Loaded::rejected and never abort the load.
Loaded<RegionGrid> load_regions(const std::string& path);
/// With a non-empty grid, towers outside every region or whose region_id
/// disagrees with the grid are rejected.
Loaded<TowerRegistry> load_towers(const std::string& path, const RegionGrid& grid = {});
Loaded<CdrTable> load_cdr(const std::string& path, const TowerRegistry& towers,
                          const CdrLoadOptions& options = {});
Loaded<std::map<std::string, std::vector<GpsFix>>> load_gps(const std::string& path);
Loaded<std::map<std::string, UserSegment>> load_labels(const std::string& path);
Loaded<std::vector<SpeedPrior>> load_speeds(const std::string& path);

struct CanonicalStreams {
  std::vector<UserStream> streams;  // sorted by user_id
  std::size_t duplicates_removed = 0;
};

/// Groups rows per user, sorts each stream by (timestamp, cell_id) and
/// drops records repeating an earlier (timestamp, cell_id) pair.
CanonicalStreams canonicalize_streams(const CdrTable& table);
/// Same contract on already-grouped streams; streams sharing a user_id are
/// merged. Idempotent.
CanonicalStreams canonicalize_streams(std::vector<UserStream> streams);

/// Attaches GPS fixes (sorted by time) and segment labels to matching streams.
void attach_gps(std::vector<UserStream>& streams, const std::map<std::string, std::vector<GpsFix>>& gps);
void attach_labels(std::vector<UserStream>& streams, const std::map<std::string, UserSegment>& labels);

struct StudyAreaResult {
  std::vector<UserStream> retained;
  std::size_t dropped_users = 0;
  std::size_t dropped_records = 0;  // outside-area records removed from retained users
};

/// Keeps users whose fraction of records served inside the study area is at
/// least `min_fraction`, then strips their outside-area records.
StudyAreaResult study_area_filter(std::vector<UserStream> streams, const TowerRegistry& towers,
                                  const RegionGrid& grid, double min_fraction = 0.8);

/// Region index of every tower (nullopt when outside all regions).
std::vector<std::optional<std::size_t>> tower_regions(const TowerRegistry& towers, const RegionGrid& grid);

}  // namespace cdrloc
