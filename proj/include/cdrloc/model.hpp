#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cdrloc/geo.hpp"
#include "cdrloc/timeutil.hpp"

namespace cdrloc {

/// Index into a TowerRegistry. Registries are sorted by cell_id, so index
/// order equals cell_id order.
struct CellIndex {
  std::uint32_t value = 0;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

struct CellTower {
  std::string cell_id;
  LatLon pos;
  double transmit_power_mw = 1.0;
  std::string region_id;
};

class TowerRegistry {
 public:
  TowerRegistry() = default;
  /// Throws Error(DuplicateKey) or Error(NonPositivePower).
  explicit TowerRegistry(std::vector<CellTower> towers);

  std::size_t size() const { return towers_.size(); }
  bool empty() const { return towers_.empty(); }
  const CellTower& at(CellIndex i) const { return towers_.at(i.value); }
  const CellTower& operator[](CellIndex i) const { return towers_[i.value]; }
  const std::vector<CellTower>& towers() const { return towers_; }
  std::optional<CellIndex> find(std::string_view cell_id) const;

 private:
  std::vector<CellTower> towers_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct CdrRecord {
  Timestamp ts = 0;
  CellIndex cell;
  std::int32_t duration_s = 0;

  friend bool operator==(const CdrRecord&, const CdrRecord&) = default;
};

/// Composite stream order: (timestamp, cell_id).
inline bool record_less(const CdrRecord& a, const CdrRecord& b) {
  if (a.ts != b.ts) return a.ts < b.ts;
  return a.cell < b.cell;
}

struct GpsFix {
  Timestamp ts = 0;
  LatLon pos;
};

enum class UserSegment { FullTime = 0, PartTime, Student, Housewife, Retired, Other };

inline constexpr int kSegmentCount = 6;
inline constexpr std::array<UserSegment, kSegmentCount> kAllSegments{
    UserSegment::FullTime, UserSegment::PartTime, UserSegment::Student,
    UserSegment::Housewife, UserSegment::Retired, UserSegment::Other};

std::string_view to_string(UserSegment s);
std::optional<UserSegment> parse_segment(std::string_view text);

struct UserStream {
  std::string user_id;
  std::vector<CdrRecord> records;  // sorted by record_less, no duplicate (ts, cell)
  std::vector<GpsFix> gps;         // sorted by ts
  std::optional<UserSegment> segment;
};

}  // namespace cdrloc
