#include "cdrloc/model.hpp"

#include <algorithm>
#include <cmath>

#include "cdrloc/error.hpp"

namespace cdrloc {

TowerRegistry::TowerRegistry(std::vector<CellTower> towers) : towers_(std::move(towers)) {
  std::sort(towers_.begin(), towers_.end(),
            [](const CellTower& a, const CellTower& b) { return a.cell_id < b.cell_id; });
  index_.reserve(towers_.size());
  for (std::size_t i = 0; i < towers_.size(); ++i) {
    const CellTower& t = towers_[i];
    if (!(t.transmit_power_mw > 0.0) || !std::isfinite(t.transmit_power_mw)) {
      throw Error(ErrorCode::NonPositivePower, "cell " + t.cell_id);
    }
    if (!index_.emplace(t.cell_id, static_cast<std::uint32_t>(i)).second) {
      throw Error(ErrorCode::DuplicateKey, "cell " + t.cell_id);
    }
  }
}

std::optional<CellIndex> TowerRegistry::find(std::string_view cell_id) const {
  auto it = index_.find(std::string(cell_id));
  if (it == index_.end()) return std::nullopt;
  return CellIndex{it->second};
}

std::string_view to_string(UserSegment s) {
  switch (s) {
    case UserSegment::FullTime: return "full_time";
    case UserSegment::PartTime: return "part_time";
    case UserSegment::Student: return "student";
    case UserSegment::Housewife: return "housewife";
    case UserSegment::Retired: return "retired";
    case UserSegment::Other: return "other";
  }
  return "other";
}

std::optional<UserSegment> parse_segment(std::string_view text) {
  for (UserSegment s : kAllSegments) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

}  // namespace cdrloc
