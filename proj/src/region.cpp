#include "cdrloc/region.hpp"

#include <algorithm>
#include <set>

#include "cdrloc/error.hpp"

namespace cdrloc {

namespace {

bool interiors_overlap(const Rect& a, const Rect& b) {
  return a.lat_min < b.lat_max && b.lat_min < a.lat_max && a.lon_min < b.lon_max &&
         b.lon_min < a.lon_max;
}

}  // namespace

RegionGrid::RegionGrid(std::vector<Region> regions) : regions_(std::move(regions)) {
  std::set<std::string_view> ids;
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    const Region& r = regions_[i];
    if (!(r.bounds.lat_min < r.bounds.lat_max) || !(r.bounds.lon_min < r.bounds.lon_max)) {
      throw Error(ErrorCode::InvalidConfig, "region " + r.id + " has an empty or inverted extent");
    }
    if (!ids.insert(r.id).second) {
      throw Error(ErrorCode::InvalidConfig, "duplicate region id " + r.id);
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (interiors_overlap(r.bounds, regions_[j].bounds)) {
        throw Error(ErrorCode::InvalidConfig, "regions " + regions_[j].id + " and " + r.id + " overlap");
      }
    }
  }
  const bool any_flagged =
      std::any_of(regions_.begin(), regions_.end(), [](const Region& r) { return r.study_area; });
  bool first = true;
  for (const Region& r : regions_) {
    if (any_flagged && !r.study_area) continue;
    if (first) {
      study_area_ = r.bounds;
      first = false;
      continue;
    }
    study_area_.lat_min = std::min(study_area_.lat_min, r.bounds.lat_min);
    study_area_.lat_max = std::max(study_area_.lat_max, r.bounds.lat_max);
    study_area_.lon_min = std::min(study_area_.lon_min, r.bounds.lon_min);
    study_area_.lon_max = std::max(study_area_.lon_max, r.bounds.lon_max);
  }
}

std::optional<std::size_t> RegionGrid::index_of(LatLon p) const {
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    if (regions_[i].bounds.contains(p)) return i;
  }
  return std::nullopt;
}

std::optional<std::string_view> RegionGrid::region_of(LatLon p) const {
  if (auto i = index_of(p)) return std::string_view(regions_[*i].id);
  return std::nullopt;
}

std::optional<std::size_t> RegionGrid::find(std::string_view id) const {
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    if (regions_[i].id == id) return i;
  }
  return std::nullopt;
}

RegionGrid RegionGrid::uniform(const Rect& area, int rows, int cols, std::string_view prefix) {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::InvalidConfig, "region grid needs rows, cols >= 1");
  std::vector<Region> out;
  const double dlat = area.height() / rows;
  const double dlon = area.width() / cols;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Region reg;
      reg.id = std::string(prefix) + std::to_string(r) + "_" + std::to_string(c);
      reg.bounds.lat_min = area.lat_min + dlat * r;
      reg.bounds.lat_max = r + 1 == rows ? area.lat_max : area.lat_min + dlat * (r + 1);
      reg.bounds.lon_min = area.lon_min + dlon * c;
      reg.bounds.lon_max = c + 1 == cols ? area.lon_max : area.lon_min + dlon * (c + 1);
      out.push_back(std::move(reg));
    }
  }
  return RegionGrid(std::move(out));
}

}  // namespace cdrloc
