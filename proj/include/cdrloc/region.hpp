#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdrloc/geo.hpp"

namespace cdrloc {

struct Rect {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  /// Closed on all four edges.
  bool contains(LatLon p) const {
    return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
  }
  double height() const { return lat_max - lat_min; }
  double width() const { return lon_max - lon_min; }
};

struct Region {
  std::string id;
  Rect bounds;
  bool study_area = true;
};

/// Ordered, non-overlapping axis-aligned regions. A point on a shared edge
/// belongs to the region listed first.
class RegionGrid {
 public:
  RegionGrid() = default;
  /// Throws Error(InvalidConfig) on inverted rectangles, duplicate ids or
  /// overlapping interiors.
  explicit RegionGrid(std::vector<Region> regions);

  const std::vector<Region>& regions() const { return regions_; }
  std::size_t size() const { return regions_.size(); }
  bool empty() const { return regions_.empty(); }

  std::optional<std::size_t> index_of(LatLon p) const;
  std::optional<std::string_view> region_of(LatLon p) const;
  std::optional<std::size_t> find(std::string_view id) const;

  /// Bounding rectangle of the regions flagged as study area (all regions
  /// when none is flagged).
  const Rect& study_area() const { return study_area_; }
  bool in_study_area(LatLon p) const { return !regions_.empty() && study_area_.contains(p); }

  /// Splits `area` into rows x cols equal rectangles named `<prefix><r>_<c>`.
  static RegionGrid uniform(const Rect& area, int rows, int cols, std::string_view prefix = "R");

 private:
  std::vector<Region> regions_;
  Rect study_area_;
};

}  // namespace cdrloc
