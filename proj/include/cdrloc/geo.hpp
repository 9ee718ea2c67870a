#pragma once

#include <optional>
#include <string_view>

namespace cdrloc {

inline constexpr double kEarthRadiusKm = 6371.0088;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const LatLon&, const LatLon&) = default;
};

enum class DistanceMode { Haversine, Planar };

std::optional<DistanceMode> parse_distance_mode(std::string_view text);
std::string_view to_string(DistanceMode mode);

/// Great-circle distance on a sphere of radius kEarthRadiusKm.
double haversine_km(LatLon a, LatLon b);

/// Euclidean distance after an equirectangular projection about the mean
/// latitude of the two points. Agrees with haversine to well under 0.1% at
/// city scale.
double planar_km(LatLon a, LatLon b);

double distance_km(LatLon a, LatLon b, DistanceMode mode);

bool valid_coordinates(LatLon p);

}  // namespace cdrloc
