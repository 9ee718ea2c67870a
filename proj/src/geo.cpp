#include "cdrloc/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cdrloc {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

std::optional<DistanceMode> parse_distance_mode(std::string_view text) {
  if (text == "haversine") return DistanceMode::Haversine;
  if (text == "planar") return DistanceMode::Planar;
  return std::nullopt;
}

std::string_view to_string(DistanceMode mode) {
  return mode == DistanceMode::Haversine ? "haversine" : "planar";
}

double haversine_km(LatLon a, LatLon b) {
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

double planar_km(LatLon a, LatLon b) {
  const double mean_lat = 0.5 * (a.lat + b.lat) * kDegToRad;
  const double dx = (b.lon - a.lon) * kDegToRad * std::cos(mean_lat);
  const double dy = (b.lat - a.lat) * kDegToRad;
  return kEarthRadiusKm * std::hypot(dx, dy);
}

double distance_km(LatLon a, LatLon b, DistanceMode mode) {
  return mode == DistanceMode::Haversine ? haversine_km(a, b) : planar_km(a, b);
}

bool valid_coordinates(LatLon p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

}  // namespace cdrloc
