#include "cdrloc/localize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <tuple>

#include "cdrloc/error.hpp"
#include "cdrloc/parallel.hpp"
#include "cdrloc/rng.hpp"

namespace cdrloc {

std::string_view to_string(AnchorKind kind) { return kind == AnchorKind::Home ? "home" : "work"; }

DbscanResult dbscan_stay_clusters(std::span<const WeightedPoint> points, double eps_m, std::size_t min_pts,
                                  DistanceMode mode) {
  const std::size_t n = points.size();
  const double eps_km = eps_m / 1000.0;
  std::vector<std::vector<std::size_t>> neighbors(n);
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t density = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || distance_km(points[i].pos, points[j].pos, mode) <= eps_km) {
        neighbors[i].push_back(j);
        density += points[j].weight;
      }
    }
    core[i] = density >= min_pts ? 1 : 0;
  }

  DbscanResult out;
  out.label.assign(n, kNoise);
  std::vector<char> visited(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i] || !core[i]) continue;
    const int id = out.clusters++;
    std::deque<std::size_t> queue{i};
    visited[i] = 1;
    out.label[i] = id;
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      if (!core[p]) continue;
      for (std::size_t q : neighbors[p]) {
        if (out.label[q] == kNoise) out.label[q] = id;
        if (!visited[q]) {
          visited[q] = 1;
          queue.push_back(q);
        }
      }
    }
  }
  return out;
}

std::vector<double> minmax_scale(std::span<const double> values) {
  std::vector<double> out(values.size(), 1.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

std::vector<double> cell_weights(std::span<const CellStats> cells, const SegmentParams& params) {
  std::vector<double> l, p, c;
  l.reserve(cells.size());
  p.reserve(cells.size());
  c.reserve(cells.size());
  for (const CellStats& s : cells) {
    l.push_back(s.load_shared);
    p.push_back(s.inv_power);
    c.push_back(s.days);
  }
  const auto ls = minmax_scale(l);
  const auto ps = minmax_scale(p);
  const auto cs = minmax_scale(c);
  std::vector<double> w(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    w[i] = params.alpha * ls[i] + params.beta * ps[i] + params.gamma * cs[i];
  }
  return w;
}

namespace {

struct Plane {
  double lon_scale;
  double sq_dist(LatLon a, LatLon b) const {
    const double dx = (a.lon - b.lon) * lon_scale;
    const double dy = a.lat - b.lat;
    return dx * dx + dy * dy;
  }
};

std::size_t draw_index(Rng& rng, std::span<const double> mass, double total) {
  double target = rng.uniform() * total;
  std::size_t last_positive = mass.size();
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (mass[i] <= 0.0) continue;
    last_positive = i;
    if (target < mass[i]) return i;
    target -= mass[i];
  }
  return last_positive;
}

}  // namespace

KMeansResult weighted_kmeanspp(std::span<const LatLon> points, std::span<const double> weights, std::size_t k,
                               std::uint64_t seed, const KMeansOptions& options) {
  if (points.size() != weights.size()) throw Error(ErrorCode::DimensionMismatch, "one weight per point");
  double total = 0.0;
  double lat_acc = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw Error(ErrorCode::InvalidConfig, "weights must be finite and >= 0");
    }
    total += weights[i];
    lat_acc += weights[i] * points[i].lat;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroTotalWeight, "all weights are zero");
  {
    std::set<std::pair<double, double>> distinct;
    for (const LatLon& p : points) distinct.emplace(p.lat, p.lon);
    if (k == 0 || k > distinct.size()) {
      throw Error(ErrorCode::InvalidConfig, "k must be between 1 and the number of distinct points");
    }
  }
  const Plane plane{std::cos(lat_acc / total * std::numbers::pi / 180.0)};
  Rng rng(seed);
  const std::size_t n = points.size();

  KMeansResult out;
  out.centroids.push_back(points[draw_index(rng, weights, total)]);
  std::vector<double> d2(n);
  std::vector<double> mass(n);
  while (out.centroids.size() < k) {
    double mass_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = plane.sq_dist(points[i], out.centroids[0]);
      for (std::size_t c = 1; c < out.centroids.size(); ++c) best = std::min(best, plane.sq_dist(points[i], out.centroids[c]));
      d2[i] = best;
      mass[i] = weights[i] * best;
      mass_total += mass[i];
    }
    if (mass_total > 0.0) {
      out.centroids.push_back(points[draw_index(rng, mass, mass_total)]);
    } else {
      // Only zero-weight points remain uncovered; take the first of them.
      const auto it = std::find_if(d2.begin(), d2.end(), [](double v) { return v > 0.0; });
      out.centroids.push_back(points[static_cast<std::size_t>(it - d2.begin())]);
    }
  }

  out.assignment.assign(n, 0);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best_c = 0;
      double best = plane.sq_dist(points[i], out.centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = plane.sq_dist(points[i], out.centroids[c]);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      out.assignment[i] = best_c;
      cost += weights[i] * best;
    }
    out.cost_history.push_back(cost);
    ++out.iterations;

    std::vector<double> wsum(k, 0.0), lat(k, 0.0), lon(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = out.assignment[i];
      wsum[c] += weights[i];
      lat[c] += weights[i] * points[i].lat;
      lon[c] += weights[i] * points[i].lon;
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (!(wsum[c] > 0.0)) continue;
      const LatLon next{lat[c] / wsum[c], lon[c] / wsum[c]};
      shift = std::max(shift, std::hypot(next.lat - out.centroids[c].lat, next.lon - out.centroids[c].lon));
      out.centroids[c] = next;
    }
    if (shift < options.tolerance_deg) break;
  }
  return out;
}

std::vector<std::size_t> restrict_records(const UserStream& stream, AnchorKind kind, const Calendar& calendar,
                                          const AnchorOptions& options) {
  const auto& ranges = kind == AnchorKind::Home ? options.home_hours : options.work_hours;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < stream.records.size(); ++i) {
    const Timestamp ts = stream.records[i].ts;
    if (kind == AnchorKind::Work && !calendar.is_workday(ts)) continue;
    const int minute = calendar.clock().minute_of_day(ts);
    if (std::any_of(ranges.begin(), ranges.end(), [&](const MinuteRange& r) { return r.contains(minute); })) {
      out.push_back(i);
    }
  }
  return out;
}

std::optional<LatLon> gps_anchor(const std::vector<GpsFix>& fixes, AnchorKind kind, const Calendar& calendar,
                                 const AnchorOptions& options) {
  const auto& ranges = kind == AnchorKind::Home ? options.home_hours : options.work_hours;
  std::vector<double> lat, lon;
  for (const GpsFix& f : fixes) {
    if (kind == AnchorKind::Work && !calendar.is_workday(f.ts)) continue;
    const int minute = calendar.clock().minute_of_day(f.ts);
    if (std::none_of(ranges.begin(), ranges.end(), [&](const MinuteRange& r) { return r.contains(minute); })) {
      continue;
    }
    lat.push_back(f.pos.lat);
    lon.push_back(f.pos.lon);
  }
  if (lat.empty()) return std::nullopt;
  return LatLon{median(std::move(lat)), median(std::move(lon))};
}

namespace {

struct CellAccumulator {
  std::size_t records = 0;
  std::size_t load_shared = 0;
  std::set<std::int64_t> days;
};

StayCluster make_cluster(int label, const std::vector<CellIndex>& cells,
                         const std::map<CellIndex, CellAccumulator>& acc, const TowerRegistry& towers) {
  StayCluster c;
  c.label = label;
  std::set<std::int64_t> days;
  double lat = 0.0, lon = 0.0;
  for (CellIndex cell : cells) {
    const CellAccumulator& a = acc.at(cell);
    const CellTower& t = towers[cell];
    CellStats s;
    s.cell = cell;
    s.pos = t.pos;
    s.load_shared = static_cast<double>(a.load_shared);
    s.inv_power = 1.0 / t.transmit_power_mw;
    s.days = static_cast<double>(a.days.size());
    s.records = a.records;
    c.members.push_back(s);
    c.records += a.records;
    days.insert(a.days.begin(), a.days.end());
    lat += t.pos.lat;
    lon += t.pos.lon;
  }
  c.active_days = days.size();
  c.centroid = {lat / static_cast<double>(cells.size()), lon / static_cast<double>(cells.size())};
  return c;
}

}  // namespace

std::vector<StayCluster> stay_clusters(const UserStream& stream, const LoadShareFlags& flags, AnchorKind kind,
                                       const TowerRegistry& towers, const Calendar& calendar,
                                       const AnchorOptions& options) {
  if (!flags.empty() && flags.size() != stream.records.size()) {
    throw Error(ErrorCode::DimensionMismatch, "flags misaligned for " + stream.user_id);
  }
  std::map<CellIndex, CellAccumulator> acc;
  for (std::size_t i : restrict_records(stream, kind, calendar, options)) {
    const CdrRecord& r = stream.records[i];
    CellAccumulator& a = acc[r.cell];
    ++a.records;
    if (!flags.empty() && flags[i] != 0) ++a.load_shared;
    a.days.insert(calendar.clock().day(r.ts));
  }
  if (acc.empty()) return {};

  std::vector<CellIndex> cells;
  std::vector<WeightedPoint> points;
  for (const auto& [cell, a] : acc) {
    cells.push_back(cell);
    points.push_back({towers[cell].pos, a.records});
  }
  const DbscanResult db = dbscan_stay_clusters(points, options.eps_m, options.min_pts, options.mode);
  std::vector<StayCluster> out;
  if (db.clusters == 0) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out.push_back(make_cluster(static_cast<int>(i), {cells[i]}, acc, towers));
    }
    return out;
  }
  for (int id = 0; id < db.clusters; ++id) {
    std::vector<CellIndex> members;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (db.label[i] == id) members.push_back(cells[i]);
    }
    out.push_back(make_cluster(id, members, acc, towers));
  }
  return out;
}

std::optional<StayCluster> select_stay_cluster(std::vector<StayCluster> clusters) {
  if (clusters.empty()) return std::nullopt;
  auto better = [](const StayCluster& a, const StayCluster& b) {
    if (a.active_days != b.active_days) return a.active_days > b.active_days;
    if (a.records != b.records) return a.records > b.records;
    if (a.centroid.lat != b.centroid.lat) return a.centroid.lat < b.centroid.lat;
    return a.centroid.lon < b.centroid.lon;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < clusters.size(); ++i) {
    if (better(clusters[i], clusters[best])) best = i;
  }
  return std::move(clusters[best]);
}

LatLon weighted_anchor(const StayCluster& cluster, const SegmentParams& params, std::uint64_t seed, std::size_t k) {
  std::vector<double> w = cell_weights(cluster.members, params);
  if (std::all_of(w.begin(), w.end(), [](double v) { return !(v > 0.0); })) std::fill(w.begin(), w.end(), 1.0);
  std::vector<LatLon> pts;
  pts.reserve(cluster.members.size());
  for (const CellStats& s : cluster.members) pts.push_back(s.pos);
  const std::size_t kk = std::min(k, pts.size());
  const KMeansResult km = weighted_kmeanspp(pts, w, std::max<std::size_t>(kk, 1), seed);
  if (km.centroids.size() == 1) return km.centroids[0];
  std::vector<double> mass(km.centroids.size(), 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i) mass[km.assignment[i]] += w[i];
  return km.centroids[static_cast<std::size_t>(std::max_element(mass.begin(), mass.end()) - mass.begin())];
}

std::optional<Anchor> infer_anchor(const UserStream& stream, const LoadShareFlags& flags, AnchorKind kind,
                                   const SegmentParams& params, const TowerRegistry& towers,
                                   const Calendar& calendar, const AnchorOptions& options) {
  auto cluster = select_stay_cluster(stay_clusters(stream, flags, kind, towers, calendar, options));
  if (!cluster) return std::nullopt;
  const std::uint64_t seed = derive_seed(options.seed, stream.user_id);
  return Anchor{weighted_anchor(*cluster, params, seed, options.k), cluster->active_days};
}

std::optional<Anchor> calldays_anchor(const UserStream& stream, AnchorKind kind, const TowerRegistry& towers,
                                      const Calendar& calendar, const AnchorOptions& options) {
  std::map<CellIndex, CellAccumulator> acc;
  for (std::size_t i : restrict_records(stream, kind, calendar, options)) {
    const CdrRecord& r = stream.records[i];
    ++acc[r.cell].records;
    acc[r.cell].days.insert(calendar.clock().day(r.ts));
  }
  if (acc.empty()) return std::nullopt;
  auto best = acc.begin();
  for (auto it = std::next(acc.begin()); it != acc.end(); ++it) {
    const auto days = it->second.days.size();
    const auto best_days = best->second.days.size();
    if (days > best_days || (days == best_days && it->second.records > best->second.records)) best = it;
  }
  return Anchor{towers[best->first].pos, best->second.days.size()};
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::infinity();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

FitResult fit_segment_params(const std::vector<FitSample>& samples, double step, DistanceMode mode,
                             unsigned workers) {
  if (samples.empty()) throw Error(ErrorCode::NoLabeledUsers, "no users with ground-truth anchors");
  if (!(step > 0.0) || step > 1.0) throw Error(ErrorCode::InvalidConfig, "grid step must be in (0, 1]");
  const int steps = static_cast<int>(std::lround(1.0 / step));
  std::vector<std::tuple<int, int, int, int>> order;  // (sum, a, b, c)
  for (int a = 0; a <= steps; ++a) {
    for (int b = 0; b <= steps; ++b) {
      for (int c = 0; c <= steps; ++c) {
        if (a + b + c == 0) continue;
        order.emplace_back(a + b + c, a, b, c);
      }
    }
  }
  std::sort(order.begin(), order.end());

  auto params_at = [&](std::size_t g) {
    const auto& [sum, a, b, c] = order[g];
    return SegmentParams{a / static_cast<double>(steps), b / static_cast<double>(steps), c / static_cast<double>(steps)};
  };
  std::vector<double> medians(order.size());
  parallel_for(order.size(), workers, [&](std::size_t g) {
    const SegmentParams p = params_at(g);
    std::vector<double> errors(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const LatLon anchor = weighted_anchor(samples[i].cluster, p, samples[i].seed);
      errors[i] = distance_km(anchor, samples[i].truth, mode) * 1000.0;
    }
    medians[g] = median(std::move(errors));
  });

  FitResult best;
  best.users = samples.size();
  best.median_error_m = std::numeric_limits<double>::infinity();
  bool have = false;
  for (std::size_t g = 0; g < order.size(); ++g) {
    if (!have || medians[g] < best.median_error_m - 1e-9) {
      have = true;
      best.params = params_at(g);
      best.median_error_m = medians[g];
    }
  }
  return best;
}

}  // namespace cdrloc
