#include "cdrloc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "cdrloc/csv.hpp"
#include "cdrloc/error.hpp"
#include "cdrloc/parallel.hpp"
#include "cdrloc/rng.hpp"

namespace cdrloc {

namespace {

constexpr double kKmPerDeg = kEarthRadiusKm * std::numbers::pi / 180.0;

void require(bool ok, const std::string& field) {
  if (!ok) throw Error(ErrorCode::InvalidConfig, "bad world config field: " + field);
}

bool rects_intersect(const Rect& a, const Rect& b) {
  return a.lat_min < b.lat_max && b.lat_min < a.lat_max && a.lon_min < b.lon_max && b.lon_min < a.lon_max;
}

LatLon uniform_point(Rng& rng, const Rect& r) {
  return {rng.uniform(r.lat_min, r.lat_max), rng.uniform(r.lon_min, r.lon_max)};
}

std::string numbered(char prefix, std::size_t n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, n);
  return buf;
}

// Calls per hour of local day.
using HourlyRates = std::array<double, 24>;

HourlyRates rates_for(UserSegment s) {
  HourlyRates r{};
  auto fill = [&r](int from, int to, double v) {
    for (int h = from; h <= to; ++h) r[h] = v;
  };
  switch (s) {
    case UserSegment::FullTime:
      fill(0, 5, 0.1); fill(6, 6, 0.5); fill(7, 15, 0.6); fill(16, 16, 0.8);
      fill(17, 21, 2.2); fill(22, 22, 1.0); fill(23, 23, 0.4);
      break;
    case UserSegment::PartTime:
      fill(0, 5, 0.15); fill(6, 8, 0.8); fill(9, 12, 1.0); fill(13, 20, 1.6);
      fill(21, 22, 1.2); fill(23, 23, 0.5);
      break;
    case UserSegment::Student:
      fill(0, 1, 1.0); fill(2, 5, 0.1); fill(6, 14, 0.4); fill(15, 18, 1.5);
      fill(19, 22, 2.8); fill(23, 23, 2.0);
      break;
    case UserSegment::Housewife:
      fill(0, 5, 0.05); fill(6, 8, 1.0); fill(9, 15, 2.2); fill(16, 19, 1.2);
      fill(20, 21, 1.0); fill(22, 23, 0.3);
      break;
    case UserSegment::Retired:
      fill(0, 4, 0.05); fill(5, 5, 0.6); fill(6, 9, 2.4); fill(10, 13, 1.4);
      fill(14, 18, 0.9); fill(19, 19, 0.6); fill(20, 21, 0.7); fill(22, 23, 0.1);
      break;
    case UserSegment::Other:
      fill(0, 1, 0.8); fill(2, 6, 0.1); fill(7, 10, 0.3); fill(11, 18, 1.2);
      fill(19, 23, 1.8);
      break;
  }
  return r;
}

double weekend_multiplier(UserSegment s) {
  switch (s) {
    case UserSegment::FullTime: return 1.3;
    case UserSegment::Student: return 1.2;
    case UserSegment::Housewife: return 0.7;
    case UserSegment::Other: return 0.8;
    default: return 1.0;
  }
}

// Out-of-home activity for a given local day, in minutes after midnight.
struct Outing {
  int leave_home;
  int leave_work;
};

std::optional<Outing> outing_for(UserSegment s, int iso_weekday, bool holiday) {
  const bool weekday = iso_weekday <= 5 && !holiday;
  switch (s) {
    case UserSegment::FullTime:
      if (weekday) return Outing{7 * 60 + 30, 16 * 60 + 30};
      return std::nullopt;
    case UserSegment::PartTime:
      if (!holiday && (iso_weekday == 1 || iso_weekday == 3 || iso_weekday == 5 || iso_weekday == 6)) {
        return Outing{9 * 60 + 30, 16 * 60 + 30};
      }
      return std::nullopt;
    case UserSegment::Student:
      if (weekday) return Outing{7 * 60, 15 * 60 + 30};
      return std::nullopt;
    case UserSegment::Other:
      if (iso_weekday != 2 && iso_weekday != 7) return Outing{11 * 60, 19 * 60};
      return std::nullopt;
    default:
      return std::nullopt;
  }
}

struct Leg {
  Timestamp t0;
  Timestamp t1;
  LatLon a;
  LatLon b;
  int place;  // 0 home, 1 work, -1 travelling
};

LatLon lerp(const Leg& leg, Timestamp t) {
  if (leg.place >= 0 || leg.t1 <= leg.t0) return leg.a;
  const double f = std::clamp(static_cast<double>(t - leg.t0) / static_cast<double>(leg.t1 - leg.t0), 0.0, 1.0);
  return {leg.a.lat + f * (leg.b.lat - leg.a.lat), leg.a.lon + f * (leg.b.lon - leg.a.lon)};
}

/// Walks a contiguous leg list with non-decreasing query times.
class LegCursor {
 public:
  explicit LegCursor(const std::vector<Leg>& legs) : legs_(legs) {}
  const Leg& at(Timestamp t) {
    while (i_ + 1 < legs_.size() && t >= legs_[i_].t1) ++i_;
    return legs_[i_];
  }

 private:
  const std::vector<Leg>& legs_;
  std::size_t i_ = 0;
};

}  // namespace

void validate(const WorldConfig& c) {
  require(c.area.lat_min < c.area.lat_max && c.area.lon_min < c.area.lon_max, "area");
  require(c.urban.lat_min >= c.area.lat_min && c.urban.lat_max <= c.area.lat_max &&
              c.urban.lon_min >= c.area.lon_min && c.urban.lon_max <= c.area.lon_max &&
              c.urban.lat_min < c.urban.lat_max && c.urban.lon_min < c.urban.lon_max,
          "urban");
  require(c.region_rows >= 1 && c.region_cols >= 1, "region_rows/region_cols");
  require(c.district_rows >= 1 && c.district_cols >= 1, "district_rows/district_cols");
  require(c.macro_spacing_km > 0.0, "macro_spacing_km");
  require(c.small_spacing_km > 0.0, "small_spacing_km");
  require(c.urban_density >= 1.0, "urban_density");
  require(c.jitter >= 0.0 && c.jitter < 0.5, "jitter");
  require(!c.macro_power_mw.empty() && !c.small_power_mw.empty(), "power choices");
  for (double p : c.macro_power_mw) require(p > 0.0, "macro_power_mw");
  for (double p : c.small_power_mw) require(p > 0.0, "small_power_mw");
  require(c.urban_power_factor > 0.0 && c.urban_power_factor <= 1.0, "urban_power_factor");
  require(c.min_rx > 0.0, "min_rx");
  require(c.home_max_serving_km >= 0.0, "home_max_serving_km");
  require(c.users >= 1, "users");
  require(c.days >= 1, "days");
  require(c.p_ls >= 0.0 && c.p_ls <= 1.0, "p_ls");
  require(c.panel_fraction >= 0.0 && c.panel_fraction <= 1.0, "panel_fraction");
  require(c.gps_interval_s > 0, "gps_interval_s");
  require(c.gps_noise_m >= 0.0, "gps_noise_m");
  require(c.work_urban_fraction >= 0.0 && c.work_urban_fraction <= 1.0, "work_urban_fraction");
  require(c.call_rate_scale > 0.0, "call_rate_scale");
  require(c.burst_probability >= 0.0 && c.burst_probability <= 1.0, "burst_probability");
  require(c.burst_mean_extra >= 0.0, "burst_mean_extra");
  require(c.burst_gap_s > 0.0, "burst_gap_s");
  require(c.profile_blend >= 0.0 && c.profile_blend <= 1.0, "profile_blend");
  double mix = 0.0;
  for (double m : c.segment_mix) {
    require(m >= 0.0, "segment_mix");
    mix += m;
  }
  require(mix > 0.0, "segment_mix");
  for (double v : c.window_speed_kmph) require(v > 0.0, "window_speed_kmph");
  require(c.urban_speed_factor > 0.0, "urban_speed_factor");
  require(c.min_region_factor > 0.0 && c.min_region_factor <= c.max_region_factor, "region factors");
  require(c.tz_offset_minutes > -24 * 60 && c.tz_offset_minutes < 24 * 60, "tz_offset_minutes");
}

void TowerIndex::build(const TowerRegistry& towers, const Rect& area, double bucket) {
  lat0 = area.lat_min;
  lon0 = area.lon_min;
  km_per_deg_lat = kKmPerDeg;
  km_per_deg_lon = kKmPerDeg * std::cos((area.lat_min + area.lat_max) * 0.5 * std::numbers::pi / 180.0);
  bucket_km = bucket;
  nx = std::max(1, static_cast<int>(std::ceil(area.width() * km_per_deg_lon / bucket)));
  ny = std::max(1, static_cast<int>(std::ceil(area.height() * km_per_deg_lat / bucket)));
  buckets.assign(static_cast<std::size_t>(nx) * ny, {});
  x.clear();
  y.clear();
  power.clear();
  for (std::uint32_t i = 0; i < towers.size(); ++i) {
    const CellTower& t = towers[CellIndex{i}];
    x.push_back(to_x(t.pos));
    y.push_back(to_y(t.pos));
    power.push_back(t.transmit_power_mw);
    const int bx = std::clamp(static_cast<int>(x.back() / bucket), 0, nx - 1);
    const int by = std::clamp(static_cast<int>(y.back() / bucket), 0, ny - 1);
    buckets[static_cast<std::size_t>(by) * nx + bx].push_back(i);
  }
}

double World::speed_at(LatLon p, int window) const {
  const auto r = regions.index_of(p);
  if (!r) return config.window_speed_kmph[window];
  return speeds[*r][window];
}

World generate_world(const WorldConfig& config) {
  validate(config);
  World w;
  w.config = config;
  Rng rng(derive_seed(config.seed, "world"));
  w.regions = RegionGrid::uniform(config.area, config.region_rows, config.region_cols, "R");
  w.districts = RegionGrid::uniform(config.area, config.district_rows, config.district_cols, "D");

  const double lat_scale = kKmPerDeg;
  const double lon_scale = kKmPerDeg * std::cos((config.area.lat_min + config.area.lat_max) * 0.5 *
                                                std::numbers::pi / 180.0);
  std::vector<CellTower> towers;
  auto lay = [&](const Rect& r, double spacing_km, bool urban_layer, const std::vector<double>& powers,
                 double power_factor) {
    const double dlat = spacing_km / lat_scale;
    const double dlon = spacing_km / lon_scale;
    const int rows = std::max(1, static_cast<int>(std::floor(r.height() / dlat)));
    const int cols = std::max(1, static_cast<int>(std::floor(r.width() / dlon)));
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        LatLon p{r.lat_min + (i + 0.5) * dlat, r.lon_min + (j + 0.5) * dlon};
        if (!urban_layer && config.urban.contains(p)) continue;
        p.lat += rng.uniform(-config.jitter, config.jitter) * dlat;
        p.lon += rng.uniform(-config.jitter, config.jitter) * dlon;
        p.lat = std::clamp(p.lat, config.area.lat_min, config.area.lat_max);
        p.lon = std::clamp(p.lon, config.area.lon_min, config.area.lon_max);
        CellTower t;
        t.cell_id = numbered('c', towers.size(), 5);
        t.pos = p;
        t.transmit_power_mw = powers[rng.below(powers.size())] * power_factor;
        t.region_id = std::string(*w.regions.region_of(p));
        towers.push_back(std::move(t));
      }
    }
  };
  const double urban_shrink = 1.0 / std::sqrt(config.urban_density);
  for (const auto& [spacing, powers] : {std::pair{config.macro_spacing_km, &config.macro_power_mw},
                                        std::pair{config.small_spacing_km, &config.small_power_mw}}) {
    lay(config.area, spacing, false, *powers, 1.0);
    lay(config.urban, spacing * urban_shrink, true, *powers, config.urban_power_factor);
  }
  w.towers = TowerRegistry(std::move(towers));

  double max_power = 0.0;
  for (const auto& t : w.towers.towers()) max_power = std::max(max_power, t.transmit_power_mw);
  w.index.build(w.towers, config.area, std::sqrt(max_power / config.min_rx));

  for (const Region& r : w.regions.regions()) {
    const double factor = rects_intersect(r.bounds, config.urban)
                              ? config.urban_speed_factor
                              : rng.uniform(config.min_region_factor, config.max_region_factor);
    std::array<double, kWindowCount> s{};
    for (int k = 0; k < kWindowCount; ++k) s[k] = config.window_speed_kmph[k] * factor;
    w.speeds.push_back(s);
  }

  double mix_total = 0.0;
  for (double m : config.segment_mix) mix_total += m;
  const int width = config.users > 999999 ? 8 : 6;
  for (std::size_t u = 0; u < config.users; ++u) {
    SimUser user;
    user.user_id = numbered('u', u, width);
    double pick = rng.uniform() * mix_total;
    int seg = 0;
    while (seg + 1 < kSegmentCount && pick >= config.segment_mix[seg]) {
      pick -= config.segment_mix[seg];
      ++seg;
    }
    while (config.segment_mix[seg] == 0.0) --seg;
    user.segment = static_cast<UserSegment>(seg);
    user.home = uniform_point(rng, config.area);
    for (int tries = 0; config.home_max_serving_km > 0.0 && tries < 1000; ++tries) {
      if (haversine_km(user.home, w.towers[covering_cells(w, user.home).front()].pos) <= config.home_max_serving_km)
        break;
      user.home = uniform_point(rng, config.area);
    }
    const bool commutes = user.segment != UserSegment::Housewife && user.segment != UserSegment::Retired;
    const bool urban_work = rng.bernoulli(config.work_urban_fraction);
    const LatLon work = uniform_point(rng, urban_work ? config.urban : config.area);
    if (commutes) user.work = work;
    user.panel = rng.bernoulli(config.panel_fraction);
    w.users.push_back(std::move(user));
  }
  return w;
}

std::vector<CellIndex> covering_cells(const World& world, LatLon p) {
  const TowerIndex& ix = world.index;
  const double px = ix.to_x(p);
  const double py = ix.to_y(p);
  const int bx = static_cast<int>(std::floor(px / ix.bucket_km));
  const int by = static_cast<int>(std::floor(py / ix.bucket_km));
  std::vector<std::pair<double, std::uint32_t>> covering;
  std::pair<double, std::uint32_t> best{-1.0, 0};
  auto consider = [&](std::uint32_t i) {
    const double dx = ix.x[i] - px;
    const double dy = ix.y[i] - py;
    const double d2 = std::max(dx * dx + dy * dy, 1e-6);
    const double rx = ix.power[i] / d2;
    if (rx >= world.config.min_rx) covering.emplace_back(rx, i);
    if (rx > best.first || (rx == best.first && i < best.second)) best = {rx, i};
  };
  for (int yy = by - 1; yy <= by + 1; ++yy) {
    for (int xx = bx - 1; xx <= bx + 1; ++xx) {
      if (xx < 0 || yy < 0 || xx >= ix.nx || yy >= ix.ny) continue;
      for (std::uint32_t i : ix.buckets[static_cast<std::size_t>(yy) * ix.nx + xx]) consider(i);
    }
  }
  if (best.first < 0.0) {
    for (std::uint32_t i = 0; i < ix.x.size(); ++i) consider(i);
  }
  std::vector<CellIndex> out;
  if (covering.empty()) {
    out.push_back(CellIndex{best.second});
    return out;
  }
  std::sort(covering.begin(), covering.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& c : covering) out.push_back(CellIndex{c.second});
  return out;
}

UserTrace simulate_user(const World& world, const SimUser& user, int days, std::uint64_t seed) {
  if (days < 1) throw Error(ErrorCode::InvalidConfig, "days must be >= 1");
  const WorldConfig& cfg = world.config;
  Rng rng(derive_seed(seed, user.user_id));
  const LocalClock clock(cfg.tz_offset_minutes);

  const Timestamp begin = clock.local_midnight(cfg.start_day);
  const Timestamp end = clock.local_midnight(cfg.start_day + days);

  // Daily movement as contiguous legs.
  std::vector<Leg> legs;
  Timestamp cursor = begin;
  auto jitter_s = [&rng](double sd_min) {
    return static_cast<Timestamp>(std::clamp(rng.normal() * sd_min, -3.0 * sd_min, 3.0 * sd_min) * 60.0);
  };
  auto travel_s = [&](LatLon from, LatLon to, Timestamp depart) {
    const double v = world.speed_at(from, window_of(depart, cfg.tz_offset_minutes));
    return static_cast<Timestamp>(std::ceil(haversine_km(from, to) / v * 3600.0));
  };
  for (int d = 0; d < days; ++d) {
    const std::int64_t day = cfg.start_day + d;
    const Timestamp midnight = clock.local_midnight(day);
    const auto outing = user.work ? outing_for(user.segment, iso_weekday_of_day(day), cfg.holidays.count(day) != 0)
                                  : std::nullopt;
    if (!outing) continue;
    Timestamp depart = std::max(cursor, midnight + outing->leave_home * 60 + jitter_s(15.0));
    const Timestamp arrive = depart + travel_s(user.home, *user.work, depart);
    Timestamp leave = midnight + outing->leave_work * 60 + jitter_s(20.0);
    leave = std::max(leave, arrive + 1800);
    const Timestamp back = leave + travel_s(*user.work, user.home, leave);
    legs.push_back({cursor, depart, user.home, user.home, 0});
    legs.push_back({depart, arrive, user.home, *user.work, -1});
    legs.push_back({arrive, leave, *user.work, *user.work, 1});
    legs.push_back({leave, back, *user.work, user.home, -1});
    cursor = back;
  }
  legs.push_back({cursor, std::max(end, cursor + 1), user.home, user.home, 0});

  const std::vector<CellIndex> home_cells = covering_cells(world, user.home);
  const std::vector<CellIndex> work_cells = user.work ? covering_cells(world, *user.work) : std::vector<CellIndex>{};

  UserTrace trace;
  // Individual variation: overall activity and a pull towards the
  // population-average daily profile.
  HourlyRates rates = rates_for(user.segment);
  {
    HourlyRates common{};
    for (UserSegment s : kAllSegments) {
      const HourlyRates r = rates_for(s);
      for (int h = 0; h < 24; ++h) common[h] += r[h] / kSegmentCount;
    }
    const double activity = std::exp(0.3 * std::clamp(rng.normal(), -2.5, 2.5));
    const double blend = rng.uniform(0.0, cfg.profile_blend);
    for (int h = 0; h < 24; ++h) rates[h] = activity * ((1.0 - blend) * rates[h] + blend * common[h]);
  }
  const double weekend = weekend_multiplier(user.segment);
  LegCursor legs_at(legs);
  std::vector<Timestamp> times;
  for (int d = 0; d < days; ++d) {
    const std::int64_t day = cfg.start_day + d;
    const Timestamp midnight = clock.local_midnight(day);
    const double mult = (iso_weekday_of_day(day) >= 6 ? weekend : 1.0) * cfg.call_rate_scale;
    for (int h = 0; h < 24; ++h) {
      const int n = rng.poisson(rates[h] * mult);
      times.clear();
      for (int i = 0; i < n; ++i) {
        Timestamp t = midnight + h * 3600 + static_cast<Timestamp>(rng.below(3600));
        times.push_back(t);
        if (!rng.bernoulli(cfg.burst_probability)) continue;
        const int extra = 1 + rng.poisson(std::max(0.0, cfg.burst_mean_extra - 1.0));
        for (int e = 0; e < extra; ++e) {
          t += 1 + static_cast<Timestamp>(rng.exponential(cfg.burst_gap_s));
          times.push_back(t);
        }
      }
      std::sort(times.begin(), times.end());
      for (Timestamp t : times) {
        const Leg& leg = legs_at.at(t);
        const LatLon pos = lerp(leg, t);
        std::vector<CellIndex> moving;
        const std::vector<CellIndex>* cand = &home_cells;
        if (leg.place == 1) {
          cand = &work_cells;
        } else if (leg.place < 0) {
          moving = covering_cells(world, pos);
          cand = &moving;
        }
        SimRecord r;
        r.true_pos = pos;
        r.record.ts = t;
        r.record.duration_s = static_cast<std::int32_t>(1.0 + std::floor(rng.exponential(90.0)));
        if (cand->size() >= 2 && rng.bernoulli(cfg.p_ls)) {
          r.record.cell = (*cand)[1 + rng.below(cand->size() - 1)];
          r.load_shared = true;
        } else {
          r.record.cell = cand->front();
        }
        trace.records.push_back(r);
      }
    }
  }
  std::stable_sort(trace.records.begin(), trace.records.end(),
                   [](const SimRecord& a, const SimRecord& b) { return record_less(a.record, b.record); });
  trace.records.erase(std::unique(trace.records.begin(), trace.records.end(),
                                  [](const SimRecord& a, const SimRecord& b) {
                                    return a.record.ts == b.record.ts && a.record.cell == b.record.cell;
                                  }),
                      trace.records.end());
  for (std::size_t k = 0; k < trace.records.size(); ++k) {
    SimRecord& r = trace.records[k];
    r.truth = r.load_shared;
    if (k > 0) {
      const SimRecord& prev = trace.records[k - 1];
      if (prev.record.cell != r.record.cell && haversine_km(prev.true_pos, r.true_pos) <= 0.1) r.truth = true;
    }
  }

  if (user.panel) {
    LegCursor gps_at(legs);
    const double noise_lat = cfg.gps_noise_m / 1000.0 / kKmPerDeg;
    const double noise_lon = noise_lat / std::cos(user.home.lat * std::numbers::pi / 180.0);
    for (Timestamp t = begin; t < end; t += cfg.gps_interval_s) {
      LatLon p = lerp(gps_at.at(t), t);
      p.lat += rng.normal() * noise_lat;
      p.lon += rng.normal() * noise_lon;
      trace.gps.push_back({t, p});
    }
  }
  return trace;
}

std::vector<UserTrace> simulate_traces(const World& world, int days, std::uint64_t seed, unsigned workers) {
  std::vector<UserTrace> out(world.users.size());
  parallel_for(world.users.size(), workers,
               [&](std::size_t i) { out[i] = simulate_user(world, world.users[i], days, seed); });
  return out;
}

std::vector<UserStream> to_streams(const World& world, const std::vector<UserTrace>& traces) {
  std::vector<UserStream> out;
  out.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const SimUser& u = world.users[i];
    UserStream s;
    s.user_id = u.user_id;
    s.records.reserve(traces[i].records.size());
    for (const SimRecord& r : traces[i].records) s.records.push_back(r.record);
    s.gps = traces[i].gps;
    if (u.panel) s.segment = u.segment;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::string coord(double v) { return csv::fixed(v, 6); }

void write_regions(const RegionGrid& grid, const std::string& path) {
  csv::Writer w(path, expected_header(DatasetKind::Regions));
  for (const Region& r : grid.regions()) {
    w.row(r.id + "," + coord(r.bounds.lat_min) + "," + coord(r.bounds.lat_max) + "," + coord(r.bounds.lon_min) +
          "," + coord(r.bounds.lon_max) + "," + (r.study_area ? "1" : "0"));
  }
  w.close();
}

}  // namespace

EmitSummary emit_dataset(const World& world, const std::string& dir, int days, std::uint64_t seed,
                         bool write_truth_flags, unsigned workers) {
  if (days < 1) throw Error(ErrorCode::InvalidConfig, "days must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
  const auto path = [&dir](const char* name) { return (std::filesystem::path(dir) / name).string(); };

  {
    csv::Writer w(path("towers.csv"), expected_header(DatasetKind::Towers));
    for (const CellTower& t : world.towers.towers()) {
      w.row(t.cell_id + "," + coord(t.pos.lat) + "," + coord(t.pos.lon) + "," + csv::fixed(t.transmit_power_mw, 1) +
            "," + t.region_id);
    }
    w.close();
  }
  write_regions(world.regions, path("regions.csv"));
  write_regions(world.districts, path("districts.csv"));
  {
    csv::Writer w(path("speeds.csv"), expected_header(DatasetKind::Speeds));
    for (std::size_t r = 0; r < world.regions.size(); ++r) {
      for (int k = 0; k < kWindowCount; ++k) {
        w.row(world.regions.regions()[r].id + "," + std::to_string(k) + "," + csv::fixed(world.speeds[r][k], 2));
      }
    }
    w.close();
  }
  {
    csv::Writer labels(path("labels.csv"), expected_header(DatasetKind::Labels));
    csv::Writer anchors(path("truth_anchors.csv"), "user_id,kind,lat,lon");
    for (const SimUser& u : world.users) {
      if (u.panel) labels.row(u.user_id + "," + std::string(to_string(u.segment)));
      anchors.row(u.user_id + ",home," + coord(u.home.lat) + "," + coord(u.home.lon));
      if (u.work) anchors.row(u.user_id + ",work," + coord(u.work->lat) + "," + coord(u.work->lon));
    }
    labels.close();
    anchors.close();
  }

  EmitSummary summary;
  csv::Writer cdr(path("cdr.csv"), expected_header(DatasetKind::Cdr));
  csv::Writer gps(path("gps.csv"), expected_header(DatasetKind::Gps));
  std::optional<csv::Writer> flags;
  if (write_truth_flags) flags.emplace(path("truth_flags.csv"), "user_id,timestamp_iso8601,cell_id,flag");

  const std::size_t batch = std::max<std::size_t>(64, std::size_t{workers} * 32);
  std::vector<UserTrace> traces;
  std::string line;
  for (std::size_t first = 0; first < world.users.size(); first += batch) {
    const std::size_t n = std::min(batch, world.users.size() - first);
    traces.assign(n, {});
    parallel_for(n, workers, [&](std::size_t i) {
      traces[i] = simulate_user(world, world.users[first + i], days, seed);
    });
    for (std::size_t i = 0; i < n; ++i) {
      const SimUser& u = world.users[first + i];
      for (const SimRecord& r : traces[i].records) {
        const std::string ts = format_iso8601(r.record.ts);
        const std::string& cell = world.towers[r.record.cell].cell_id;
        line.clear();
        line.append(u.user_id).append(",").append(ts).append(",").append(cell).append(",");
        line.append(std::to_string(r.record.duration_s));
        cdr.row(line);
        if (flags) {
          line.clear();
          line.append(u.user_id).append(",").append(ts).append(",").append(cell).append(r.truth ? ",1" : ",0");
          flags->row(line);
        }
      }
      for (const GpsFix& f : traces[i].gps) {
        line.clear();
        line.append(u.user_id).append(",").append(format_iso8601(f.ts)).append(",");
        line.append(coord(f.pos.lat)).append(",").append(coord(f.pos.lon));
        gps.row(line);
      }
      summary.cdr_rows += traces[i].records.size();
      summary.gps_rows += traces[i].gps.size();
      ++summary.users;
    }
  }
  cdr.close();
  gps.close();
  if (flags) flags->close();
  return summary;
}

TruthAnchors load_truth_anchors(const std::string& path) {
  csv::LineReader reader(path);
  std::string_view line;
  if (!reader.next(line) || csv::trim(line) != "user_id,kind,lat,lon") {
    throw Error(ErrorCode::MalformedHeader, path + " header must be user_id,kind,lat,lon", 1);
  }
  TruthAnchors out;
  std::vector<std::string_view> f;
  while (reader.next(line)) {
    if (csv::trim(line).empty()) continue;
    csv::split(line, ',', f);
    const auto lat = f.size() == 4 ? csv::parse_double(f[2]) : std::nullopt;
    const auto lon = f.size() == 4 ? csv::parse_double(f[3]) : std::nullopt;
    if (!lat || !lon || (f[1] != "home" && f[1] != "work")) {
      throw Error(ErrorCode::RowParseError, "bad truth anchor row", reader.line_number());
    }
    auto& target = f[1] == "home" ? out.home : out.work;
    target[std::string(f[0])] = LatLon{*lat, *lon};
  }
  return out;
}

}  // namespace cdrloc
