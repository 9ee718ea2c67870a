#include "cdrloc/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "cdrloc/csv.hpp"

namespace cdrloc {

namespace {

struct HeaderSpec {
  DatasetKind kind;
  std::string_view name;
  std::string_view header;
};

constexpr HeaderSpec kHeaders[] = {
    {DatasetKind::Cdr, "cdr", "user_id,timestamp_iso8601,cell_id,duration_s"},
    {DatasetKind::Towers, "towers", "cell_id,lat,lon,transmit_power_mw,region_id"},
    {DatasetKind::Gps, "gps", "user_id,timestamp_iso8601,lat,lon"},
    {DatasetKind::Labels, "labels", "user_id,segment"},
    {DatasetKind::Regions, "regions", "region_id,lat_min,lat_max,lon_min,lon_max,is_study_area"},
    {DatasetKind::Speeds, "speeds", "region_id,window_id,avg_speed_kmph"},
};

std::size_t column_count(DatasetKind kind) {
  const std::string_view h = expected_header(kind);
  return static_cast<std::size_t>(std::count(h.begin(), h.end(), ',')) + 1;
}

/// Opens `path`, validates the header and hands every data row to `on_row`.
template <typename OnRow>
void read_rows(const std::string& path, DatasetKind kind, std::vector<Rejection>& rejected, OnRow on_row) {
  csv::LineReader reader(path);
  std::string_view line;
  if (!reader.next(line)) throw Error(ErrorCode::MalformedHeader, path + " is empty", 1);
  if (line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
  std::vector<std::string_view> fields;
  csv::split(line, ',', fields);
  std::vector<std::string_view> want;
  csv::split(expected_header(kind), ',', want);
  if (fields != want) {
    throw Error(ErrorCode::MalformedHeader,
                path + ": expected '" + std::string(expected_header(kind)) + "' got '" + std::string(line) + "'", 1);
  }
  const std::size_t ncols = column_count(kind);
  while (reader.next(line)) {
    if (csv::trim(line).empty()) continue;
    csv::split(line, ',', fields);
    const std::size_t line_no = reader.line_number();
    if (fields.size() != ncols) {
      rejected.push_back({line_no, ErrorCode::RowParseError,
                          "expected " + std::to_string(ncols) + " fields, got " + std::to_string(fields.size())});
      continue;
    }
    on_row(fields, line_no);
  }
}

void reject(std::vector<Rejection>& out, std::size_t line, std::string detail,
            ErrorCode code = ErrorCode::RowParseError) {
  out.push_back({line, code, std::move(detail)});
}

}  // namespace

std::string_view expected_header(DatasetKind kind) {
  for (const auto& h : kHeaders) {
    if (h.kind == kind) return h.header;
  }
  return {};
}

std::string_view to_string(DatasetKind kind) {
  for (const auto& h : kHeaders) {
    if (h.kind == kind) return h.name;
  }
  return {};
}

Loaded<RegionGrid> load_regions(const std::string& path) {
  Loaded<RegionGrid> out;
  std::vector<Region> regions;
  std::set<std::string, std::less<>> ids;
  read_rows(path, DatasetKind::Regions, out.rejected, [&](const auto& f, std::size_t line) {
    Region r;
    r.id = std::string(f[0]);
    const auto a = csv::parse_double(f[1]);
    const auto b = csv::parse_double(f[2]);
    const auto c = csv::parse_double(f[3]);
    const auto d = csv::parse_double(f[4]);
    if (r.id.empty() || !a || !b || !c || !d || (f[5] != "0" && f[5] != "1")) {
      reject(out.rejected, line, "unparseable region row");
      return;
    }
    r.bounds = Rect{*a, *b, *c, *d};
    r.study_area = f[5] == "1";
    if (!(r.bounds.lat_min < r.bounds.lat_max) || !(r.bounds.lon_min < r.bounds.lon_max) ||
        !valid_coordinates({r.bounds.lat_min, r.bounds.lon_min}) ||
        !valid_coordinates({r.bounds.lat_max, r.bounds.lon_max})) {
      reject(out.rejected, line, "invalid extent for region " + r.id);
      return;
    }
    if (ids.count(r.id) != 0) {
      reject(out.rejected, line, "duplicate region " + r.id, ErrorCode::DuplicateKey);
      return;
    }
    for (const Region& other : regions) {
      if (r.bounds.lat_min < other.bounds.lat_max && other.bounds.lat_min < r.bounds.lat_max &&
          r.bounds.lon_min < other.bounds.lon_max && other.bounds.lon_min < r.bounds.lon_max) {
        reject(out.rejected, line, "region " + r.id + " overlaps " + other.id);
        return;
      }
    }
    ids.insert(r.id);
    regions.push_back(std::move(r));
  });
  out.value = RegionGrid(std::move(regions));
  return out;
}

Loaded<TowerRegistry> load_towers(const std::string& path, const RegionGrid& grid) {
  Loaded<TowerRegistry> out;
  std::vector<CellTower> towers;
  std::set<std::string, std::less<>> ids;
  read_rows(path, DatasetKind::Towers, out.rejected, [&](const auto& f, std::size_t line) {
    CellTower t;
    t.cell_id = std::string(f[0]);
    const auto lat = csv::parse_double(f[1]);
    const auto lon = csv::parse_double(f[2]);
    const auto power = csv::parse_double(f[3]);
    t.region_id = std::string(f[4]);
    if (t.cell_id.empty() || !lat || !lon || !power) {
      reject(out.rejected, line, "unparseable tower row");
      return;
    }
    t.pos = {*lat, *lon};
    t.transmit_power_mw = *power;
    if (!valid_coordinates(t.pos)) {
      reject(out.rejected, line, "coordinates out of range for " + t.cell_id);
      return;
    }
    if (!(t.transmit_power_mw > 0.0)) {
      reject(out.rejected, line, "transmit power must be > 0 for " + t.cell_id, ErrorCode::NonPositivePower);
      return;
    }
    if (ids.count(t.cell_id) != 0) {
      reject(out.rejected, line, "duplicate cell " + t.cell_id, ErrorCode::DuplicateKey);
      return;
    }
    if (!grid.empty()) {
      const auto region = grid.region_of(t.pos);
      if (!region) {
        reject(out.rejected, line, "cell " + t.cell_id + " lies outside all regions");
        return;
      }
      if (*region != t.region_id) {
        reject(out.rejected, line,
               "cell " + t.cell_id + " declares region " + t.region_id + " but lies in " + std::string(*region));
        return;
      }
    }
    ids.insert(t.cell_id);
    towers.push_back(std::move(t));
  });
  out.value = TowerRegistry(std::move(towers));
  return out;
}

Loaded<CdrTable> load_cdr(const std::string& path, const TowerRegistry& towers, const CdrLoadOptions& options) {
  Loaded<CdrTable> out;
  CdrTable& table = out.value;
  std::unordered_map<std::string, std::uint32_t> user_index;
  std::string key;
  read_rows(path, DatasetKind::Cdr, out.rejected, [&](const auto& f, std::size_t line) {
    if (f[0].empty()) {
      reject(out.rejected, line, "empty user_id");
      return;
    }
    const auto ts = parse_iso8601(f[1]);
    if (!ts) {
      reject(out.rejected, line, "bad timestamp '" + std::string(f[1]) + "'");
      return;
    }
    if ((options.study_start && *ts < *options.study_start) || (options.study_end && *ts >= *options.study_end)) {
      reject(out.rejected, line, "timestamp outside study period");
      return;
    }
    const auto cell = towers.find(f[2]);
    if (!cell) {
      reject(out.rejected, line, "unknown cell '" + std::string(f[2]) + "'", ErrorCode::UnknownCell);
      return;
    }
    const auto duration = csv::parse_double(f[3]);
    if (!duration || *duration < 0.0 || *duration > 2.0e9) {
      reject(out.rejected, line, "duration must be a number >= 0");
      return;
    }
    key.assign(f[0]);
    auto [it, inserted] = user_index.try_emplace(key, static_cast<std::uint32_t>(table.user_ids.size()));
    if (inserted) table.user_ids.push_back(key);
    table.user.push_back(it->second);
    table.records.push_back(CdrRecord{*ts, *cell, static_cast<std::int32_t>(std::llround(*duration))});
  });
  return out;
}

Loaded<std::map<std::string, std::vector<GpsFix>>> load_gps(const std::string& path) {
  Loaded<std::map<std::string, std::vector<GpsFix>>> out;
  read_rows(path, DatasetKind::Gps, out.rejected, [&](const auto& f, std::size_t line) {
    const auto ts = parse_iso8601(f[1]);
    const auto lat = csv::parse_double(f[2]);
    const auto lon = csv::parse_double(f[3]);
    if (f[0].empty() || !ts || !lat || !lon || !valid_coordinates({*lat, *lon})) {
      reject(out.rejected, line, "unparseable gps row");
      return;
    }
    out.value[std::string(f[0])].push_back(GpsFix{*ts, {*lat, *lon}});
  });
  for (auto& [user, fixes] : out.value) {
    std::stable_sort(fixes.begin(), fixes.end(), [](const GpsFix& a, const GpsFix& b) { return a.ts < b.ts; });
  }
  return out;
}

Loaded<std::map<std::string, UserSegment>> load_labels(const std::string& path) {
  Loaded<std::map<std::string, UserSegment>> out;
  read_rows(path, DatasetKind::Labels, out.rejected, [&](const auto& f, std::size_t line) {
    const auto seg = parse_segment(f[1]);
    if (f[0].empty() || !seg) {
      reject(out.rejected, line, "unknown segment '" + std::string(f[1]) + "'");
      return;
    }
    if (!out.value.emplace(std::string(f[0]), *seg).second) {
      reject(out.rejected, line, "duplicate label for " + std::string(f[0]), ErrorCode::DuplicateKey);
    }
  });
  return out;
}

Loaded<std::vector<SpeedPrior>> load_speeds(const std::string& path) {
  Loaded<std::vector<SpeedPrior>> out;
  std::set<std::pair<std::string, int>> keys;
  read_rows(path, DatasetKind::Speeds, out.rejected, [&](const auto& f, std::size_t line) {
    const auto window = csv::parse_int(f[1]);
    const auto speed = csv::parse_double(f[2]);
    if (f[0].empty() || !window || *window < 0 || *window >= kWindowCount || !speed || *speed < 0.0) {
      reject(out.rejected, line, "unparseable speed row");
      return;
    }
    if (!keys.emplace(std::string(f[0]), static_cast<int>(*window)).second) {
      reject(out.rejected, line, "duplicate speed key", ErrorCode::DuplicateKey);
      return;
    }
    out.value.push_back(SpeedPrior{std::string(f[0]), static_cast<int>(*window), *speed});
  });
  return out;
}

namespace {

bool same_key(const CdrRecord& a, const CdrRecord& b) { return a.ts == b.ts && a.cell == b.cell; }

std::size_t sort_and_dedupe(std::vector<CdrRecord>& records) {
  std::sort(records.begin(), records.end(), [](const CdrRecord& a, const CdrRecord& b) {
    if (record_less(a, b)) return true;
    if (record_less(b, a)) return false;
    return a.duration_s < b.duration_s;
  });
  const auto end = std::unique(records.begin(), records.end(), same_key);
  const auto removed = static_cast<std::size_t>(records.end() - end);
  records.erase(end, records.end());
  return removed;
}

}  // namespace

CanonicalStreams canonicalize_streams(const CdrTable& table) {
  const std::size_t nusers = table.user_ids.size();
  std::vector<std::size_t> counts(nusers, 0);
  for (std::uint32_t u : table.user) ++counts[u];
  std::vector<UserStream> streams(nusers);
  for (std::size_t u = 0; u < nusers; ++u) {
    streams[u].user_id = table.user_ids[u];
    streams[u].records.reserve(counts[u]);
  }
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    streams[table.user[i]].records.push_back(table.records[i]);
  }
  return canonicalize_streams(std::move(streams));
}

CanonicalStreams canonicalize_streams(std::vector<UserStream> streams) {
  CanonicalStreams out;
  std::sort(streams.begin(), streams.end(),
            [](const UserStream& a, const UserStream& b) { return a.user_id < b.user_id; });
  for (auto& s : streams) {
    if (!out.streams.empty() && out.streams.back().user_id == s.user_id) {
      UserStream& dst = out.streams.back();
      dst.records.insert(dst.records.end(), s.records.begin(), s.records.end());
      dst.gps.insert(dst.gps.end(), s.gps.begin(), s.gps.end());
      if (!dst.segment) dst.segment = s.segment;
      continue;
    }
    out.streams.push_back(std::move(s));
  }
  for (auto& s : out.streams) {
    out.duplicates_removed += sort_and_dedupe(s.records);
    std::stable_sort(s.gps.begin(), s.gps.end(), [](const GpsFix& a, const GpsFix& b) { return a.ts < b.ts; });
  }
  return out;
}

void attach_gps(std::vector<UserStream>& streams, const std::map<std::string, std::vector<GpsFix>>& gps) {
  for (auto& s : streams) {
    if (auto it = gps.find(s.user_id); it != gps.end()) s.gps = it->second;
  }
}

void attach_labels(std::vector<UserStream>& streams, const std::map<std::string, UserSegment>& labels) {
  for (auto& s : streams) {
    if (auto it = labels.find(s.user_id); it != labels.end()) s.segment = it->second;
  }
}

std::vector<std::optional<std::size_t>> tower_regions(const TowerRegistry& towers, const RegionGrid& grid) {
  std::vector<std::optional<std::size_t>> out;
  out.reserve(towers.size());
  for (const CellTower& t : towers.towers()) out.push_back(grid.index_of(t.pos));
  return out;
}

StudyAreaResult study_area_filter(std::vector<UserStream> streams, const TowerRegistry& towers,
                                  const RegionGrid& grid, double min_fraction) {
  std::vector<char> inside(towers.size(), 0);
  for (std::size_t i = 0; i < towers.size(); ++i) {
    inside[i] = grid.in_study_area(towers.towers()[i].pos) ? 1 : 0;
  }
  StudyAreaResult out;
  for (auto& s : streams) {
    const auto n_in = static_cast<std::size_t>(std::count_if(
        s.records.begin(), s.records.end(), [&](const CdrRecord& r) { return inside[r.cell.value] != 0; }));
    const double fraction = s.records.empty() ? 0.0 : static_cast<double>(n_in) / static_cast<double>(s.records.size());
    if (n_in == 0 || fraction < min_fraction) {
      ++out.dropped_users;
      continue;
    }
    out.dropped_records += s.records.size() - n_in;
    std::erase_if(s.records, [&](const CdrRecord& r) { return inside[r.cell.value] == 0; });
    out.retained.push_back(std::move(s));
  }
  return out;
}

}  // namespace cdrloc
