#include "cdrloc/loadshare.hpp"

#include <algorithm>
#include <cmath>

#include "cdrloc/csv.hpp"
#include "cdrloc/error.hpp"

namespace cdrloc {

double pairwise_speed(const CdrRecord& prev, const CdrRecord& curr, const TowerRegistry& towers, DistanceMode mode) {
  if (prev.cell.value >= towers.size() || curr.cell.value >= towers.size()) {
    throw Error(ErrorCode::UnknownCell, "cell index outside registry");
  }
  if (prev.cell == curr.cell) return 0.0;
  const double dt_h = static_cast<double>(std::llabs(curr.ts - prev.ts)) / 3600.0;
  if (dt_h == 0.0) return kInfiniteSpeed;
  return distance_km(towers[prev.cell].pos, towers[curr.cell].pos, mode) / dt_h;
}

LoadShareFlags detect_fixed(const UserStream& stream, const TowerRegistry& towers, double threshold_kmph,
                            DistanceMode mode) {
  LoadShareFlags flags(stream.records.size(), 0);
  for (std::size_t k = 1; k < stream.records.size(); ++k) {
    flags[k] = pairwise_speed(stream.records[k - 1], stream.records[k], towers, mode) > threshold_kmph ? 1 : 0;
  }
  return flags;
}

namespace {

/// Nearest fix to `ts`, or nullptr when none lies within `max_gap`.
const GpsFix* nearest_fix(const std::vector<GpsFix>& gps, Timestamp ts, std::int64_t max_gap) {
  auto it = std::lower_bound(gps.begin(), gps.end(), ts, [](const GpsFix& f, Timestamp t) { return f.ts < t; });
  const GpsFix* best = nullptr;
  std::int64_t best_gap = 0;
  if (it != gps.end()) {
    best = &*it;
    best_gap = it->ts - ts;
  }
  if (it != gps.begin()) {
    const GpsFix& before = *std::prev(it);
    const std::int64_t gap = ts - before.ts;
    if (best == nullptr || gap <= best_gap) {
      best = &before;
      best_gap = gap;
    }
  }
  if (best == nullptr || best_gap > max_gap) return nullptr;
  return best;
}

}  // namespace

std::vector<Label> label_ground_truth(const UserStream& stream, const GroundTruthOptions& options) {
  if (stream.gps.empty()) throw Error(ErrorCode::NoGps, "user " + stream.user_id);
  std::vector<Label> labels(stream.records.size(), Label::Unknown);
  const GpsFix* prev_fix =
      stream.records.empty() ? nullptr : nearest_fix(stream.gps, stream.records[0].ts, options.max_fix_gap_s);
  for (std::size_t k = 1; k < stream.records.size(); ++k) {
    const GpsFix* fix = nearest_fix(stream.gps, stream.records[k].ts, options.max_fix_gap_s);
    if (fix != nullptr && prev_fix != nullptr) {
      if (stream.records[k].cell == stream.records[k - 1].cell) {
        labels[k] = Label::Negative;
      } else {
        const double moved = distance_km(prev_fix->pos, fix->pos, options.mode);
        labels[k] = moved <= options.stationary_km ? Label::Positive : Label::Negative;
      }
    }
    prev_fix = fix;
  }
  return labels;
}

std::vector<double> theta_grid(double step, double max) {
  if (!(step > 0.0) || max < 0.0) throw Error(ErrorCode::InvalidConfig, "theta grid needs step > 0 and max >= 0");
  std::vector<double> grid;
  for (int i = 0;; ++i) {
    const double v = step * i;
    if (v > max + 1e-9) break;
    grid.push_back(v);
  }
  return grid;
}

double SpeedTable::threshold(std::optional<std::string_view> region_id, int window_id) const {
  if (!region_id) return default_;
  const auto it = entries_.find({std::string(*region_id), window_id});
  return it == entries_.end() ? default_ : it->second;
}

bool SpeedTable::on_grid(const std::vector<double>& grid) const {
  auto in = [&](double v) { return std::find(grid.begin(), grid.end(), v) != grid.end(); };
  if (!in(default_)) return false;
  return std::all_of(entries_.begin(), entries_.end(), [&](const auto& e) { return in(e.second); });
}

void SpeedTable::save(const std::string& path) const {
  csv::Writer w(path, "region_id,window_id,theta_kmph");
  for (const auto& [key, theta] : entries_) {
    w.row(key.first + "," + std::to_string(key.second) + "," + csv::fixed(theta, 1));
  }
  w.close();
}

SpeedTable SpeedTable::load(const std::string& path, double default_threshold) {
  csv::LineReader reader(path);
  std::string_view line;
  if (!reader.next(line) || csv::trim(line) != "region_id,window_id,theta_kmph") {
    throw Error(ErrorCode::MalformedHeader, path, 1);
  }
  SpeedTable table(default_threshold);
  std::vector<std::string_view> f;
  while (reader.next(line)) {
    if (csv::trim(line).empty()) continue;
    csv::split(line, ',', f);
    const auto window = f.size() == 3 ? csv::parse_int(f[1]) : std::nullopt;
    const auto theta = f.size() == 3 ? csv::parse_double(f[2]) : std::nullopt;
    if (!window || !theta || *window < 0 || *window >= kWindowCount) {
      throw Error(ErrorCode::RowParseError, path, reader.line_number());
    }
    table.set(std::string(f[0]), static_cast<int>(*window), *theta);
  }
  return table;
}

namespace {

struct PairSample {
  double speed;
  bool positive;
};

/// a/b > c/d for non-negative integers with positive denominators.
bool ratio_greater(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  return static_cast<unsigned __int128>(a) * d > static_cast<unsigned __int128>(c) * b;
}

double snap_up(const std::vector<double>& grid, double v) {
  for (double g : grid) {
    if (g >= v) return g;
  }
  return grid.back();
}

}  // namespace

CalibrationResult calibrate_speed_table(const std::vector<UserStream>& streams,
                                        const std::vector<std::vector<Label>>& labels, const TowerRegistry& towers,
                                        const RegionGrid& grid, const CalibrationOptions& options) {
  if (streams.size() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "one label vector per stream");
  if (options.grid.empty()) throw Error(ErrorCode::InvalidConfig, "empty theta grid");
  std::vector<double> sorted_grid = options.grid;
  std::sort(sorted_grid.begin(), sorted_grid.end());

  const auto regions = tower_regions(towers, grid);
  const LocalClock clock(options.tz_offset_minutes);
  std::map<std::pair<std::size_t, int>, std::vector<PairSample>> samples;
  std::size_t labeled = 0;
  for (std::size_t u = 0; u < streams.size(); ++u) {
    const auto& recs = streams[u].records;
    const auto& lab = labels[u];
    if (lab.size() != recs.size()) throw Error(ErrorCode::DimensionMismatch, "labels misaligned for " + streams[u].user_id);
    for (std::size_t k = 1; k < recs.size(); ++k) {
      if (lab[k] == Label::Unknown) continue;
      const auto region = regions.at(recs[k - 1].cell.value);
      if (!region) continue;
      const int window = window_of_minute(clock.minute_of_day(recs[k - 1].ts));
      samples[{*region, window}].push_back({pairwise_speed(recs[k - 1], recs[k], towers, options.mode),
                                            lab[k] == Label::Positive});
      ++labeled;
    }
  }
  if (labeled == 0) throw Error(ErrorCode::NoLabeledData, "no labeled record pairs");

  CalibrationResult out{SpeedTable(options.default_threshold), {}};
  std::map<std::pair<std::string, int>, KeyCalibration> by_key;
  for (auto& [key, pairs] : samples) {
    KeyCalibration kc;
    kc.region_id = grid.regions()[key.first].id;
    kc.window_id = key.second;
    kc.labeled_pairs = pairs.size();
    kc.positives = static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const PairSample& p) { return p.positive; }));
    if (kc.positives == 0) {
      kc.theta = sorted_grid.back();
      kc.f1 = 0.0;
    } else {
      std::size_t best_num = 0, best_den = 1;
      bool have = false;
      for (double theta : sorted_grid) {
        std::size_t tp = 0, fp = 0;
        for (const PairSample& p : pairs) {
          if (p.speed > theta) (p.positive ? tp : fp) += 1;
        }
        const std::size_t fn = kc.positives - tp;
        const std::size_t num = 2 * tp;
        const std::size_t den = 2 * tp + fp + fn;
        if (!have || ratio_greater(num, den, best_num, best_den)) {
          have = true;
          best_num = num;
          best_den = den;
          kc.theta = theta;
        }
      }
      kc.f1 = static_cast<double>(best_num) / static_cast<double>(best_den);
    }
    out.table.set(kc.region_id, kc.window_id, kc.theta);
    by_key[{kc.region_id, kc.window_id}] = kc;
  }
  for (const SpeedPrior& prior : options.priors) {
    if (by_key.count({prior.region_id, prior.window_id}) != 0) continue;
    out.table.set(prior.region_id, prior.window_id, snap_up(sorted_grid, prior.avg_speed_kmph));
  }
  for (auto& [key, kc] : by_key) out.keys.push_back(std::move(kc));
  return out;
}

AdaptiveDetector::AdaptiveDetector(const SpeedTable& table, const TowerRegistry& towers, const RegionGrid& grid,
                                   int tz_offset_minutes, DistanceMode mode)
    : towers_(&towers), clock_(tz_offset_minutes), mode_(mode) {
  per_tower_.resize(towers.size());
  for (std::size_t i = 0; i < towers.size(); ++i) {
    const auto region = grid.region_of(towers.towers()[i].pos);
    for (int w = 0; w < kWindowCount; ++w) per_tower_[i][w] = table.threshold(region, w);
  }
}

double AdaptiveDetector::threshold_for(const CdrRecord& earlier) const {
  if (earlier.cell.value >= per_tower_.size()) throw Error(ErrorCode::UnknownCell, "cell index outside registry");
  return per_tower_[earlier.cell.value][window_of_minute(clock_.minute_of_day(earlier.ts))];
}

LoadShareFlags AdaptiveDetector::detect(const UserStream& stream) const {
  LoadShareFlags flags(stream.records.size(), 0);
  for (std::size_t k = 1; k < stream.records.size(); ++k) {
    const CdrRecord& prev = stream.records[k - 1];
    flags[k] = pairwise_speed(prev, stream.records[k], *towers_, mode_) > threshold_for(prev) ? 1 : 0;
  }
  return flags;
}

LoadShareFlags detect_adaptive(const UserStream& stream, const SpeedTable& table, const TowerRegistry& towers,
                               const RegionGrid& grid, int tz_offset_minutes, DistanceMode mode) {
  return AdaptiveDetector(table, towers, grid, tz_offset_minutes, mode).detect(stream);
}

void DetectionCounts::add(const LoadShareFlags& flags, const std::vector<Label>& truth) {
  if (flags.size() != truth.size()) throw Error(ErrorCode::DimensionMismatch, "flags and labels differ in length");
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (truth[i] == Label::Unknown) continue;
    const bool pos = truth[i] == Label::Positive;
    if (flags[i] != 0) {
      (pos ? tp : fp) += 1;
    } else {
      (pos ? fn : tn) += 1;
    }
  }
}

DetectionMetrics detection_metrics(const DetectionCounts& c) {
  DetectionMetrics m;
  m.counts = c;
  m.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  m.no_positives = c.tp + c.fn == 0;
  m.recall = m.no_positives ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double denom = m.precision + m.recall;
  m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
  return m;
}

DetectionMetrics detection_metrics(const LoadShareFlags& flags, const std::vector<Label>& truth) {
  DetectionCounts c;
  c.add(flags, truth);
  return detection_metrics(c);
}

}  // namespace cdrloc
