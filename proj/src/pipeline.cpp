#include "cdrloc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "cdrloc/csv.hpp"
#include "cdrloc/entropy.hpp"
#include "cdrloc/ingest.hpp"
#include "cdrloc/loadshare.hpp"
#include "cdrloc/localize.hpp"
#include "cdrloc/parallel.hpp"
#include "cdrloc/profiling.hpp"
#include "cdrloc/rng.hpp"

namespace cdrloc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

std::string RunConfig::input_path(const std::string& name) const {
  const auto it = inputs.find(name);
  if (it != inputs.end()) return it->second;
  return (fs::path(data_dir) / (name + ".csv")).string();
}

std::string RunConfig::output_path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }

namespace {

[[noreturn]] void bad_setting(std::string_view key, std::string_view value, std::string_view why) {
  throw Error(ErrorCode::InvalidConfig,
              "setting " + std::string(key) + " = '" + std::string(value) + "': " + std::string(why));
}

double to_double(std::string_view key, std::string_view value) {
  const auto v = csv::parse_double(value);
  if (!v) bad_setting(key, value, "expected a number");
  return *v;
}

std::int64_t to_int(std::string_view key, std::string_view value) {
  const auto v = csv::parse_int(value);
  if (!v) bad_setting(key, value, "expected an integer");
  return *v;
}

std::size_t to_count(std::string_view key, std::string_view value) {
  const auto v = to_int(key, value);
  if (v < 0) bad_setting(key, value, "must be >= 0");
  return static_cast<std::size_t>(v);
}

bool to_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_setting(key, value, "expected true or false");
}

std::int64_t to_day(std::string_view key, std::string_view value) {
  const auto d = parse_date(value);
  if (!d) bad_setting(key, value, "expected YYYY-MM-DD");
  return *d;
}

std::vector<std::string_view> to_list(std::string_view value) {
  std::vector<std::string_view> out;
  csv::split(value, ',', out);
  out.erase(std::remove_if(out.begin(), out.end(), [](std::string_view s) { return s.empty(); }), out.end());
  return out;
}

bool is_stage(std::string_view s) {
  return std::find(std::begin(kStageNames), std::end(kStageNames), s) != std::end(kStageNames);
}

}  // namespace

void apply_setting(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string_view value = csv::trim(raw);
  WorldConfig& w = c.world;
  if (key == "data_dir") c.data_dir = value;
  else if (key == "out_dir") c.out_dir = value;
  else if (key.starts_with("input.")) c.inputs[std::string(key.substr(6))] = value;
  else if (key == "seed") {
    const auto v = to_int(key, value);
    if (v < 0) bad_setting(key, value, "must be >= 0");
    c.seed = static_cast<std::uint64_t>(v);
  } else if (key == "stages") {
    c.stages.clear();
    for (auto s : to_list(value)) {
      if (!is_stage(s)) bad_setting(key, value, "unknown stage " + std::string(s));
      c.stages.insert(std::string(s));
    }
  } else if (key == "workers") {
    const auto v = to_count(key, value);
    c.workers = static_cast<unsigned>(std::max<std::size_t>(1, v));
  } else if (key == "eps_m") c.eps_m = to_double(key, value);
  else if (key == "min_pts") c.min_pts = to_count(key, value);
  else if (key == "k") c.k = to_count(key, value);
  else if (key == "min_fraction") c.min_fraction = to_double(key, value);
  else if (key == "keep_percentile") c.keep_percentile = to_double(key, value);
  else if (key == "default_threshold") c.default_threshold = to_double(key, value);
  else if (key == "theta_step") c.theta_step = to_double(key, value);
  else if (key == "theta_max") c.theta_max = to_double(key, value);
  else if (key == "fit_step") c.fit_step = to_double(key, value);
  else if (key == "holdout_fraction") c.holdout_fraction = to_double(key, value);
  else if (key == "df_mode") {
    const auto m = parse_df_mode(value);
    if (!m) bad_setting(key, value, "expected cells or contingency");
    c.df_mode = *m;
  } else if (key == "distance_mode") {
    const auto m = parse_distance_mode(value);
    if (!m) bad_setting(key, value, "expected haversine or planar");
    c.distance_mode = *m;
  } else if (key == "tz_offset_minutes") {
    c.tz_offset_minutes = static_cast<int>(to_int(key, value));
  } else if (key == "holidays") {
    c.holidays.clear();
    for (auto d : to_list(value)) c.holidays.insert(to_day(key, d));
  } else if (key == "study_start") c.study_start = to_day(key, value);
  else if (key == "study_end") c.study_end = to_day(key, value);
  else if (key == "truth_flags") c.truth_flags = to_bool(key, value);
  else if (key == "world.users") w.users = to_count(key, value);
  else if (key == "world.days") w.days = static_cast<int>(to_int(key, value));
  else if (key == "world.start_date") w.start_day = to_day(key, value);
  else if (key == "world.p_ls") w.p_ls = to_double(key, value);
  else if (key == "world.panel_fraction") w.panel_fraction = to_double(key, value);
  else if (key == "world.call_rate_scale") w.call_rate_scale = to_double(key, value);
  else if (key == "world.macro_spacing_km") w.macro_spacing_km = to_double(key, value);
  else if (key == "world.small_spacing_km") w.small_spacing_km = to_double(key, value);
  else if (key == "world.urban_density") w.urban_density = to_double(key, value);
  else if (key == "world.jitter") w.jitter = to_double(key, value);
  else if (key == "world.min_rx") w.min_rx = to_double(key, value);
  else if (key == "world.home_max_serving_km") w.home_max_serving_km = to_double(key, value);
  else if (key == "world.gps_interval_s") w.gps_interval_s = static_cast<int>(to_int(key, value));
  else if (key == "world.gps_noise_m") w.gps_noise_m = to_double(key, value);
  else if (key == "world.work_urban_fraction") w.work_urban_fraction = to_double(key, value);
  else if (key == "world.region_rows") w.region_rows = static_cast<int>(to_int(key, value));
  else if (key == "world.region_cols") w.region_cols = static_cast<int>(to_int(key, value));
  else if (key == "world.district_rows") w.district_rows = static_cast<int>(to_int(key, value));
  else if (key == "world.district_cols") w.district_cols = static_cast<int>(to_int(key, value));
  else if (key == "world.burst_probability") w.burst_probability = to_double(key, value);
  else if (key == "world.profile_blend") w.profile_blend = to_double(key, value);
  else throw Error(ErrorCode::InvalidConfig, "unknown setting " + std::string(key));
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path);
  RunConfig c;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = csv::trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::InvalidConfig, "expected key = value", no);
    try {
      apply_setting(c, csv::trim(v.substr(0, eq)), v.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), e.detail(), no);
    }
  }
  return c;
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidConfig, what);
  };
  for (const auto& s : c.stages) require(is_stage(s), "unknown stage name");
  const bool stochastic = c.stages.count("generate") || c.stages.count("profile") || c.stages.count("localize");
  require(!stochastic || c.seed.has_value(), "seed is required for generate, profile and localize");
  require(c.eps_m > 0.0, "eps_m must be > 0");
  require(c.min_pts >= 1, "min_pts must be >= 1");
  require(c.k >= 1, "k must be >= 1");
  require(c.min_fraction >= 0.0 && c.min_fraction <= 1.0, "min_fraction must be in [0, 1]");
  require(c.keep_percentile > 0.0 && c.keep_percentile <= 100.0, "keep_percentile must be in (0, 100]");
  require(c.theta_step > 0.0 && c.theta_max >= 0.0, "theta grid must have a positive step");
  const auto grid = theta_grid(c.theta_step, c.theta_max);
  require(std::find(grid.begin(), grid.end(), c.default_threshold) != grid.end(),
          "default_threshold must lie on the theta grid");
  require(c.fit_step > 0.0 && c.fit_step <= 1.0, "fit_step must be in (0, 1]");
  require(c.holdout_fraction >= 0.0 && c.holdout_fraction < 1.0, "holdout_fraction must be in [0, 1)");
  require(c.tz_offset_minutes > -24 * 60 && c.tz_offset_minutes < 24 * 60, "tz_offset_minutes out of range");
  require(!c.study_start || !c.study_end || *c.study_start < *c.study_end, "study_start must precede study_end");
  if (c.stages.count("generate")) validate(c.world);
}

void StageSummary::add(std::string key, double value, int decimals) {
  add(std::move(key), csv::fixed(value, decimals));
}

std::string StageSummary::line() const {
  std::string out = "stage=" + stage;
  for (const auto& [k, v] : fields) out += " " + k + "=" + v;
  return out;
}

// ---------------------------------------------------------------- state

namespace {

struct AnchorRow {
  std::string user_id;
  AnchorKind kind = AnchorKind::Home;
  LatLon pos;
  std::string method;
  std::size_t cluster_days = 0;
};

bool in_holdout(std::uint64_t seed, const std::string& user_id, double fraction) {
  const std::uint64_t h = derive_seed(seed, "holdout/" + user_id);
  return static_cast<double>(h >> 11) * 0x1.0p-53 < fraction;
}

std::string coord(double v) { return csv::fixed(v, 6); }

/// Rounds to what anchors.csv stores, so resumed stages see the same values.
LatLon stored(LatLon p) { return {*csv::parse_double(coord(p.lat)), *csv::parse_double(coord(p.lon))}; }

void write_key_values(const std::string& path, const StageSummary& s) {
  std::string text;
  for (const auto& [k, v] : s.fields) text += k + "=" + v + "\n";
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
}

[[noreturn]] void missing_artifact(const std::string& path, std::string_view stage) {
  throw Error(ErrorCode::Io, "missing " + path + "; run the " + std::string(stage) + " stage first");
}

}  // namespace

struct Pipeline::State {
  bool ingested = false;
  RegionGrid regions;
  TowerRegistry towers;
  std::vector<UserStream> streams;
  std::optional<std::vector<std::size_t>> active;
  std::optional<std::map<std::string, std::optional<UserSegment>>> segments;
  std::optional<SpeedTable> table;
  std::optional<std::vector<AnchorRow>> anchors;
  std::optional<RegionGrid> districts;
};

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)), state_(std::make_unique<State>()) {}
Pipeline::~Pipeline() = default;

// Stage bodies live in a helper class so they can reach State.
class StageRunner {
 public:
  StageRunner(const RunConfig& cfg, Pipeline::State& st) : cfg_(cfg), st_(st) {}

  Calendar calendar() const { return Calendar(cfg_.tz_offset_minutes, cfg_.holidays); }

  AnchorOptions anchor_options() const {
    AnchorOptions o;
    o.eps_m = cfg_.eps_m;
    o.min_pts = cfg_.min_pts;
    o.k = cfg_.k;
    o.seed = cfg_.seed.value_or(0);
    o.mode = cfg_.distance_mode;
    return o;
  }

  void prepare_out() const {
    std::error_code ec;
    fs::create_directories(cfg_.out_dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + cfg_.out_dir + ": " + ec.message());
  }

  // ---- generate
  StageSummary generate() {
    StageSummary s{"generate", {}};
    WorldConfig wc = cfg_.world;
    wc.seed = *cfg_.seed;
    wc.tz_offset_minutes = cfg_.tz_offset_minutes;
    wc.holidays = cfg_.holidays;
    const World world = generate_world(wc);
    const EmitSummary e = emit_dataset(world, cfg_.data_dir, wc.days, *cfg_.seed, cfg_.truth_flags, cfg_.workers);
    s.add("users", e.users);
    s.add("towers", world.towers.size());
    s.add("cdr_rows", e.cdr_rows);
    s.add("gps_rows", e.gps_rows);
    s.add("days", static_cast<std::size_t>(wc.days));
    return s;
  }

  // ---- ingest
  StageSummary ingest(bool write) {
    StageSummary s{"ingest", {}};
    auto regions = load_regions(cfg_.input_path("regions"));
    auto towers = load_towers(cfg_.input_path("towers"), regions.value);
    CdrLoadOptions lo;
    const LocalClock clock(cfg_.tz_offset_minutes);
    if (cfg_.study_start) lo.study_start = clock.local_midnight(*cfg_.study_start);
    if (cfg_.study_end) lo.study_end = clock.local_midnight(*cfg_.study_end);
    auto cdr = load_cdr(cfg_.input_path("cdr"), towers.value, lo);
    CanonicalStreams canon = canonicalize_streams(cdr.value);
    const std::size_t users_in = canon.streams.size();

    std::vector<std::pair<std::string, Rejection>> rejected;
    for (const auto& r : regions.rejected) rejected.emplace_back("regions", r);
    for (const auto& r : towers.rejected) rejected.emplace_back("towers", r);
    for (const auto& r : cdr.rejected) rejected.emplace_back("cdr", r);

    std::size_t gps_users = 0, labeled = 0;
    const std::string gps_path = cfg_.input_path("gps");
    if (fs::exists(gps_path)) {
      auto gps = load_gps(gps_path);
      for (const auto& r : gps.rejected) rejected.emplace_back("gps", r);
      attach_gps(canon.streams, gps.value);
    }
    const std::string labels_path = cfg_.input_path("labels");
    if (fs::exists(labels_path)) {
      auto labels = load_labels(labels_path);
      for (const auto& r : labels.rejected) rejected.emplace_back("labels", r);
      attach_labels(canon.streams, labels.value);
    }
    StudyAreaResult study = study_area_filter(std::move(canon.streams), towers.value, regions.value, cfg_.min_fraction);
    std::size_t records = 0;
    for (const auto& u : study.retained) {
      records += u.records.size();
      gps_users += !u.gps.empty();
      labeled += u.segment.has_value();
    }

    st_.regions = std::move(regions.value);
    st_.towers = std::move(towers.value);
    st_.streams = std::move(study.retained);
    st_.ingested = true;

    s.add("regions", st_.regions.size());
    s.add("towers", st_.towers.size());
    s.add("cdr_rows", cdr.value.size());
    s.add("rejected_rows", rejected.size());
    s.add("duplicates_removed", canon.duplicates_removed);
    s.add("users_in", users_in);
    s.add("users_outside_study_area", study.dropped_users);
    s.add("records_outside_study_area", study.dropped_records);
    s.add("users", st_.streams.size());
    s.add("records", records);
    s.add("gps_users", gps_users);
    s.add("labeled_users", labeled);
    if (write) {
      prepare_out();
      write_key_values(cfg_.output_path("ingest_report.txt"), s);
      csv::Writer w(cfg_.output_path("rejected_rows.csv"), "file,line,code,detail");
      for (const auto& [file, r] : rejected) {
        std::string detail = r.detail;
        std::replace(detail.begin(), detail.end(), ',', ';');
        w.row(file + "," + std::to_string(r.line) + "," + std::string(to_string(r.code)) + "," + detail);
      }
      w.close();
    }
    return s;
  }

  void ensure_ingested() {
    if (!st_.ingested) ingest(false);
  }

  // ---- filter
  StageSummary filter() {
    ensure_ingested();
    StageSummary s{"filter", {}};
    if (st_.streams.empty()) throw Error(ErrorCode::NoUsers, "no users left after ingest");
    const EntropyFilterResult r = filter_by_entropy(st_.streams, cfg_.keep_percentile, EntropyKeep::Low);
    prepare_out();
    csv::Writer w(cfg_.output_path("retained_users.csv"), "user_id,entropy_bits,retained");
    std::vector<bool> keep(st_.streams.size(), false);
    for (std::size_t i : r.retained) keep[i] = true;
    for (std::size_t i = 0; i < st_.streams.size(); ++i) {
      w.row(st_.streams[i].user_id + "," + csv::fixed(r.entropy[i], 6) + "," + (keep[i] ? "1" : "0"));
    }
    w.close();
    st_.active = r.retained;
    s.add("users", st_.streams.size());
    s.add("retained", r.retained.size());
    s.add("dropped", r.dropped);
    s.add("threshold_bits", r.threshold, 6);
    return s;
  }

  const std::vector<std::size_t>& active() {
    ensure_ingested();
    if (st_.active) return *st_.active;
    const std::string path = cfg_.output_path("retained_users.csv");
    if (!fs::exists(path)) missing_artifact(path, "filter");
    csv::LineReader reader(path);
    std::string_view line;
    reader.next(line);
    std::set<std::string, std::less<>> keep;
    std::vector<std::string_view> f;
    while (reader.next(line)) {
      csv::split(line, ',', f);
      if (f.size() == 3 && f[2] == "1") keep.insert(std::string(f[0]));
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < st_.streams.size(); ++i) {
      if (keep.count(st_.streams[i].user_id)) out.push_back(i);
    }
    st_.active = std::move(out);
    return *st_.active;
  }

  // ---- profile
  StageSummary profile() {
    const auto& idx = active();
    StageSummary s{"profile", {}};
    const LocalClock clock(cfg_.tz_offset_minutes);
    std::vector<FeatureVector> features(idx.size());
    parallel_for(idx.size(), cfg_.workers, [&](std::size_t i) {
      features[i] = extract_features(st_.streams[idx[i]], st_.towers, clock, cfg_.distance_mode);
    });

    std::vector<FeatureVector> x_all, x_train, x_test;
    std::vector<UserSegment> y_all, y_train, y_test;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const UserStream& u = st_.streams[idx[i]];
      if (!u.segment) continue;
      x_all.push_back(features[i]);
      y_all.push_back(*u.segment);
      const bool test = in_holdout(*cfg_.seed, u.user_id, cfg_.holdout_fraction);
      (test ? x_test : x_train).push_back(features[i]);
      (test ? y_test : y_train).push_back(*u.segment);
    }
    auto classes = [](const std::vector<UserSegment>& y) {
      return std::set<UserSegment>(y.begin(), y.end()).size();
    };
    TrainOptions to;
    to.seed = *cfg_.seed;

    prepare_out();
    csv::Writer report(cfg_.output_path("profile_report.csv"), classification_report_header());
    if (classes(y_train) >= 2 && !y_test.empty()) {
      const SegmentClassifier m = train_segment_classifier(x_train, y_train, to);
      std::vector<UserSegment> pred;
      for (const auto& x : x_test) pred.push_back(m.predict(x));
      const auto rep = classification_report(pred, y_test);
      report.row(classification_report_row("svm_wc", rep));
      std::array<std::size_t, kSegmentCount> count{};
      for (UserSegment y : y_train) ++count[static_cast<int>(y)];
      const auto majority = static_cast<UserSegment>(std::max_element(count.begin(), count.end()) - count.begin());
      const auto base = classification_report(std::vector<UserSegment>(y_test.size(), majority), y_test);
      report.row(classification_report_row("majority", base));
      s.add("holdout_users", y_test.size());
      s.add("holdout_macro_f1", rep.macro_f1);
      s.add("majority_macro_f1", base.macro_f1);
    }
    report.close();

    std::optional<SegmentClassifier> model;
    if (classes(y_all) >= 2) {
      model = train_segment_classifier(x_all, y_all, to);
      std::ofstream out(cfg_.output_path("segment_model.txt"), std::ios::binary);
      out << model->serialize();
      if (!out) throw Error(ErrorCode::Io, "cannot write segment_model.txt");
    }
    std::map<std::string, std::optional<UserSegment>> segs;
    csv::Writer w(cfg_.output_path("segments.csv"), "user_id,segment,source");
    std::size_t predicted = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const UserStream& u = st_.streams[idx[i]];
      std::optional<UserSegment> seg = u.segment;
      std::string source = "label";
      if (!seg && model) {
        seg = model->predict(features[i]);
        source = "model";
        ++predicted;
      }
      if (!seg) source = "none";
      segs[u.user_id] = seg;
      w.row(u.user_id + "," + (seg ? std::string(to_string(*seg)) : std::string()) + "," + source);
    }
    w.close();
    st_.segments = std::move(segs);
    s.add("users", idx.size());
    s.add("labeled", y_all.size());
    s.add("predicted", predicted);
    s.add("model", std::string(model ? "trained" : "none"));
    return s;
  }

  const std::map<std::string, std::optional<UserSegment>>& segments() {
    if (st_.segments) return *st_.segments;
    const std::string path = cfg_.output_path("segments.csv");
    if (!fs::exists(path)) missing_artifact(path, "profile");
    csv::LineReader reader(path);
    std::string_view line;
    reader.next(line);
    std::map<std::string, std::optional<UserSegment>> out;
    std::vector<std::string_view> f;
    while (reader.next(line)) {
      csv::split(line, ',', f);
      if (f.size() != 3) throw Error(ErrorCode::RowParseError, "bad segments.csv row", reader.line_number());
      out[std::string(f[0])] = f[1].empty() ? std::nullopt : parse_segment(f[1]);
    }
    st_.segments = std::move(out);
    return *st_.segments;
  }

  // ---- loadshare
  CalibrationOptions calibration_options() const {
    CalibrationOptions co;
    co.grid = theta_grid(cfg_.theta_step, cfg_.theta_max);
    co.default_threshold = cfg_.default_threshold;
    co.tz_offset_minutes = cfg_.tz_offset_minutes;
    co.mode = cfg_.distance_mode;
    const std::string speeds = cfg_.input_path("speeds");
    if (fs::exists(speeds)) co.priors = load_speeds(speeds).value;
    return co;
  }

  StageSummary loadshare() {
    const auto& idx = active();
    StageSummary s{"loadshare", {}};
    std::vector<std::size_t> gps_users;
    for (std::size_t i : idx) {
      if (!st_.streams[i].gps.empty()) gps_users.push_back(i);
    }
    std::vector<std::vector<Label>> labels(gps_users.size());
    GroundTruthOptions go;
    go.mode = cfg_.distance_mode;
    parallel_for(gps_users.size(), cfg_.workers,
                 [&](std::size_t i) { labels[i] = label_ground_truth(st_.streams[gps_users[i]], go); });

    const CalibrationOptions co = calibration_options();
    std::vector<UserStream> train_s, test_s, all_s;
    std::vector<std::vector<Label>> train_l, test_l;
    for (std::size_t i = 0; i < gps_users.size(); ++i) {
      const UserStream& u = st_.streams[gps_users[i]];
      all_s.push_back(u);
      const bool test = in_holdout(cfg_.seed.value_or(0), u.user_id, cfg_.holdout_fraction);
      (test ? test_s : train_s).push_back(u);
      (test ? test_l : train_l).push_back(labels[i]);
    }
    prepare_out();
    csv::Writer metrics(cfg_.output_path("loadshare_metrics.csv"), "method,precision,recall,f1,tp,fp,fn,tn");
    auto metric_row = [&metrics](const std::string& name, const DetectionMetrics& m) {
      metrics.row(name + "," + csv::fixed(m.precision, 4) + "," + csv::fixed(m.recall, 4) + "," +
                  csv::fixed(m.f1, 4) + "," + std::to_string(m.counts.tp) + "," + std::to_string(m.counts.fp) +
                  "," + std::to_string(m.counts.fn) + "," + std::to_string(m.counts.tn));
    };
    if (!test_s.empty() && !train_s.empty()) {
      bool train_has_labels = false;
      for (const auto& l : train_l) {
        train_has_labels = train_has_labels || std::any_of(l.begin(), l.end(), [](Label x) { return x != Label::Unknown; });
      }
      if (train_has_labels) {
        const CalibrationResult held = calibrate_speed_table(train_s, train_l, st_.towers, st_.regions, co);
        const AdaptiveDetector det(held.table, st_.towers, st_.regions, cfg_.tz_offset_minutes, cfg_.distance_mode);
        DetectionCounts fixed, adaptive;
        for (std::size_t i = 0; i < test_s.size(); ++i) {
          fixed.add(detect_fixed(test_s[i], st_.towers, cfg_.default_threshold, cfg_.distance_mode), test_l[i]);
          adaptive.add(det.detect(test_s[i]), test_l[i]);
        }
        const auto mf = detection_metrics(fixed);
        const auto ma = detection_metrics(adaptive);
        metric_row("fixed_" + csv::fixed(cfg_.default_threshold, 0), mf);
        metric_row("adaptive", ma);
        s.add("holdout_users", test_s.size());
        s.add("fixed_f1", mf.f1);
        s.add("adaptive_f1", ma.f1);
      }
    }
    metrics.close();

    std::vector<std::vector<Label>> all_l = labels;
    const CalibrationResult cal = calibrate_speed_table(all_s, all_l, st_.towers, st_.regions, co);
    cal.table.save(cfg_.output_path("speed_table.csv"));
    std::size_t pairs = 0;
    for (const auto& k : cal.keys) pairs += k.labeled_pairs;
    st_.table = cal.table;
    s.add("gps_users", gps_users.size());
    s.add("labeled_pairs", pairs);
    s.add("keys", cal.table.entries().size());
    return s;
  }

  const SpeedTable& table() {
    if (st_.table) return *st_.table;
    const std::string path = cfg_.output_path("speed_table.csv");
    if (!fs::exists(path)) missing_artifact(path, "loadshare");
    st_.table = SpeedTable::load(path, cfg_.default_threshold);
    return *st_.table;
  }

  // ---- localize
  StageSummary localize() {
    const auto& idx = active();
    const auto& segs = segments();
    const SpeedTable& tbl = table();
    StageSummary s{"localize", {}};
    const Calendar cal = calendar();
    const AnchorOptions ao = anchor_options();
    const AdaptiveDetector det(tbl, st_.towers, st_.regions, cfg_.tz_offset_minutes, cfg_.distance_mode);

    struct Local {
      std::optional<StayCluster> cluster[2];
      std::optional<Anchor> calldays[2];
      std::optional<LatLon> gps_home;
    };
    std::vector<Local> local(idx.size());
    parallel_for(idx.size(), cfg_.workers, [&](std::size_t i) {
      const UserStream& u = st_.streams[idx[i]];
      const LoadShareFlags flags = det.detect(u);
      for (int k = 0; k < 2; ++k) {
        const AnchorKind kind = k == 0 ? AnchorKind::Home : AnchorKind::Work;
        local[i].cluster[k] = select_stay_cluster(stay_clusters(u, flags, kind, st_.towers, cal, ao));
        local[i].calldays[k] = calldays_anchor(u, kind, st_.towers, cal, ao);
      }
      if (!u.gps.empty()) local[i].gps_home = gps_anchor(u.gps, AnchorKind::Home, cal, ao);
    });

    auto segment_of = [&](const std::string& id) -> std::optional<UserSegment> {
      const auto it = segs.find(id);
      return it == segs.end() ? std::nullopt : it->second;
    };
    std::array<std::vector<FitSample>, kSegmentCount> by_segment;
    std::vector<FitSample> everyone;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const UserStream& u = st_.streams[idx[i]];
      if (!local[i].gps_home || !local[i].cluster[0]) continue;
      FitSample fs{*local[i].cluster[0], *local[i].gps_home, derive_seed(ao.seed, u.user_id)};
      everyone.push_back(fs);
      if (const auto seg = segment_of(u.user_id)) by_segment[static_cast<int>(*seg)].push_back(std::move(fs));
    }
    ParamsBySegment params;
    prepare_out();
    csv::Writer pw(cfg_.output_path("params.csv"), "segment,alpha,beta,gamma,median_error_m,users");
    auto param_row = [&pw](std::string_view name, const FitResult& r) {
      pw.row(std::string(name) + "," + csv::fixed(r.params.alpha, 2) + "," + csv::fixed(r.params.beta, 2) + "," +
             csv::fixed(r.params.gamma, 2) + "," + csv::fixed(r.median_error_m, 1) + "," + std::to_string(r.users));
    };
    std::size_t fitted = 0;
    for (UserSegment seg : kAllSegments) {
      const auto& samples = by_segment[static_cast<int>(seg)];
      if (samples.empty()) continue;
      params.fitted[static_cast<int>(seg)] = fit_segment_params(samples, cfg_.fit_step, cfg_.distance_mode, cfg_.workers);
      param_row(to_string(seg), *params.fitted[static_cast<int>(seg)]);
      ++fitted;
    }
    if (!everyone.empty()) {
      const FitResult all = fit_segment_params(everyone, cfg_.fit_step, cfg_.distance_mode, cfg_.workers);
      params.fallback = all.params;
      param_row("all", all);
    } else {
      FitResult none;
      none.params = params.fallback;
      none.median_error_m = 0.0;
      param_row("all", none);
    }
    pw.close();

    std::vector<AnchorRow> rows;
    std::size_t homes = 0, works = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const UserStream& u = st_.streams[idx[i]];
      const SegmentParams& p = params.get(segment_of(u.user_id));
      for (int k = 0; k < 2; ++k) {
        const AnchorKind kind = k == 0 ? AnchorKind::Home : AnchorKind::Work;
        if (local[i].cluster[k]) {
          const LatLon pos = weighted_anchor(*local[i].cluster[k], p, derive_seed(ao.seed, u.user_id), ao.k);
          rows.push_back({u.user_id, kind, stored(pos), "weighted", local[i].cluster[k]->active_days});
          (k == 0 ? homes : works) += 1;
        }
        if (local[i].calldays[k]) {
          rows.push_back({u.user_id, kind, stored(local[i].calldays[k]->pos), "calldays", local[i].calldays[k]->cluster_days});
        }
      }
    }
    csv::Writer aw(cfg_.output_path("anchors.csv"), "user_id,kind,lat,lon,method,cluster_days");
    for (const AnchorRow& r : rows) {
      aw.row(r.user_id + "," + std::string(to_string(r.kind)) + "," + coord(r.pos.lat) + "," + coord(r.pos.lon) + "," +
             r.method + "," + std::to_string(r.cluster_days));
    }
    aw.close();
    st_.anchors = std::move(rows);
    s.add("users", idx.size());
    s.add("home_anchors", homes);
    s.add("work_anchors", works);
    s.add("fit_users", everyone.size());
    s.add("fitted_segments", fitted);
    return s;
  }

  const std::vector<AnchorRow>& anchors() {
    if (st_.anchors) return *st_.anchors;
    const std::string path = cfg_.output_path("anchors.csv");
    if (!fs::exists(path)) missing_artifact(path, "localize");
    csv::LineReader reader(path);
    std::string_view line;
    reader.next(line);
    std::vector<AnchorRow> out;
    std::vector<std::string_view> f;
    while (reader.next(line)) {
      csv::split(line, ',', f);
      const auto lat = f.size() == 6 ? csv::parse_double(f[2]) : std::nullopt;
      const auto lon = f.size() == 6 ? csv::parse_double(f[3]) : std::nullopt;
      const auto days = f.size() == 6 ? csv::parse_int(f[5]) : std::nullopt;
      if (!lat || !lon || !days || (f[1] != "home" && f[1] != "work")) {
        throw Error(ErrorCode::RowParseError, "bad anchors.csv row", reader.line_number());
      }
      out.push_back({std::string(f[0]), f[1] == "home" ? AnchorKind::Home : AnchorKind::Work, LatLon{*lat, *lon},
                     std::string(f[4]), static_cast<std::size_t>(*days)});
    }
    st_.anchors = std::move(out);
    return *st_.anchors;
  }

  const RegionGrid& districts() {
    if (st_.districts) return *st_.districts;
    std::string path = cfg_.input_path("districts");
    if (!fs::exists(path)) path = cfg_.input_path("regions");
    st_.districts = load_regions(path).value;
    if (st_.districts->empty()) throw Error(ErrorCode::NoUsers, "no districts defined in " + path);
    return *st_.districts;
  }

  std::vector<UserAnchors> anchors_for(const std::string& method) {
    std::map<std::string, UserAnchors> by_user;
    for (const AnchorRow& r : anchors()) {
      if (r.method != method) continue;
      UserAnchors& u = by_user[r.user_id];
      u.user_id = r.user_id;
      (r.kind == AnchorKind::Home ? u.home : u.work) = r.pos;
    }
    std::vector<UserAnchors> out;
    for (auto& [id, u] : by_user) out.push_back(std::move(u));
    return out;
  }

  std::optional<TruthAnchors> truth() const {
    const std::string path = cfg_.input_path("truth_anchors");
    if (!fs::exists(path)) return std::nullopt;
    return load_truth_anchors(path);
  }

  static std::vector<UserAnchors> truth_users(const TruthAnchors& t) {
    std::vector<UserAnchors> out;
    for (const auto& [id, home] : t.home) {
      UserAnchors u{id, home, std::nullopt};
      if (const auto it = t.work.find(id); it != t.work.end()) u.work = it->second;
      out.push_back(u);
    }
    return out;
  }

  // ---- odmatrix
  StageSummary odmatrix() {
    StageSummary s{"odmatrix", {}};
    const RegionGrid& grid = districts();
    prepare_out();
    for (const std::string method : {"weighted", "calldays"}) {
      const OdMatrix od = build_od_matrix(anchors_for(method), grid);
      od.save(cfg_.output_path(method == "weighted" ? "od_matrix.csv" : "od_matrix_calldays.csv"));
      s.add(method + "_users", od.total);
    }
    if (const auto t = truth()) {
      const OdMatrix od = build_od_matrix(truth_users(*t), grid);
      od.save(cfg_.output_path("od_matrix_truth.csv"));
      s.add("truth_users", od.total);
    }
    s.add("districts", grid.size());
    return s;
  }

  // ---- evaluate
  StageSummary evaluate() {
    StageSummary s{"evaluate", {}};
    const RegionGrid& grid = districts();
    const std::vector<double> pcts{50.0, 70.0, 80.0, 90.0};
    const auto t = truth();
    if (t) {
      for (const AnchorKind kind : {AnchorKind::Home, AnchorKind::Work}) {
        const auto& truth_map = kind == AnchorKind::Home ? t->home : t->work;
        for (const std::string method : {"weighted", "calldays"}) {
          std::vector<double> errors;
          for (const AnchorRow& r : anchors()) {
            if (r.kind != kind || r.method != method) continue;
            const auto it = truth_map.find(r.user_id);
            if (it == truth_map.end()) continue;
            errors.push_back(distance_km(r.pos, it->second, cfg_.distance_mode) * 1000.0);
          }
          const std::string prefix = std::string(to_string(kind)) + "." + method;
          s.add(prefix + ".users", errors.size());
          if (errors.empty()) continue;
          const auto v = error_percentiles(errors, pcts);
          for (std::size_t i = 0; i < pcts.size(); ++i) {
            s.add(prefix + ".p" + std::to_string(static_cast<int>(pcts[i])) + "_m", v[i], 1);
          }
        }
      }
    }
    auto compare = [&](const std::string& name, const Matrix& observed, const Matrix& expected) {
      try {
        const ChiSquaredResult r = chi_squared_test(observed, expected, cfg_.df_mode);
        s.add(name + ".chi2", r.statistic);
        s.add(name + ".df", static_cast<std::size_t>(r.df));
        s.add(name + ".p", r.p);
      } catch (const Error& e) {
        s.add(name + ".error", std::string(to_string(e.code())));
      }
    };
    const Matrix weighted = build_od_matrix(anchors_for("weighted"), grid).percent();
    const Matrix calldays = build_od_matrix(anchors_for("calldays"), grid).percent();
    if (t) {
      // Compare over the same people: users with true home and work anchors
      // for whom the method produced both anchors.
      std::map<std::string, UserAnchors> truth_by_user;
      for (const UserAnchors& u : truth_users(*t)) {
        if (u.home && u.work) truth_by_user[u.user_id] = u;
      }
      for (const std::string method : {"weighted", "calldays"}) {
        std::vector<UserAnchors> estimated, expected;
        for (const UserAnchors& u : anchors_for(method)) {
          const auto it = truth_by_user.find(u.user_id);
          if (!u.home || !u.work || it == truth_by_user.end()) continue;
          estimated.push_back(u);
          expected.push_back(it->second);
        }
        const std::string name = "od." + method + "_vs_truth";
        s.add(name + ".users", estimated.size());
        if (estimated.empty()) continue;
        compare(name, build_od_matrix(estimated, grid).percent(), build_od_matrix(expected, grid).percent());
      }
    }
    const std::string ref = cfg_.input_path("reference_od");
    if (fs::exists(ref)) {
      std::vector<std::string> names;
      const Matrix reference = load_percent_matrix(ref, &names);
      std::vector<std::string> ids;
      for (const Region& r : grid.regions()) ids.push_back(r.id);
      if (names != ids) throw Error(ErrorCode::DimensionMismatch, "reference_od districts differ from the grid");
      compare("od.weighted_vs_reference", weighted, reference);
      compare("od.calldays_vs_reference", calldays, reference);
    }
    prepare_out();
    write_key_values(cfg_.output_path("eval_report.txt"), s);
    return s;
  }

 private:
  const RunConfig& cfg_;
  Pipeline::State& st_;
};

StageSummary Pipeline::run_stage(std::string_view stage) {
  StageRunner r(config_, *state_);
  const std::string name(stage);
  try {
    if (stage == "generate") return r.generate();
    if (stage == "ingest") return r.ingest(true);
    if (stage == "filter") return r.filter();
    if (stage == "profile") return r.profile();
    if (stage == "loadshare") return r.loadshare();
    if (stage == "localize") return r.localize();
    if (stage == "odmatrix") return r.odmatrix();
    if (stage == "evaluate") return r.evaluate();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.code(), e.line() != 0 ? e.detail() + " (line " + std::to_string(e.line()) + ")" : e.detail());
  } catch (const std::exception& e) {
    throw StageError(name, std::nullopt, e.what());
  }
  throw StageError(name, ErrorCode::InvalidConfig, "unknown stage " + name);
}

std::vector<StageSummary> Pipeline::run_all(std::ostream* progress) {
  std::vector<StageSummary> out;
  for (std::string_view stage : kStageNames) {
    if (!config_.stages.count(std::string(stage))) continue;
    out.push_back(run_stage(stage));
    if (progress != nullptr) *progress << out.back().line() << "\n" << std::flush;
  }
  return out;
}

int run_command(const RunConfig& config, std::string_view stage, std::ostream& out, std::ostream& err) {
  RunConfig effective = config;
  if (stage != "run") effective.stages = {std::string(stage)};
  try {
    if (stage != "run" && !is_stage(stage)) throw Error(ErrorCode::InvalidConfig, "unknown stage " + std::string(stage));
    validate(effective);
  } catch (const Error& e) {
    err << "error stage=config code=" << to_string(e.code()) << " message=" << e.detail() << "\n";
    return 1;
  }
  Pipeline p(effective);
  try {
    if (stage == "run") {
      p.run_all(&out);
    } else {
      out << p.run_stage(stage).line() << "\n";
    }
  } catch (const StageError& e) {
    err << "error stage=" << e.stage() << " code=" << (e.code() ? std::string(to_string(*e.code())) : "Internal")
        << " message=" << e.what() << "\n";
    if (!e.code()) return 3;
    return *e.code() == ErrorCode::InvalidConfig ? 1 : 2;
  }
  return 0;
}

}  // namespace cdrloc
