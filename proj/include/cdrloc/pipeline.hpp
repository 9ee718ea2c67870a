#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdrloc/error.hpp"
#include "cdrloc/geo.hpp"
#include "cdrloc/odmatrix.hpp"
#include "cdrloc/synthgen.hpp"

namespace cdrloc {

/// Stage order used by `run`.
inline constexpr std::string_view kStageNames[] = {"generate", "ingest",   "filter",   "profile",
                                                   "loadshare", "localize", "odmatrix", "evaluate"};

struct RunConfig {
  std::string data_dir = ".";
  std::string out_dir = "out";
  /// Per-input path overrides keyed by dataset name (cdr, towers, gps,
  /// labels, regions, districts, speeds, truth_anchors, reference_od).
  std::map<std::string, std::string> inputs;
  std::optional<std::uint64_t> seed;
  std::set<std::string> stages{"ingest", "filter", "profile", "loadshare", "localize", "odmatrix", "evaluate"};

  double eps_m = 1000.0;
  std::size_t min_pts = 3;
  std::size_t k = 1;
  double min_fraction = 0.8;
  double keep_percentile = 80.0;
  double default_threshold = 120.0;
  double theta_step = 5.0;
  double theta_max = 200.0;
  double fit_step = 0.1;
  double holdout_fraction = 0.3;
  DfMode df_mode = DfMode::Cells;
  DistanceMode distance_mode = DistanceMode::Haversine;
  int tz_offset_minutes = 0;
  std::set<std::int64_t> holidays;
  std::optional<std::int64_t> study_start;  // local days, inclusive
  std::optional<std::int64_t> study_end;    // exclusive
  unsigned workers = 1;

  WorldConfig world;
  bool truth_flags = true;

  std::string input_path(const std::string& name) const;
  std::string output_path(const std::string& name) const;
};

/// Applies one `key = value` setting. Throws Error(InvalidConfig).
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Reads `key = value` lines; `#` starts a comment. Throws Error(Io) or
/// Error(InvalidConfig) with the line number.
RunConfig load_run_config(const std::string& path);

/// Checks cross-field rules (seed present for stochastic stages, known
/// stage names, ranges). Throws Error(InvalidConfig).
void validate(const RunConfig& config);

/// One machine-readable line per stage: `stage=<name> key=value ...`.
struct StageSummary {
  std::string stage;
  std::vector<std::pair<std::string, std::string>> fields;

  void add(std::string key, std::string value) { fields.emplace_back(std::move(key), std::move(value)); }
  void add(std::string key, std::size_t value) { add(std::move(key), std::to_string(value)); }
  void add(std::string key, double value, int decimals = 4);
  std::string line() const;
};

/// Stage failure carrying the stage name; `code` is set for data errors.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, std::optional<ErrorCode> code, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)), code_(code) {}
  const std::string& stage() const { return stage_; }
  const std::optional<ErrorCode>& code() const { return code_; }

 private:
  std::string stage_;
  std::optional<ErrorCode> code_;
};

class StageRunner;

/// Runs stages against one configuration. Each stage writes its artifacts
/// under out_dir; a later stage reuses in-memory results from this object or
/// reloads the earlier stage's artifact files, so stages can be resumed
/// one at a time.
class Pipeline {
 public:
  explicit Pipeline(RunConfig config);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Throws StageError.
  StageSummary run_stage(std::string_view stage);
  /// Enabled stages in order.
  std::vector<StageSummary> run_all(std::ostream* progress = nullptr);

  const RunConfig& config() const { return config_; }

 private:
  friend class StageRunner;
  struct State;
  RunConfig config_;
  std::unique_ptr<State> state_;
};

/// Exit codes: 0 ok, 1 usage/config, 2 data error, 3 internal error.
/// `stage` is one stage name or "run".
int run_command(const RunConfig& config, std::string_view stage, std::ostream& out, std::ostream& err);

}  // namespace cdrloc
