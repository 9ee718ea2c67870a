#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "cdrloc/error.hpp"
#include "cdrloc/pipeline.hpp"

namespace {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

constexpr FlagSpec kFlags[] = {
    {"--data-dir", "data_dir", "directory holding the input CSV files"},
    {"--out-dir", "out_dir", "directory for stage artifacts"},
    {"--seed", "seed", "seed for generation, training and k-means"},
    {"--workers", "workers", "worker threads (results do not depend on it)"},
    {"--stages", "stages", "comma-separated stages executed by run"},
    {"--eps", "eps_m", "DBSCAN radius in meters"},
    {"--min-pts", "min_pts", "DBSCAN minimum records"},
    {"--k", "k", "k-means clusters inside the stay cluster"},
    {"--min-fraction", "min_fraction", "study-area record fraction to keep a user"},
    {"--keep-percentile", "keep_percentile", "entropy percentile kept"},
    {"--default-threshold", "default_threshold", "fallback speed threshold (km/h)"},
    {"--theta-step", "theta_step", "speed grid step (km/h)"},
    {"--fit-step", "fit_step", "alpha/beta/gamma grid step"},
    {"--holdout", "holdout_fraction", "share of labeled users held out for reports"},
    {"--df-mode", "df_mode", "cells or contingency"},
    {"--distance-mode", "distance_mode", "haversine or planar"},
    {"--tz-offset", "tz_offset_minutes", "local time offset from UTC in minutes"},
    {"--holidays", "holidays", "comma-separated YYYY-MM-DD dates"},
    {"--study-start", "study_start", "first local date kept"},
    {"--study-end", "study_end", "local date after the last one kept"},
    {"--users", "world.users", "generate: number of users"},
    {"--days", "world.days", "generate: number of days"},
    {"--p-ls", "world.p_ls", "generate: load-share probability"},
    {"--panel-fraction", "world.panel_fraction", "generate: share of users with GPS and labels"},
    {"--truth-flags", "truth_flags", "generate: write truth_flags.csv"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cell-tower localization pipeline for call detail records"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<std::string> sets;
  std::string stage;

  const std::pair<const char*, const char*> commands[] = {
      {"generate", "write a synthetic dataset into data_dir"},
      {"ingest", "validate inputs and report rejected rows"},
      {"filter", "drop high-entropy users"},
      {"profile", "train the segment classifier and label users"},
      {"loadshare", "calibrate per-region speed thresholds"},
      {"localize", "fit segment weights and infer home/work anchors"},
      {"odmatrix", "aggregate anchors into O-D matrices"},
      {"evaluate", "error percentiles and chi-squared comparisons"},
      {"run", "all enabled stages in order"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "key = value configuration file");
    sub->add_option("--set", sets, "extra key=value setting (repeatable)");
    for (const FlagSpec& f : kFlags) {
      const std::string key = f.key;
      sub->add_option_function<std::string>(
          f.flag, [key, &overrides](const std::string& v) { overrides.emplace_back(key, v); }, f.help);
    }
    sub->callback([&stage, n = std::string(name)] { stage = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  cdrloc::RunConfig config;
  try {
    if (!config_path.empty()) config = cdrloc::load_run_config(config_path);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw cdrloc::Error(cdrloc::ErrorCode::InvalidConfig, "--set expects key=value");
      cdrloc::apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : overrides) cdrloc::apply_setting(config, k, v);
  } catch (const cdrloc::Error& e) {
    std::cerr << "error stage=config code=" << cdrloc::to_string(e.code()) << " message=" << e.detail();
    if (e.line() != 0) std::cerr << " line=" << e.line();
    std::cerr << "\n";
    return e.code() == cdrloc::ErrorCode::Io ? 2 : 1;
  }
  try {
    return cdrloc::run_command(config, stage, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error stage=" << stage << " code=Internal message=" << e.what() << "\n";
    return 3;
  }
}
