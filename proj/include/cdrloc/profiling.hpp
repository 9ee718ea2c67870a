#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdrloc/geo.hpp"
#include "cdrloc/model.hpp"

namespace cdrloc {

inline constexpr std::size_t kFeatureDim = 50;

/// Layout: [0, 24) share of records per local hour, [24, 48) mean km moved
/// between consecutive records keyed by the earlier record's hour,
/// [48] distinct cells / records, [49] share of records on Sat/Sun.
using FeatureVector = std::array<double, kFeatureDim>;

inline constexpr std::size_t kHourlyFreqOffset = 0;
inline constexpr std::size_t kHourlyDistanceOffset = 24;
inline constexpr std::size_t kDistinctCellRatio = 48;
inline constexpr std::size_t kWeekendFraction = 49;

/// Throws Error(EmptyStream).
FeatureVector extract_features(const UserStream& stream, const TowerRegistry& towers, const LocalClock& clock,
                               DistanceMode mode = DistanceMode::Haversine);

struct TrainOptions {
  std::uint64_t seed = 1;
  int epochs = 200;
  double lambda = 1e-4;
  bool class_weighting = true;
};

/// One-vs-rest linear max-margin model over standardized features. Row k
/// of `weights` scores segment k; the last column is the bias.
struct SegmentClassifier {
  std::array<std::array<double, kFeatureDim + 1>, kSegmentCount> weights{};
  std::array<double, kFeatureDim> mean{};
  std::array<double, kFeatureDim> scale{};
  std::array<double, kSegmentCount> class_weights{};
  TrainOptions options;
  std::vector<double> epoch_loss;  // objective after each epoch

  std::array<double, kSegmentCount> scores(std::span<const double> x) const;
  /// Argmax of scores, ties to the earlier segment. Throws
  /// Error(DimensionMismatch) unless x has kFeatureDim entries.
  UserSegment predict(std::span<const double> x) const;

  std::string serialize() const;
  /// Throws Error(InvalidConfig) on malformed input.
  static SegmentClassifier deserialize(std::string_view text);
};

/// Stochastic subgradient descent (step 1/(lambda t)) on the class-weighted
/// hinge loss. Example weight for class c is n_total / (6 n_c).
/// Throws Error(SingleClassData) or Error(DimensionMismatch).
SegmentClassifier train_segment_classifier(const std::vector<FeatureVector>& x,
                                           const std::vector<UserSegment>& y, const TrainOptions& options = {});

UserSegment predict_segment(const SegmentClassifier& model, std::span<const double> x);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationReport {
  std::array<ClassMetrics, kSegmentCount> per_class{};
  double macro_f1 = 0.0;  // over classes present in truth or predictions
  double accuracy = 0.0;
};

double f1_score(double precision, double recall);

/// Undefined precision or recall is reported as 0.
ClassificationReport classification_report(const std::vector<UserSegment>& predicted,
                                           const std::vector<UserSegment>& truth);

/// One CSV row per model: model,<segment>_P,<segment>_R,<segment>_F1,...,macro_F1
std::string classification_report_header();
std::string classification_report_row(std::string_view model, const ClassificationReport& report);

}  // namespace cdrloc
