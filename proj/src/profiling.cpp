#include "cdrloc/profiling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "cdrloc/csv.hpp"
#include "cdrloc/error.hpp"
#include "cdrloc/rng.hpp"

namespace cdrloc {

FeatureVector extract_features(const UserStream& stream, const TowerRegistry& towers, const LocalClock& clock,
                               DistanceMode mode) {
  if (stream.records.empty()) throw Error(ErrorCode::EmptyStream, "user " + stream.user_id);
  FeatureVector f{};
  std::array<double, 24> dist_sum{};
  std::array<std::size_t, 24> dist_count{};
  std::set<CellIndex> cells;
  std::size_t weekend = 0;
  const auto& recs = stream.records;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const int h = clock.hour(recs[i].ts);
    f[kHourlyFreqOffset + h] += 1.0;
    cells.insert(recs[i].cell);
    if (clock.is_weekend(recs[i].ts)) ++weekend;
    if (i + 1 < recs.size()) {
      dist_sum[h] += distance_km(towers[recs[i].cell].pos, towers[recs[i + 1].cell].pos, mode);
      ++dist_count[h];
    }
  }
  const double n = static_cast<double>(recs.size());
  for (int h = 0; h < 24; ++h) {
    f[kHourlyFreqOffset + h] /= n;
    f[kHourlyDistanceOffset + h] = dist_count[h] == 0 ? 0.0 : dist_sum[h] / static_cast<double>(dist_count[h]);
  }
  f[kDistinctCellRatio] = static_cast<double>(cells.size()) / n;
  f[kWeekendFraction] = static_cast<double>(weekend) / n;
  return f;
}

namespace {

void check_dimension(std::span<const double> x) {
  if (x.size() != kFeatureDim) {
    throw Error(ErrorCode::DimensionMismatch,
                "expected " + std::to_string(kFeatureDim) + " features, got " + std::to_string(x.size()));
  }
}

using Augmented = std::array<double, kFeatureDim + 1>;

Augmented standardize(const SegmentClassifier& m, std::span<const double> x) {
  Augmented z{};
  for (std::size_t j = 0; j < kFeatureDim; ++j) z[j] = (x[j] - m.mean[j]) / m.scale[j];
  z[kFeatureDim] = 1.0;
  return z;
}

double dot(const Augmented& a, const Augmented& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

double objective(const SegmentClassifier& m, const std::vector<Augmented>& z, const std::vector<int>& label,
                 const std::vector<double>& example_weight) {
  double reg = 0.0;
  for (const auto& w : m.weights) reg += dot(w, w);
  double hinge = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (int k = 0; k < kSegmentCount; ++k) {
      const double y = label[i] == k ? 1.0 : -1.0;
      hinge += example_weight[i] * std::max(0.0, 1.0 - y * dot(m.weights[k], z[i]));
    }
  }
  return 0.5 * m.options.lambda * reg + hinge / static_cast<double>(z.size());
}

}  // namespace

std::array<double, kSegmentCount> SegmentClassifier::scores(std::span<const double> x) const {
  check_dimension(x);
  const Augmented z = standardize(*this, x);
  std::array<double, kSegmentCount> s{};
  for (int k = 0; k < kSegmentCount; ++k) s[k] = dot(weights[k], z);
  return s;
}

UserSegment SegmentClassifier::predict(std::span<const double> x) const {
  const auto s = scores(x);
  int best = 0;
  for (int k = 1; k < kSegmentCount; ++k) {
    if (s[k] > s[best]) best = k;
  }
  return kAllSegments[best];
}

UserSegment predict_segment(const SegmentClassifier& model, std::span<const double> x) { return model.predict(x); }

SegmentClassifier train_segment_classifier(const std::vector<FeatureVector>& x, const std::vector<UserSegment>& y,
                                           const TrainOptions& options) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(x.size()) + " feature vectors but " + std::to_string(y.size()) + " labels");
  }
  std::array<std::size_t, kSegmentCount> class_count{};
  for (UserSegment s : y) ++class_count[static_cast<int>(s)];
  const auto present = std::count_if(class_count.begin(), class_count.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) throw Error(ErrorCode::SingleClassData, "training data needs at least two segments");

  SegmentClassifier m;
  m.options = options;
  const std::size_t n = x.size();
  const double dn = static_cast<double>(n);
  for (int k = 0; k < kSegmentCount; ++k) {
    m.class_weights[k] = !options.class_weighting || class_count[k] == 0
                             ? 1.0
                             : dn / (kSegmentCount * static_cast<double>(class_count[k]));
  }
  for (std::size_t j = 0; j < kFeatureDim; ++j) {
    double mean = 0.0;
    for (const auto& v : x) mean += v[j];
    mean /= dn;
    double var = 0.0;
    for (const auto& v : x) var += (v[j] - mean) * (v[j] - mean);
    const double sd = std::sqrt(var / dn);
    m.mean[j] = mean;
    m.scale[j] = sd > 1e-12 ? sd : 1.0;
  }

  std::vector<Augmented> z;
  z.reserve(n);
  for (const auto& v : x) z.push_back(standardize(m, v));
  std::vector<int> label(n);
  std::vector<double> example_weight(n);
  for (std::size_t i = 0; i < n; ++i) {
    label[i] = static_cast<int>(y[i]);
    example_weight[i] = m.class_weights[label[i]];
  }

  Rng rng(options.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t t = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t idx : order) {
      ++t;
      const double eta = 1.0 / (options.lambda * static_cast<double>(t));
      const double shrink = 1.0 - eta * options.lambda;
      const Augmented& zi = z[idx];
      for (int k = 0; k < kSegmentCount; ++k) {
        auto& w = m.weights[k];
        const double yk = label[idx] == k ? 1.0 : -1.0;
        const double margin = yk * dot(w, zi);
        for (double& wj : w) wj *= shrink;
        if (margin < 1.0) {
          const double step = eta * example_weight[idx] * yk;
          for (std::size_t j = 0; j < w.size(); ++j) w[j] += step * zi[j];
        }
      }
    }
    m.epoch_loss.push_back(objective(m, z, label, example_weight));
  }
  return m;
}

namespace {

void write_row(std::ostringstream& os, std::string_view name, std::span<const double> values) {
  os << name;
  char buf[40];
  for (double v : values) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    os << buf;
  }
  os << '\n';
}

std::vector<double> read_row(std::istringstream& is, std::string_view name, std::size_t count) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::InvalidConfig, "model truncated before " + std::string(name));
  std::istringstream ls(line);
  std::string tag;
  ls >> tag;
  if (tag != name) throw Error(ErrorCode::InvalidConfig, "expected model row " + std::string(name) + ", got " + tag);
  std::vector<double> out;
  std::string tok;
  while (ls >> tok) {
    const auto v = csv::parse_double(tok);
    if (!v) throw Error(ErrorCode::InvalidConfig, "bad number in model row " + std::string(name));
    out.push_back(*v);
  }
  if (out.size() != count) throw Error(ErrorCode::InvalidConfig, "wrong width for model row " + std::string(name));
  return out;
}

}  // namespace

std::string SegmentClassifier::serialize() const {
  std::ostringstream os;
  os << "segment_classifier v1\n";
  os << "options " << options.seed << ' ' << options.epochs << ' ' << csv::fixed(options.lambda, 12) << ' '
     << (options.class_weighting ? 1 : 0) << '\n';
  write_row(os, "class_weights", class_weights);
  write_row(os, "mean", mean);
  write_row(os, "scale", scale);
  for (int k = 0; k < kSegmentCount; ++k) write_row(os, to_string(kAllSegments[k]), weights[k]);
  return os.str();
}

SegmentClassifier SegmentClassifier::deserialize(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line) || line != "segment_classifier v1") {
    throw Error(ErrorCode::InvalidConfig, "not a segment classifier file");
  }
  SegmentClassifier m;
  if (!std::getline(is, line)) throw Error(ErrorCode::InvalidConfig, "model truncated");
  {
    std::istringstream ls(line);
    std::string tag;
    int weighting = 1;
    if (!(ls >> tag >> m.options.seed >> m.options.epochs >> m.options.lambda >> weighting) || tag != "options") {
      throw Error(ErrorCode::InvalidConfig, "bad options row");
    }
    m.options.class_weighting = weighting != 0;
  }
  const auto cw = read_row(is, "class_weights", kSegmentCount);
  std::copy(cw.begin(), cw.end(), m.class_weights.begin());
  const auto mean = read_row(is, "mean", kFeatureDim);
  std::copy(mean.begin(), mean.end(), m.mean.begin());
  const auto scale = read_row(is, "scale", kFeatureDim);
  std::copy(scale.begin(), scale.end(), m.scale.begin());
  for (int k = 0; k < kSegmentCount; ++k) {
    const auto w = read_row(is, to_string(kAllSegments[k]), kFeatureDim + 1);
    std::copy(w.begin(), w.end(), m.weights[k].begin());
  }
  return m;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

ClassificationReport classification_report(const std::vector<UserSegment>& predicted,
                                           const std::vector<UserSegment>& truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::DimensionMismatch, "prediction and truth lengths differ");
  }
  ClassificationReport rep;
  if (truth.empty()) return rep;
  std::array<std::size_t, kSegmentCount> tp{}, pred_count{}, true_count{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = static_cast<int>(predicted[i]);
    const int t = static_cast<int>(truth[i]);
    ++pred_count[p];
    ++true_count[t];
    if (p == t) {
      ++tp[t];
      ++correct;
    }
  }
  double f1_sum = 0.0;
  int f1_classes = 0;
  for (int k = 0; k < kSegmentCount; ++k) {
    ClassMetrics& c = rep.per_class[k];
    c.support = true_count[k];
    c.precision = pred_count[k] == 0 ? 0.0 : static_cast<double>(tp[k]) / static_cast<double>(pred_count[k]);
    c.recall = true_count[k] == 0 ? 0.0 : static_cast<double>(tp[k]) / static_cast<double>(true_count[k]);
    c.f1 = f1_score(c.precision, c.recall);
    if (true_count[k] > 0 || pred_count[k] > 0) {
      f1_sum += c.f1;
      ++f1_classes;
    }
  }
  rep.macro_f1 = f1_classes == 0 ? 0.0 : f1_sum / f1_classes;
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  return rep;
}

std::string classification_report_header() {
  std::string h = "model";
  for (UserSegment s : kAllSegments) {
    const std::string name(to_string(s));
    h += "," + name + "_P," + name + "_R," + name + "_F1";
  }
  return h + ",macro_F1";
}

std::string classification_report_row(std::string_view model, const ClassificationReport& report) {
  std::string row(model);
  for (const auto& c : report.per_class) {
    row += "," + csv::fixed(c.precision, 4) + "," + csv::fixed(c.recall, 4) + "," + csv::fixed(c.f1, 4);
  }
  return row + "," + csv::fixed(report.macro_f1, 4);
}

}  // namespace cdrloc
