#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xmodal/joint_encoder.hpp"

namespace xmodal {

class EmotionModel;
struct Dataset;

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Prediction is positive when score ≥ threshold.
Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Balanced accuracy (TPR + TNR)/2. Both classes must be present.
double weighted_accuracy(const Confusion& c);
double weighted_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold);
/// 2PR/(P+R), or 0 when P+R = 0.
double f1_score(const Confusion& c);
double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold);

enum class Metric { wa, f1 };

struct ThresholdChoice {
  double threshold = 0.0;
  double value = 0.0;
};

/// −∞, the midpoints of consecutive sorted unique scores, +∞ (ascending).
std::vector<double> candidate_thresholds(std::span<const double> scores);
/// Best candidate for `metric`; ties go to the lowest threshold.
ThresholdChoice optimize_threshold(std::span<const double> scores, std::span<const int> labels, Metric metric);

struct ClassReport {
  std::string name;
  double wa = 0.0;
  double f1 = 0.0;
  double wa_threshold = 0.0;
  double f1_threshold = 0.0;
  Confusion wa_counts;  // at wa_threshold
  Confusion f1_counts;  // at f1_threshold
};

struct EvalReport {
  std::string condition = "A+V+T";
  ModalityWeights weights;
  std::string split;
  std::size_t examples = 0;
  std::vector<ClassReport> classes;
  double mean_wa = 0.0;
  double mean_f1 = 0.0;
  std::uint64_t seed = 0;
  std::size_t run = 0;

  /// (mean WA + mean F1)/2, the run-selection criterion.
  double selection_score() const { return (mean_wa + mean_f1) / 2.0; }
};

/// Thresholds are optimized per class on the dev scores, then frozen and
/// applied to the evaluation scores. Score and label matrices are n × C.
EvalReport evaluate_scores(const Tensor& dev_scores, const Tensor& dev_labels, const Tensor& scores,
                           const Tensor& labels);

/// n × 6 emotion logits for a data set.
Tensor score_dataset(const EmotionModel& model, const Dataset& data, const ModalityWeights& w,
                     std::size_t batch_size = 32);

EvalReport evaluate_model(const EmotionModel& model, const Dataset& split, const Dataset& dev,
                          const ModalityWeights& w);

/// Table-column order.
inline constexpr const char* kAblationConditions[] = {"A", "A+V", "A+T", "A+V+T"};

/// `base` with the modalities absent from `condition` set to 0.
ModalityWeights ablation_weights(const std::string& condition, const ModalityWeights& base);

/// One report per condition, in kAblationConditions order.
std::vector<EvalReport> ablation_sweep(const EmotionModel& model, const Dataset& split, const Dataset& dev,
                                       const ModalityWeights& base);

/// Single-line JSON; infinite thresholds are written as "inf"/"-inf".
std::string report_json(const EvalReport& r);
/// Aligned text table: one row per report, a WA/F1 column pair per class
/// plus the averages.
std::string format_report_table(std::span<const EvalReport> reports);

}  // namespace xmodal
