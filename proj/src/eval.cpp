#include "xmodal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "xmodal/emotion.hpp"
#include "xmodal/error.hpp"
#include "xmodal/features.hpp"
#include "xmodal/manifest.hpp"

namespace xmodal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::dimension, "scores and labels differ in length (" + std::to_string(scores.size()) +
                                   " vs " + std::to_string(labels.size()) + ")");
  }
  for (int y : labels)
    if (y != 0 && y != 1) fail(ErrorKind::validation, "labels must be 0 or 1, got " + std::to_string(y));
}

std::vector<double> column(const Tensor& m, std::size_t c) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m.at(i, c);
  return out;
}

std::vector<int> label_column(const Tensor& m, std::size_t c) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m.at(i, c) > 0.5 ? 1 : 0;
  return out;
}

nlohmann::ordered_json threshold_json(double t) {
  if (t == kInf) return "inf";
  if (t == -kInf) return "-inf";
  return t;
}

}  // namespace

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_pair(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

double weighted_accuracy(const Confusion& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) {
    fail(ErrorKind::undefined_metric, "weighted accuracy needs both positive and negative labels");
  }
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return (tpr + tnr) / 2.0;
}

double weighted_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  return weighted_accuracy(confusion(scores, labels, threshold));
}

double f1_score(const Confusion& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) {
    fail(ErrorKind::undefined_metric, "F1 evaluation needs both positive and negative labels");
  }
  const double p = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double r = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold) {
  return f1_score(confusion(scores, labels, threshold));
}

std::vector<double> candidate_thresholds(std::span<const double> scores) {
  std::vector<double> u(scores.begin(), scores.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> out{-kInf};
  for (std::size_t i = 0; i + 1 < u.size(); ++i) {
    double mid = u[i] + (u[i + 1] - u[i]) / 2.0;
    // Adjacent doubles: the midpoint rounds onto the lower score and would
    // no longer separate the two.
    if (!(mid > u[i])) mid = u[i + 1];
    out.push_back(mid);
  }
  out.push_back(kInf);
  return out;
}

ThresholdChoice optimize_threshold(std::span<const double> scores, std::span<const int> labels, Metric metric) {
  check_pair(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Start with everything predicted positive (−∞) and move the threshold up
  // past one group of equal scores at a time.
  Confusion c;
  for (int y : labels) (y ? c.tp : c.fp)++;
  const auto thresholds = candidate_thresholds(scores);
  auto value = [&](const Confusion& k) { return metric == Metric::wa ? weighted_accuracy(k) : f1_score(k); };

  ThresholdChoice best{thresholds.front(), value(c)};
  std::size_t i = 0;
  for (std::size_t t = 1; t < thresholds.size(); ++t) {
    const double group = scores[order[i]];
    while (i < order.size() && scores[order[i]] == group) {
      if (labels[order[i]]) { --c.tp; ++c.fn; }
      else { --c.fp; ++c.tn; }
      ++i;
    }
    const double v = value(c);
    if (v > best.value) best = {thresholds[t], v};
  }
  return best;
}

EvalReport evaluate_scores(const Tensor& dev_scores, const Tensor& dev_labels, const Tensor& scores,
                           const Tensor& labels) {
  if (dev_scores.shape() != dev_labels.shape() || scores.shape() != labels.shape() ||
      dev_scores.rank() != 2 || scores.rank() != 2 || dev_scores.cols() != scores.cols()) {
    fail(ErrorKind::dimension, "score/label matrices disagree: dev " + shape_string(dev_scores.shape()) +
                                   "/" + shape_string(dev_labels.shape()) + ", eval " +
                                   shape_string(scores.shape()) + "/" + shape_string(labels.shape()));
  }
  EvalReport r;
  r.examples = scores.rows();
  const std::size_t classes = scores.cols();
  for (std::size_t c = 0; c < classes; ++c) {
    const auto ds = column(dev_scores, c);
    const auto dl = label_column(dev_labels, c);
    const auto s = column(scores, c);
    const auto l = label_column(labels, c);
    ClassReport cr;
    cr.name = c < kEmotionCount ? std::string(kEmotionClasses[c]) : std::to_string(c);
    cr.wa_threshold = optimize_threshold(ds, dl, Metric::wa).threshold;
    cr.f1_threshold = optimize_threshold(ds, dl, Metric::f1).threshold;
    cr.wa_counts = confusion(s, l, cr.wa_threshold);
    cr.f1_counts = confusion(s, l, cr.f1_threshold);
    cr.wa = weighted_accuracy(cr.wa_counts);
    cr.f1 = f1_score(cr.f1_counts);
    r.mean_wa += cr.wa;
    r.mean_f1 += cr.f1;
    r.classes.push_back(std::move(cr));
  }
  r.mean_wa /= static_cast<double>(classes);
  r.mean_f1 /= static_cast<double>(classes);
  return r;
}

Tensor score_dataset(const EmotionModel& model, const Dataset& data, const ModalityWeights& w,
                     std::size_t batch_size) {
  if (data.size() == 0) fail(ErrorKind::validation, "cannot score an empty data set");
  Tensor out({data.size(), kEmotionCount});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor logits = emotion_logits(model, collate(data, idx), w);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t c = 0; c < kEmotionCount; ++c) out.at(idx[k], c) = logits.at(k, c);
  }
  return out;
}

EvalReport evaluate_model(const EmotionModel& model, const Dataset& split, const Dataset& dev,
                          const ModalityWeights& w) {
  EvalReport r = evaluate_scores(score_dataset(model, dev, w), dev.label_matrix(), score_dataset(model, split, w),
                                 split.label_matrix());
  r.weights = w;
  return r;
}

ModalityWeights ablation_weights(const std::string& condition, const ModalityWeights& base) {
  if (condition == "A") return set_ablation_weights({base.audio, 0.0, 0.0});
  if (condition == "A+V") return set_ablation_weights({base.audio, base.video, 0.0});
  if (condition == "A+T") return set_ablation_weights({base.audio, 0.0, base.text});
  if (condition == "A+V+T") return set_ablation_weights(base);
  fail(ErrorKind::unsupported_ablation, "unknown ablation condition '" + condition + "'");
}

std::vector<EvalReport> ablation_sweep(const EmotionModel& model, const Dataset& split, const Dataset& dev,
                                       const ModalityWeights& base) {
  std::vector<EvalReport> out;
  for (const char* cond : kAblationConditions) {
    EvalReport r = evaluate_model(model, split, dev, ablation_weights(cond, base));
    r.condition = cond;
    out.push_back(std::move(r));
  }
  return out;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["condition"] = r.condition;
  j["weights"] = {r.weights.audio, r.weights.video, r.weights.text};
  j["split"] = r.split;
  j["examples"] = r.examples;
  j["run"] = r.run;
  j["seed"] = r.seed;
  j["mean_wa"] = r.mean_wa;
  j["mean_f1"] = r.mean_f1;
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : r.classes) {
    nlohmann::ordered_json k;
    k["name"] = c.name;
    k["wa"] = c.wa;
    k["f1"] = c.f1;
    k["wa_threshold"] = threshold_json(c.wa_threshold);
    k["f1_threshold"] = threshold_json(c.f1_threshold);
    k["wa_counts"] = {{"tp", c.wa_counts.tp}, {"fp", c.wa_counts.fp}, {"tn", c.wa_counts.tn}, {"fn", c.wa_counts.fn}};
    k["f1_counts"] = {{"tp", c.f1_counts.tp}, {"fp", c.f1_counts.fp}, {"tn", c.f1_counts.tn}, {"fn", c.f1_counts.fn}};
    classes.push_back(std::move(k));
  }
  return j.dump();
}

std::string format_report_table(std::span<const EvalReport> reports) {
  if (reports.empty()) return {};
  std::vector<std::string> groups;
  for (const auto& c : reports.front().classes) groups.push_back(c.name);
  groups.emplace_back("average");

  constexpr int kLabel = 10, kCell = 7;
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", kLabel, "");
  os << buf;
  for (const auto& g : groups) {
    std::snprintf(buf, sizeof buf, " %-*s", 2 * kCell + 1, g.c_str());
    os << buf;
  }
  os << "\n";
  std::snprintf(buf, sizeof buf, "%-*s", kLabel, "condition");
  os << buf;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    std::snprintf(buf, sizeof buf, " %*s %*s", kCell, "WA", kCell, "F1");
    os << buf;
  }
  os << "\n";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-*s", kLabel, r.condition.c_str());
    os << buf;
    for (const auto& c : r.classes) {
      std::snprintf(buf, sizeof buf, " %*.1f %*.1f", kCell, 100.0 * c.wa, kCell, 100.0 * c.f1);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, " %*.1f %*.1f", kCell, 100.0 * r.mean_wa, kCell, 100.0 * r.mean_f1);
    os << buf << "\n";
  }
  return os.str();
}

}  // namespace xmodal
