#pragma once

// Binary classifier evaluation: ROC/AUC, Youden cutoff, confusion-matrix
// metrics. Presence (label 1) is the positive class throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdmbart/error.hpp"

namespace sdm::eval {

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

namespace detail {

inline void check_inputs(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error(ErrorKind::parameter, "labels and scores differ in length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorKind::parameter, "labels must be 0/1");
    if (std::isnan(scores[i])) throw Error(ErrorKind::parameter, "score is NaN");
    pos += static_cast<std::size_t>(labels[i]);
  }
  if (pos == 0 || pos == labels.size()) {
    throw Error(ErrorKind::metric_undefined, "both classes are required");
  }
}

/// Indices sorted by descending score.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

/// ROC from a threshold sweep over unique scores (equal scores form one step)
/// and trapezoid AUC. The area is accumulated in integer pair counts so that
/// it equals the Mann-Whitney statistic up to one rounding.
inline RocCurve roc_auc(std::span<const int> labels, std::span<const double> scores) {
  detail::check_inputs(labels, scores);
  const auto order = detail::descending_order(scores);
  std::uint64_t n_pos = 0;
  for (int y : labels) n_pos += static_cast<std::uint64_t>(y);
  const std::uint64_t n_neg = labels.size() - n_pos;

  RocCurve roc;
  roc.points.push_back({0.0, 0.0});
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t twice_area = 0;  // sum of dfp * (tp_prev + tp_next)
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    std::uint64_t dtp = 0;
    std::uint64_t dfp = 0;
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]] == 1) ++dtp;
      else ++dfp;
      ++i;
    }
    twice_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                          static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return roc;
}

/// Predicted presence when score >= cutoff.
inline ConfusionMatrix confusion_at(std::span<const int> labels, std::span<const double> scores, double cutoff) {
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = scores[i] >= cutoff;
    if (labels[i] == 1) {
      predicted ? ++cm.tp : ++cm.fn;
    } else {
      predicted ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

/// Youden's J = sensitivity + specificity - 1 for a confusion matrix with
/// both classes present.
inline double youden_index(const ConfusionMatrix& cm) {
  const double sensitivity = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  const double specificity = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
  return sensitivity + specificity - 1.0;
}

struct CutoffChoice {
  double cutoff = 0.5;
  double tss = 0.0;  // max J
  ConfusionMatrix confusion;
};

/// Cutoff among the unique scores maximizing Youden's J; ties go to the
/// smallest maximizing cutoff.
inline CutoffChoice youden_cutoff(std::span<const int> labels, std::span<const double> scores) {
  detail::check_inputs(labels, scores);
  const auto order = detail::descending_order(scores);
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += static_cast<std::size_t>(y);
  const std::size_t n_neg = labels.size() - n_pos;

  CutoffChoice best;
  bool have = false;
  ConfusionMatrix cm{0, 0, n_pos, n_neg};
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]] == 1) {
        ++cm.tp;
        --cm.fn;
      } else {
        ++cm.fp;
        --cm.tn;
      }
      ++i;
    }
    const double j = youden_index(cm);
    if (!have || j >= best.tss) {
      best = {s, j, cm};
      have = true;
    }
  }
  return best;
}

/// Undefined ratios (zero denominator) are empty.
struct ClassificationMetrics {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> precision;
  double f_score = 0.0;
  std::optional<double> accuracy;
  std::optional<double> tss;
};

inline ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  ClassificationMetrics m;
  m.sensitivity = ratio(cm.tp, cm.tp + cm.fn);
  m.specificity = ratio(cm.tn, cm.tn + cm.fp);
  m.precision = ratio(cm.tp, cm.tp + cm.fp);
  m.accuracy = ratio(cm.tp + cm.tn, cm.total());
  if (m.precision && m.sensitivity && *m.precision + *m.sensitivity > 0.0) {
    m.f_score = 2.0 * *m.precision * *m.sensitivity / (*m.precision + *m.sensitivity);
  }
  if (m.sensitivity && m.specificity) m.tss = *m.sensitivity + *m.specificity - 1.0;
  return m;
}

/// F1 of 0/1 predictions from scores at a cutoff.
inline double f_score_at(std::span<const int> labels, std::span<const double> scores, double cutoff) {
  return classification_metrics(confusion_at(labels, scores, cutoff)).f_score;
}

/// Counts of scores per class in equal-width bins over [0, 1].
struct FittedDistribution {
  std::size_t bins = 10;
  std::vector<std::size_t> presence;
  std::vector<std::size_t> absence;
};

inline FittedDistribution fitted_distribution(std::span<const int> labels, std::span<const double> scores,
                                              std::size_t bins = 10) {
  FittedDistribution d{bins, std::vector<std::size_t>(bins, 0), std::vector<std::size_t>(bins, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto b = static_cast<std::size_t>(std::clamp(scores[i], 0.0, 1.0) * static_cast<double>(bins));
    b = std::min(b, bins - 1);
    (labels[i] == 1 ? d.presence : d.absence)[b] += 1;
  }
  return d;
}

struct EvaluationReport {
  double cutoff = 0.5;
  RocCurve roc;
  double tss = 0.0;
  ConfusionMatrix confusion;
  ClassificationMetrics metrics;
  FittedDistribution fitted;
};

/// Cutoff, ROC and metrics for in-sample fitted means.
inline EvaluationReport evaluate_fit(std::span<const int> labels, std::span<const double> fitted_mean) {
  EvaluationReport r;
  const auto choice = youden_cutoff(labels, fitted_mean);
  r.cutoff = choice.cutoff;
  r.tss = choice.tss;
  r.confusion = choice.confusion;
  r.roc = roc_auc(labels, fitted_mean);
  r.metrics = classification_metrics(r.confusion);
  r.fitted = fitted_distribution(labels, fitted_mean);
  return r;
}

}  // namespace sdm::eval
