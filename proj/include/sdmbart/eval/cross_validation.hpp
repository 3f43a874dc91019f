#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdmbart/bart/sampler.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/eval/metrics.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/random.hpp"
#include "sdmbart/summary.hpp"

namespace sdm::eval {

/// Per-fold metric set, also the radar-chart axes.
inline const std::vector<std::string>& cv_metric_names() {
  static const std::vector<std::string> names{"accuracy", "sensitivity", "specificity", "precision",
                                              "f_score",  "tss",         "auc"};
  return names;
}

using MetricMap = std::map<std::string, std::optional<double>>;

/// Stratified fold labels in [0, k). Each class is shuffled and dealt
/// round-robin; the second class continues where the first stopped, so fold
/// sizes differ by at most one overall and per class.
inline std::vector<std::size_t> stratified_folds(std::span<const int> response, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::parameter, "k must be >= 2");
  std::vector<std::size_t> fold(response.size(), 0);
  std::size_t offset = 0;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < response.size(); ++i) {
      if (response[i] == cls) members.push_back(i);
    }
    if (members.size() < k) {
      throw Error(ErrorKind::stratification,
                  "class " + std::to_string(cls) + " has " + std::to_string(members.size()) + " rows, fewer than k=" +
                      std::to_string(k));
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(members.begin(), members.end());
    for (std::size_t pos = 0; pos < members.size(); ++pos) fold[members[pos]] = (offset + pos) % k;
    offset = (offset + members.size()) % k;
  }
  return fold;
}

struct CrossValidation {
  std::vector<std::size_t> fold_of;
  std::vector<MetricMap> folds;
  MetricMap mean;  // over folds where the metric is defined
};

/// Held-out metrics for one fold: fit on the other folds, pick the Youden
/// cutoff on the training fitted means, score the held-out rows.
inline MetricMap evaluate_fold(const ModelMatrix& matrix, const std::vector<std::size_t>& fold_of, std::size_t fold,
                               const bart::SamplerConfig& config, std::size_t workers) {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (std::size_t i = 0; i < fold_of.size(); ++i) (fold_of[i] == fold ? test : train).push_back(i);
  const ModelMatrix train_m = matrix.subset(train);
  const ModelMatrix test_m = matrix.subset(test);
  const auto model = bart::fit_bart(train_m, config);
  const auto cutoff = youden_cutoff(train_m.response, model.fitted_mean()).cutoff;

  const auto draws = bart::predict_model_scale(model, test_m.values, workers);
  std::vector<double> mean(test_m.n_rows());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = mean_of(draws.row(i));

  const auto m = classification_metrics(confusion_at(test_m.response, mean, cutoff));
  MetricMap out;
  out["accuracy"] = m.accuracy;
  out["sensitivity"] = m.sensitivity;
  out["specificity"] = m.specificity;
  out["precision"] = m.precision;
  out["f_score"] = m.f_score;
  out["tss"] = m.tss;
  out["auc"] = std::nullopt;
  if (test_m.count_class(0) > 0 && test_m.count_class(1) > 0) out["auc"] = roc_auc(test_m.response, mean).auc;
  return out;
}

inline CrossValidation kfold_cv(const ModelMatrix& matrix, std::size_t k, const bart::SamplerConfig& config,
                                std::uint64_t seed, std::size_t workers = 1) {
  CrossValidation cv;
  cv.fold_of = stratified_folds(matrix.response, k, seed);
  for (std::size_t f = 0; f < k; ++f) {
    auto fold_config = config;
    fold_config.seed = derive_seed(seed, 1000 + f);
    cv.folds.push_back(evaluate_fold(matrix, cv.fold_of, f, fold_config, workers));
  }
  for (const auto& name : cv_metric_names()) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& fold : cv.folds) {
      if (const auto& v = fold.at(name)) {
        sum += *v;
        ++count;
      }
    }
    cv.mean[name] = count ? std::optional<double>(sum / static_cast<double>(count)) : std::nullopt;
  }
  return cv;
}

}  // namespace sdm::eval
