#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "sdmbart/eval/cross_validation.hpp"
#include "sdmbart/eval/interpretation.hpp"
#include "sdmbart/eval/metrics.hpp"

using namespace sdm;
using namespace sdm::eval;

namespace {

double mann_whitney(const std::vector<int>& y, const std::vector<double>& s) {
  double num = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        if (s[i] > s[j]) num += 1.0;
        else if (s[i] == s[j]) num += 0.5;
      }
    }
  }
  return num / pairs;
}

CutoffChoice exhaustive_youden(const std::vector<int>& y, const std::vector<double>& s) {
  std::set<double> candidates(s.begin(), s.end());
  CutoffChoice best{0.0, -2.0, {}};
  for (double c : candidates) {
    const auto cm = confusion_at(y, s, c);
    const double j = youden_index(cm);
    if (j > best.tss) best = {c, j, cm};  // ascending scan keeps the smallest maximizer
  }
  return best;
}

void random_instance(Rng& rng, std::size_t n, std::vector<int>& y, std::vector<double>& s) {
  y.assign(n, 0);
  s.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng.below(2));
    s[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse scores force ties
  }
  y[0] = 1;
  y[1] = 0;
}

}  // namespace

TEST(Auc, WorkedExamples) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<int>{1, 0, 1, 0}, std::vector<double>{0.9, 0.8, 0.7, 0.2}).auc, 0.75);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<int>{1, 1, 0}, std::vector<double>{0.9, 0.8, 0.1}).auc, 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<int>{1, 0, 1, 0}, std::vector<double>{0.3, 0.3, 0.3, 0.3}).auc, 0.5);
}

TEST(Auc, MatchesMannWhitneyWithTies) {
  Rng rng(42);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<int> y;
    std::vector<double> s;
    random_instance(rng, 2 + rng.below(150), y, s);
    EXPECT_NEAR(roc_auc(y, s).auc, mann_whitney(y, s), 1e-12);
  }
}

TEST(Auc, ReversedScoresComplement) {
  Rng rng(4);
  std::vector<int> y(60);
  std::vector<double> s(60);
  for (std::size_t i = 0; i < 60; ++i) {
    y[i] = i % 3 == 0;
    s[i] = rng.uniform();
  }
  std::vector<double> neg(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) neg[i] = -s[i];
  EXPECT_NEAR(roc_auc(y, s).auc + roc_auc(y, neg).auc, 1.0, 1e-12);
}

TEST(Auc, SingleClassIsUndefined) {
  try {
    roc_auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::metric_undefined);
  }
}

TEST(Youden, WorkedExamples) {
  const auto a = youden_cutoff(std::vector<int>{1, 1, 0, 0}, std::vector<double>{0.9, 0.7, 0.3, 0.2});
  EXPECT_DOUBLE_EQ(a.cutoff, 0.7);
  EXPECT_DOUBLE_EQ(a.tss, 1.0);
  const auto b = youden_cutoff(std::vector<int>{1, 0}, std::vector<double>{0.5, 0.5});
  EXPECT_DOUBLE_EQ(b.cutoff, 0.5);
  EXPECT_DOUBLE_EQ(b.tss, 0.0);
}

TEST(Youden, MatchesExhaustiveScan) {
  Rng rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<int> y;
    std::vector<double> s;
    random_instance(rng, 2 + rng.below(49), y, s);
    const auto got = youden_cutoff(y, s);
    const auto want = exhaustive_youden(y, s);
    EXPECT_EQ(got.cutoff, want.cutoff);
    EXPECT_EQ(got.confusion, want.confusion);
    EXPECT_NEAR(got.tss, youden_index(confusion_at(y, s, got.cutoff)), 1e-12);
  }
}

TEST(Metrics, WorkedConfusion) {
  const auto m = classification_metrics({2, 1, 1, 2});
  EXPECT_NEAR(*m.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*m.sensitivity, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.f_score, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*m.tss, 1.0 / 3.0, 1e-15);
  const auto perfect = classification_metrics({5, 0, 0, 5});
  EXPECT_EQ(*perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.f_score, 1.0);
  EXPECT_EQ(*perfect.tss, 1.0);
  const auto none = classification_metrics({0, 0, 3, 3});
  EXPECT_FALSE(none.precision);
  EXPECT_EQ(none.f_score, 0.0);
}

TEST(Metrics, FittedDistributionCountsEveryRow) {
  const std::vector<int> y{1, 0, 1, 0, 1};
  const std::vector<double> s{0.0, 0.05, 0.5, 0.99, 1.0};
  const auto d = fitted_distribution(y, s);
  EXPECT_EQ(d.presence[0], 1u);
  EXPECT_EQ(d.presence[5], 1u);
  EXPECT_EQ(d.presence[9], 1u);
  EXPECT_EQ(d.absence[0], 1u);
  EXPECT_EQ(d.absence[9], 1u);
}

TEST(Folds, PartitionAndStratification) {
  std::vector<int> y(10);
  for (std::size_t i = 0; i < 10; ++i) y[i] = i < 5;
  const auto f = stratified_folds(y, 5, 3);
  std::vector<int> size(5, 0);
  for (auto v : f) ++size[v];
  for (int s : size) EXPECT_EQ(s, 2);
  EXPECT_EQ(f, stratified_folds(y, 5, 3));

  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 20 + rng.below(80);
    std::vector<int> r(n);
    for (auto& v : r) v = rng.uniform() < 0.3;
    std::size_t pos = std::count(r.begin(), r.end(), 1);
    if (pos < 5 || n - pos < 5) continue;
    const auto folds = stratified_folds(r, 5, rep);
    for (int cls : {-1, 0, 1}) {
      std::vector<int> c(5, 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (cls < 0 || r[i] == cls) ++c[folds[i]];
      }
      EXPECT_LE(*std::max_element(c.begin(), c.end()) - *std::min_element(c.begin(), c.end()), 1);
    }
  }
}

TEST(Folds, TooFewPerClass) {
  std::vector<int> y{1, 1, 0, 0, 0, 0};
  try {
    stratified_folds(y, 5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::stratification);
  }
}

TEST(CrossValidation, SeparableSyntheticHasHighAuc) {
  const auto m = testutil::synthetic_matrix(200, 12, 4.0);
  bart::SamplerConfig cfg;
  cfg.trees = 20;
  cfg.n_burn = 50;
  cfg.n_draws = 50;
  const auto cv = kfold_cv(m, 5, cfg, 5);
  ASSERT_EQ(cv.folds.size(), 5u);
  EXPECT_GE(*cv.mean.at("auc"), 0.9);
  for (const auto& name : cv_metric_names()) EXPECT_TRUE(cv.mean.count(name));
}

namespace {

bart::BartModel hand_model(std::vector<std::string> covariates, std::vector<bart::Tree> trees) {
  bart::BartModel model;
  model.covariates = std::move(covariates);
  bart::Forest f;
  for (const auto& t : trees) f.append(t);
  model.draws.assign(4, f);
  return model;
}

}  // namespace

TEST(Importance, UnusedVariableIsExactlyZero) {
  const auto m = testutil::synthetic_matrix(60, 2);
  bart::Tree t;
  auto [l, r] = t.grow(0, 0, 1.0);
  t.set_mu(l, -1.0);
  t.set_mu(r, 1.0);
  const auto model = hand_model(m.columns, {t});
  const auto imp = permutation_importance(model, m, 0.5, 10, 3);
  ASSERT_EQ(imp.variables.size(), 2u);
  EXPECT_EQ(imp.variables[0], "x0");
  ASSERT_EQ(imp.values[1].size(), 10u);
  for (double v : imp.values[1]) EXPECT_EQ(v, 0.0);
  EXPECT_GT(imp.mean(0), 0.0);
}

TEST(Importance, IdentityPermutationContributesZero) {
  const auto m = testutil::synthetic_matrix(30, 2);
  bart::Tree t;
  auto [l, r] = t.grow(0, 0, 1.0);
  t.set_mu(l, -1.0);
  t.set_mu(r, 1.0);
  const auto model = hand_model(m.columns, {t});
  std::vector<std::size_t> id(m.n_rows());
  std::iota(id.begin(), id.end(), std::size_t{0});
  const double base = f_score_at(m.response, posterior_mean(model, m.values), 0.5);
  EXPECT_EQ(permuted_f_score(model, m, 0.5, 0, id), base);
}

TEST(PartialDependence, FlatForUnusedAndStepAtSplit) {
  auto m = testutil::synthetic_matrix(40, 9);
  for (std::size_t i = 0; i < m.n_rows(); ++i) {
    m.raw_values[i * 2] = m.values[i * 2] = static_cast<double>(i % 11);  // x0 spans 0..10
  }
  bart::Tree t;
  auto [l, r] = t.grow(0, 0, 5.0);
  t.set_mu(l, -1.0);
  t.set_mu(r, 1.0);
  const auto model = hand_model(m.columns, {t});

  const auto flat = partial_dependence(model, m, "x1", 20);
  const auto [lo, hi] = std::minmax_element(flat.mean.begin(), flat.mean.end());
  EXPECT_LT(*hi - *lo, 1e-9);

  const auto step = partial_dependence(model, m, "x0", 21);
  for (std::size_t g = 0; g < step.grid.size(); ++g) {
    const double want = step.grid[g] <= 5.0 ? bart::normal_cdf(-1.0) : bart::normal_cdf(1.0);
    EXPECT_DOUBLE_EQ(step.mean[g], want);
    EXPECT_LE(step.lower[g], step.mean[g]);
    EXPECT_GE(step.upper[g], step.mean[g]);
  }
  EXPECT_DOUBLE_EQ(step.grid.front(), 0.0);
  EXPECT_DOUBLE_EQ(step.grid.back(), 10.0);
}

TEST(PartialDependence, GridUsesOriginalScale) {
  auto m = testutil::synthetic_matrix(30, 1);
  m.standardization.variables["x0"] = {100.0, 10.0};
  for (std::size_t i = 0; i < m.n_rows(); ++i) m.raw_values[i * 2] = 100.0 + 10.0 * m.values[i * 2];
  const auto model = hand_model(m.columns, {bart::Tree{}});
  const auto curve = partial_dependence(model, m, "x0", 5);
  double lo = 1e300;
  for (std::size_t i = 0; i < m.n_rows(); ++i) lo = std::min(lo, m.raw_values[i * 2]);
  EXPECT_DOUBLE_EQ(curve.grid.front(), lo);
  EXPECT_THROW(partial_dependence(model, m, "zzz", 5), Error);
}
