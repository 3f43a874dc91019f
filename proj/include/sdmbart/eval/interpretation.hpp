#pragma once

// Permutation variable importance and partial-dependence response curves.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sdmbart/bart/prior.hpp"
#include "sdmbart/bart/sampler.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/eval/metrics.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/parallel.hpp"
#include "sdmbart/random.hpp"
#include "sdmbart/summary.hpp"

namespace sdm::eval {

inline void check_schema(const bart::BartModel& model, const ModelMatrix& matrix) {
  if (model.covariates != matrix.columns) {
    throw Error(ErrorKind::schema, "model matrix columns do not match the model covariates");
  }
}

/// Posterior-mean probability per row (draws accumulated in order).
inline std::vector<double> posterior_mean(const bart::BartModel& model, std::span<const double> rows,
                                          std::size_t workers = 1) {
  const auto draws = bart::predict_model_scale(model, rows, workers);
  std::vector<double> mean(draws.n_rows);
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = mean_of(draws.row(i));
  return mean;
}

/// F-score after reordering column `column` by `perm` (row i takes row perm[i]'s value).
inline double permuted_f_score(const bart::BartModel& model, const ModelMatrix& matrix, double cutoff,
                               std::size_t column, std::span<const std::size_t> perm, std::size_t workers = 1) {
  const std::size_t p = matrix.n_cols();
  std::vector<double> rows = matrix.values;
  for (std::size_t i = 0; i < perm.size(); ++i) rows[i * p + column] = matrix.values[perm[i] * p + column];
  return f_score_at(matrix.response, posterior_mean(model, rows, workers), cutoff);
}

struct VariableImportance {
  std::vector<std::string> variables;        // sorted by mean importance, descending
  std::vector<std::vector<double>> values;   // per variable, one value per iteration
  double baseline_f_score = 0.0;

  double mean(std::size_t j) const { return mean_of(values[j]); }
};

/// Importance = baseline F-score minus the F-score after permuting one
/// column, using posterior-mean probabilities at the given cutoff.
inline VariableImportance permutation_importance(const bart::BartModel& model, const ModelMatrix& matrix,
                                                 double cutoff, std::size_t n_iter, std::uint64_t seed,
                                                 std::size_t workers = 1) {
  check_schema(model, matrix);
  const std::size_t n = matrix.n_rows();
  const std::size_t p = matrix.n_cols();
  const double baseline = f_score_at(matrix.response, posterior_mean(model, matrix.values, workers), cutoff);

  std::vector<std::vector<double>> values(p, std::vector<double>(n_iter, 0.0));
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t it = 0; it < n_iter; ++it) {
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(derive_seed(seed, matrix.columns[j]), it));
      rng.shuffle(perm.begin(), perm.end());
      values[j][it] = baseline - permuted_f_score(model, matrix, cutoff, j, perm, workers);
    }
  }

  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_of(values[a]) > mean_of(values[b]); });
  VariableImportance out;
  out.baseline_f_score = baseline;
  for (auto j : order) {
    out.variables.push_back(matrix.columns[j]);
    out.values.push_back(values[j]);
  }
  return out;
}

struct ResponseCurve {
  std::string variable;
  std::vector<double> grid;  // original scale
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
};

/// Partial dependence over `grid_size` equally spaced original-scale values
/// spanning the training range. Per draw, the curve at g is the mean over
/// training rows of the prediction with the variable forced to g; the band
/// is the 2.5%/97.5% order statistics across draws.
inline ResponseCurve partial_dependence(const bart::BartModel& model, const ModelMatrix& matrix,
                                        const std::string& variable, std::size_t grid_size = 20,
                                        std::size_t workers = 1, QuantileLevels levels = {}) {
  check_schema(model, matrix);
  if (grid_size < 2) throw Error(ErrorKind::parameter, "grid_size must be >= 2");
  const auto col = matrix.column_index(variable);
  if (!col) throw Error(ErrorKind::schema, "unknown variable '" + variable + "'");
  const std::size_t j = *col;
  const std::size_t n = matrix.n_rows();
  const std::size_t p = matrix.n_cols();

  double lo = matrix.raw(0, j);
  double hi = lo;
  for (std::size_t i = 1; i < n; ++i) {
    lo = std::min(lo, matrix.raw(i, j));
    hi = std::max(hi, matrix.raw(i, j));
  }
  if (!(hi > lo)) throw Error(ErrorKind::parameter, "variable '" + variable + "' is constant in the training data");

  ResponseCurve curve;
  curve.variable = variable;
  for (std::size_t g = 0; g < grid_size; ++g) {
    curve.grid.push_back(g + 1 == grid_size ? hi
                                            : lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_size - 1));
  }
  curve.mean.resize(grid_size);
  curve.lower.resize(grid_size);
  curve.upper.resize(grid_size);

  const std::size_t n_draws = model.draws.size();
  parallel_for(grid_size, workers, [&](std::size_t g) {
    const double forced = model.standardization.apply(variable, curve.grid[g]);
    std::vector<double> row(p);
    std::vector<double> per_draw(n_draws, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(matrix.values.begin() + static_cast<std::ptrdiff_t>(i * p), p, row.begin());
      row[j] = forced;
      for (std::size_t d = 0; d < n_draws; ++d) per_draw[d] += bart::normal_cdf(model.draws[d].evaluate(row.data()));
    }
    for (auto& v : per_draw) v /= static_cast<double>(n);
    const auto s = summarize_draws(per_draw, levels);
    curve.mean[g] = s.mean;
    curve.lower[g] = s.lower;
    curve.upper[g] = s.upper;
  });
  return curve;
}

}  // namespace sdm::eval
