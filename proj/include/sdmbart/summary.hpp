#pragma once

// Posterior summaries over MCMC draws. Quantiles are exact order statistics
// (inverse empirical CDF): the q-quantile of n sorted draws is element
// ceil(q n) - 1, so the median of an even count is the lower midpoint.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sdm {

inline std::size_t quantile_rank(std::size_t n, double q) {
  const double pos = std::ceil(q * static_cast<double>(n) - 1e-9);
  const auto rank = static_cast<std::size_t>(std::max(1.0, pos));
  return std::min(rank, n) - 1;
}

inline double sorted_quantile(std::span<const double> sorted, double q) { return sorted[quantile_rank(sorted.size(), q)]; }

struct DrawSummary {
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct QuantileLevels {
  double lower = 0.025;
  double upper = 0.975;
};

/// Mean (accumulated in draw order) plus median and the lower/upper quantiles.
inline DrawSummary summarize_draws(std::span<const double> draws, QuantileLevels levels = {}) {
  DrawSummary s;
  double sum = 0.0;
  for (double v : draws) sum += v;
  s.mean = sum / static_cast<double>(draws.size());
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  s.median = sorted_quantile(sorted, 0.5);
  s.lower = sorted_quantile(sorted, levels.lower);
  s.upper = sorted_quantile(sorted, levels.upper);
  return s;
}

inline double mean_of(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace sdm
