#pragma once

// Probit BART sampler: Albert-Chib latent augmentation plus Metropolis-Hastings
// GROW / PRUNE / CHANGE tree moves with leaf values integrated out, followed by
// conjugate leaf draws.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdmbart/bart/prior.hpp"
#include "sdmbart/bart/tree.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/geo.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/parallel.hpp"
#include "sdmbart/random.hpp"

namespace sdm::bart {

struct SamplerConfig {
  std::size_t trees = 200;
  double alpha = 0.95;
  double beta = 2.0;
  double k = 2.0;
  std::size_t n_cutpoints = 100;
  std::size_t n_burn = 250;
  std::size_t n_draws = 1000;
  std::array<double, 3> move_probs{0.28, 0.28, 0.44};  // grow, prune, change
  std::uint64_t seed = 1;

  double sigma_mu() const { return leaf_prior_sd(k, trees); }

  void validate() const {
    if (trees < 1) throw Error(ErrorKind::parameter, "tree count must be >= 1");
    if (n_draws < 1) throw Error(ErrorKind::parameter, "n_draws must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::parameter, "alpha must lie in (0,1)");
    if (!(beta >= 0.0)) throw Error(ErrorKind::parameter, "beta must be >= 0");
    if (!(k > 0.0)) throw Error(ErrorKind::parameter, "k must be > 0");
    if (n_cutpoints < 1) throw Error(ErrorKind::parameter, "n_cutpoints must be >= 1");
    double sum = 0.0;
    for (double p : move_probs) {
      if (!(p >= 0.0)) throw Error(ErrorKind::parameter, "move probabilities must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::parameter, "move probabilities must sum to 1");
  }

  bool operator==(const SamplerConfig&) const = default;
};

/// Equally spaced interior cutpoints per covariate over its observed range.
/// A constant covariate gets none and is never split on.
class CutpointGrid {
 public:
  CutpointGrid() = default;

  CutpointGrid(const std::vector<std::pair<double, double>>& ranges, std::size_t n_cutpoints) {
    cuts_.resize(ranges.size());
    for (std::size_t j = 0; j < ranges.size(); ++j) {
      const auto [lo, hi] = ranges[j];
      if (!(hi > lo)) continue;
      const double step = (hi - lo) / static_cast<double>(n_cutpoints + 1);
      for (std::size_t c = 1; c <= n_cutpoints; ++c) {
        const double cut = lo + static_cast<double>(c) * step;
        if (cut > lo && cut < hi) cuts_[j].push_back(cut);
      }
      if (!cuts_[j].empty()) usable_.push_back(static_cast<int>(j));
    }
  }

  const std::vector<int>& usable_variables() const { return usable_; }
  const std::vector<double>& cuts(int var) const { return cuts_[static_cast<std::size_t>(var)]; }

  /// Uniform variable among usable ones, then uniform cutpoint.
  std::optional<std::pair<int, double>> draw_rule(Rng& rng) const {
    if (usable_.empty()) return std::nullopt;
    const int var = usable_[rng.below(usable_.size())];
    const auto& c = cuts(var);
    return std::pair{var, c[rng.below(c.size())]};
  }

 private:
  std::vector<std::vector<double>> cuts_;
  std::vector<int> usable_;
};

/// Row-major training covariates. n == 0 means prior-only sampling.
struct TrainingView {
  const double* x = nullptr;
  std::size_t n = 0;
  std::size_t p = 0;

  const double* row(std::size_t i) const { return x + i * p; }
};

/// A tree together with the leaf each training observation falls in.
struct TreeState {
  Tree tree;
  std::vector<int> leaf_of;

  explicit TreeState(std::size_t n = 0) : leaf_of(n, Tree::root()) {}

  double fit(std::size_t i) const { return tree.node(leaf_of[i]).mu; }
};

enum class Move { grow, prune, change };

struct StepOutcome {
  Move move = Move::grow;
  bool legal = false;
  bool accepted = false;
  double log_ratio = -std::numeric_limits<double>::infinity();
};

struct GrowRatio {
  double log_likelihood = 0.0;
  double log_prior = 0.0;
  double log_proposal = 0.0;
  double total() const { return log_likelihood + log_prior + log_proposal; }
};

/// Log Metropolis-Hastings ratio for growing a leaf at `depth` into two
/// children. The rule prior and the rule proposal are the same uniform law
/// and cancel; `leaves_before` and `nogs_after` give the move-selection terms.
inline GrowRatio grow_log_ratio(std::size_t depth, std::size_t leaves_before, std::size_t nogs_after,
                                double sum_left, std::size_t n_left, double sum_right, std::size_t n_right,
                                const SamplerConfig& config, bool with_likelihood = true) {
  const double sm = config.sigma_mu();
  GrowRatio r;
  if (with_likelihood) {
    r.log_likelihood = log_integrated_likelihood(sum_left, n_left, sm) +
                       log_integrated_likelihood(sum_right, n_right, sm) -
                       log_integrated_likelihood(sum_left + sum_right, n_left + n_right, sm);
  }
  const double p_here = split_probability(depth, config.alpha, config.beta);
  const double p_child = split_probability(depth + 1, config.alpha, config.beta);
  r.log_prior = std::log(p_here) + 2.0 * std::log1p(-p_child) - std::log1p(-p_here);
  r.log_proposal = std::log(config.move_probs[1] / static_cast<double>(nogs_after)) -
                   std::log(config.move_probs[0] / static_cast<double>(leaves_before));
  return r;
}

namespace detail {

struct Partition {
  double sum_left = 0.0;
  double sum_right = 0.0;
  std::size_t n_left = 0;
  std::size_t n_right = 0;
};

inline Partition partition_node(const TreeState& state, const TrainingView& data, std::span<const double> residuals,
                                int leaf_a, int leaf_b, int var, double cut) {
  Partition p;
  for (std::size_t i = 0; i < data.n; ++i) {
    const int l = state.leaf_of[i];
    if (l != leaf_a && l != leaf_b) continue;
    if (data.row(i)[var] <= cut) {
      p.sum_left += residuals[i];
      ++p.n_left;
    } else {
      p.sum_right += residuals[i];
      ++p.n_right;
    }
  }
  return p;
}

inline bool accept(Rng& rng, double log_ratio) { return log_ratio >= 0.0 || std::log(rng.uniform_open()) < log_ratio; }

inline StepOutcome try_grow(TreeState& state, const TrainingView& data, std::span<const double> residuals,
                            const CutpointGrid& grid, const SamplerConfig& config, Rng& rng) {
  StepOutcome out{Move::grow};
  const auto leaves = state.tree.leaves();
  const int leaf = leaves[rng.below(leaves.size())];
  const auto rule = grid.draw_rule(rng);
  if (!rule) return out;
  const auto [var, cut] = *rule;
  const bool with_data = data.n > 0;
  const Partition part = with_data ? partition_node(state, data, residuals, leaf, leaf, var, cut) : Partition{};
  if (with_data && (part.n_left == 0 || part.n_right == 0)) return out;

  const auto& node = state.tree.node(leaf);
  std::size_t nogs_after = state.tree.nogs().size() + 1;
  if (node.parent >= 0 && state.tree.is_nog(node.parent)) --nogs_after;

  const GrowRatio ratio = grow_log_ratio(node.depth, leaves.size(), nogs_after, part.sum_left, part.n_left,
                                         part.sum_right, part.n_right, config, with_data);
  out.legal = true;
  out.log_ratio = ratio.total();
  if (!accept(rng, out.log_ratio)) return out;
  const auto [l, r] = state.tree.grow(leaf, var, cut);
  for (std::size_t i = 0; i < data.n; ++i) {
    if (state.leaf_of[i] == leaf) state.leaf_of[i] = data.row(i)[var] <= cut ? l : r;
  }
  out.accepted = true;
  return out;
}

inline StepOutcome try_prune(TreeState& state, const TrainingView& data, std::span<const double> residuals,
                             const SamplerConfig& config, Rng& rng) {
  StepOutcome out{Move::prune};
  const auto nogs = state.tree.nogs();
  if (nogs.empty()) return out;
  const int target = nogs[rng.below(nogs.size())];
  const auto& node = state.tree.node(target);
  const bool with_data = data.n > 0;
  const Partition part =
      with_data ? partition_node(state, data, residuals, node.left, node.right, node.var, node.cut) : Partition{};
  const std::size_t leaves_after = state.tree.leaf_count() - 1;
  const GrowRatio reverse = grow_log_ratio(node.depth, leaves_after, nogs.size(), part.sum_left, part.n_left,
                                           part.sum_right, part.n_right, config, with_data);
  out.legal = true;
  out.log_ratio = -reverse.total();
  if (!accept(rng, out.log_ratio)) return out;
  const int l = node.left;
  const int r = node.right;
  state.tree.prune(target);
  for (auto& leaf : state.leaf_of) {
    if (leaf == l || leaf == r) leaf = target;
  }
  out.accepted = true;
  return out;
}

inline StepOutcome try_change(TreeState& state, const TrainingView& data, std::span<const double> residuals,
                              const CutpointGrid& grid, const SamplerConfig& config, Rng& rng) {
  StepOutcome out{Move::change};
  const auto nogs = state.tree.nogs();
  if (nogs.empty()) return out;
  const int target = nogs[rng.below(nogs.size())];
  const auto rule = grid.draw_rule(rng);
  if (!rule) return out;
  const auto [var, cut] = *rule;
  const auto& node = state.tree.node(target);
  const int l = node.left;
  const int r = node.right;
  const double sm = config.sigma_mu();
  double log_lik = 0.0;
  if (data.n > 0) {
    const Partition now = partition_node(state, data, residuals, l, r, node.var, node.cut);
    const Partition next = partition_node(state, data, residuals, l, r, var, cut);
    if (next.n_left == 0 || next.n_right == 0) return out;
    log_lik = log_integrated_likelihood(next.sum_left, next.n_left, sm) +
              log_integrated_likelihood(next.sum_right, next.n_right, sm) -
              log_integrated_likelihood(now.sum_left, now.n_left, sm) -
              log_integrated_likelihood(now.sum_right, now.n_right, sm);
  }
  out.legal = true;
  out.log_ratio = log_lik;
  if (!accept(rng, out.log_ratio)) return out;
  state.tree.set_rule(target, var, cut);
  for (std::size_t i = 0; i < data.n; ++i) {
    if (state.leaf_of[i] == l || state.leaf_of[i] == r) state.leaf_of[i] = data.row(i)[var] <= cut ? l : r;
  }
  out.accepted = true;
  return out;
}

}  // namespace detail

/// Draws every leaf mu from its conjugate posterior (from the prior when no
/// data are attached).
inline void draw_leaf_values(TreeState& state, const TrainingView& data, std::span<const double> residuals,
                             const SamplerConfig& config, Rng& rng) {
  const std::size_t slots = state.tree.slot_count();
  std::vector<double> sums(slots, 0.0);
  std::vector<std::size_t> counts(slots, 0);
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto l = static_cast<std::size_t>(state.leaf_of[i]);
    sums[l] += residuals[i];
    ++counts[l];
  }
  const double sm = config.sigma_mu();
  for (int leaf : state.tree.leaves()) {
    const auto post = leaf_posterior(sums[static_cast<std::size_t>(leaf)], counts[static_cast<std::size_t>(leaf)], sm);
    state.tree.set_mu(leaf, post.mean + std::sqrt(post.variance) * rng.normal());
  }
}

/// One Metropolis-Hastings structure proposal followed by leaf draws. An
/// illegal proposal (nothing to prune, an empty child) counts as rejected.
inline StepOutcome mcmc_tree_step(TreeState& state, const TrainingView& data, std::span<const double> residuals,
                                  const CutpointGrid& grid, const SamplerConfig& config, Rng& rng) {
  const double u = rng.uniform();
  StepOutcome out;
  if (u < config.move_probs[0]) {
    out = detail::try_grow(state, data, residuals, grid, config, rng);
  } else if (u < config.move_probs[0] + config.move_probs[1]) {
    out = detail::try_prune(state, data, residuals, config, rng);
  } else {
    out = detail::try_change(state, data, residuals, grid, config, rng);
  }
  draw_leaf_values(state, data, residuals, config, rng);
  return out;
}

/// Albert-Chib step: z_i ~ N(fitted_i, 1) truncated to (0, inf) when y_i = 1
/// and to (-inf, 0] when y_i = 0.
inline void sample_latents(std::span<const int> y, std::span<const double> fitted_sum, std::span<double> z, Rng& rng) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double mean = fitted_sum[i];
    if (y[i] == 1) {
      double v;
      do {
        v = mean + rng.normal_above(-mean);
      } while (!(v > 0.0));
      z[i] = v;
    } else {
      double v;
      do {
        v = mean - rng.normal_above(mean);
      } while (!(v < 0.0));
      z[i] = v;
    }
  }
}

inline std::vector<double> sample_latents(std::span<const int> y, std::span<const double> fitted_sum, Rng& rng) {
  std::vector<double> z(y.size());
  sample_latents(y, fitted_sum, z, rng);
  return z;
}

// ---------------------------------------------------------------------------
// Fitted model

struct BartModel {
  SamplerConfig config;
  std::vector<std::string> covariates;
  std::vector<std::pair<double, double>> ranges;  // observed training range, model scale
  StandardizationParams standardization;
  std::vector<Forest> draws;
  std::size_t n_train = 0;
  std::vector<double> fitted;     // training probabilities, observation-major (n_train x draws)
  std::optional<double> cutoff;   // classification cutoff, once chosen

  std::size_t n_draws() const { return draws.size(); }
  double fitted_probability(std::size_t i, std::size_t d) const { return fitted[i * draws.size() + d]; }

  std::vector<double> fitted_mean() const {
    std::vector<double> out(n_train, 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
      double s = 0.0;
      for (std::size_t d = 0; d < draws.size(); ++d) s += fitted_probability(i, d);
      out[i] = s / static_cast<double>(draws.size());
    }
    return out;
  }

  std::optional<std::size_t> covariate_index(const std::string& name) const {
    for (std::size_t j = 0; j < covariates.size(); ++j) {
      if (covariates[j] == name) return j;
    }
    return std::nullopt;
  }

  bool uses_coordinates() const { return covariate_index(kLonColumn) && covariate_index(kLatColumn); }

  /// Variables split on in at least one stored draw.
  std::vector<bool> used_variables() const {
    std::vector<bool> used(covariates.size(), false);
    for (const auto& f : draws) {
      const auto u = f.used_variables(covariates.size());
      for (std::size_t j = 0; j < used.size(); ++j) used[j] = used[j] || u[j];
    }
    return used;
  }

  /// Equality of everything that is serialized (fitted draws excluded).
  bool same_artifact(const BartModel& o) const {
    return config == o.config && covariates == o.covariates && ranges == o.ranges &&
           standardization == o.standardization && draws == o.draws && n_train == o.n_train && cutoff == o.cutoff;
  }
};

/// Runs n_burn + n_draws sweeps (latent update, then each tree in turn) and
/// keeps the last n_draws forests. Deterministic in config.seed.
inline BartModel fit_bart(const ModelMatrix& matrix, const SamplerConfig& config) {
  config.validate();
  matrix.validate();
  const std::size_t n = matrix.n_rows();
  const std::size_t p = matrix.n_cols();
  const TrainingView data{matrix.values.data(), n, p};

  BartModel model;
  model.config = config;
  model.covariates = matrix.columns;
  model.standardization = matrix.standardization;
  model.n_train = n;
  model.ranges.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, matrix.value(i, j));
      hi = std::max(hi, matrix.value(i, j));
    }
    model.ranges[j] = {lo, hi};
  }
  const CutpointGrid grid(model.ranges, config.n_cutpoints);

  Rng rng(config.seed);
  std::vector<TreeState> trees(config.trees, TreeState(n));
  std::vector<double> fitted_sum(n, 0.0);
  std::vector<double> z(n, 0.0);
  std::vector<double> residuals(n, 0.0);
  std::vector<double> before(n, 0.0);
  std::vector<double> draw_fitted(n * config.n_draws, 0.0);
  model.draws.reserve(config.n_draws);

  const std::size_t sweeps = config.n_burn + config.n_draws;
  for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
    sample_latents(matrix.response, fitted_sum, z, rng);
    for (auto& state : trees) {
      for (std::size_t i = 0; i < n; ++i) {
        before[i] = state.fit(i);
        residuals[i] = z[i] - (fitted_sum[i] - before[i]);
      }
      mcmc_tree_step(state, data, residuals, grid, config, rng);
      for (std::size_t i = 0; i < n; ++i) fitted_sum[i] += state.fit(i) - before[i];
    }
    if (sweep >= config.n_burn) {
      const std::size_t d = sweep - config.n_burn;
      Forest forest;
      for (const auto& state : trees) forest.append(state.tree);
      // Recompute sums exactly as prediction does so stored draws match it bit for bit.
      for (std::size_t i = 0; i < n; ++i) {
        fitted_sum[i] = forest.evaluate(data.row(i));
        draw_fitted[i * config.n_draws + d] = normal_cdf(fitted_sum[i]);
      }
      model.draws.push_back(std::move(forest));
    }
  }
  model.fitted = std::move(draw_fitted);
  return model;
}

// ---------------------------------------------------------------------------
// Prediction

/// Posterior probability draws, row-major (rows x draws).
struct PredictionDraws {
  std::size_t n_rows = 0;
  std::size_t n_draws = 0;
  std::vector<double> prob;

  std::span<const double> row(std::size_t i) const { return {prob.data() + i * n_draws, n_draws}; }
  double at(std::size_t i, std::size_t d) const { return prob[i * n_draws + d]; }
};

/// Rows already on the model scale, columns in model covariate order.
inline PredictionDraws predict_model_scale(const BartModel& model, std::span<const double> rows,
                                           std::size_t workers = 1) {
  const std::size_t p = model.covariates.size();
  PredictionDraws out;
  out.n_rows = p == 0 ? 0 : rows.size() / p;
  out.n_draws = model.draws.size();
  out.prob.resize(out.n_rows * out.n_draws);
  parallel_for(out.n_rows, workers, [&](std::size_t i) {
    const double* x = rows.data() + i * p;
    for (std::size_t d = 0; d < out.n_draws; ++d) out.prob[i * out.n_draws + d] = normal_cdf(model.draws[d].evaluate(x));
  });
  return out;
}

/// Original-scale covariates keyed by column name.
struct CovariateTable {
  std::vector<std::string> columns;
  std::vector<double> values;  // row-major

  std::size_t n_rows() const { return columns.empty() ? 0 : values.size() / columns.size(); }
};

/// Reorders the table into model covariate order and applies the model's
/// standardization.
inline std::vector<double> to_model_scale(const BartModel& model, const CovariateTable& table) {
  const std::size_t p = model.covariates.size();
  std::vector<std::size_t> source(p);
  for (std::size_t j = 0; j < p; ++j) {
    auto it = std::find(table.columns.begin(), table.columns.end(), model.covariates[j]);
    if (it == table.columns.end()) throw Error(ErrorKind::schema, "missing covariate column '" + model.covariates[j] + "'");
    source[j] = static_cast<std::size_t>(it - table.columns.begin());
  }
  const std::size_t n = table.n_rows();
  const std::size_t q = table.columns.size();
  std::vector<double> rows(n * p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      rows[i * p + j] = model.standardization.apply(model.covariates[j], table.values[i * q + source[j]]);
    }
  }
  return rows;
}

inline PredictionDraws predict_bart(const BartModel& model, const CovariateTable& table, std::size_t workers = 1) {
  return predict_model_scale(model, to_model_scale(model, table), workers);
}

}  // namespace sdm::bart
