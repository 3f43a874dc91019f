#pragma once

// Closed-form pieces of the probit sum-of-trees model: the branching prior,
// the probit link, the conjugate leaf update and the integrated leaf
// likelihood. Latent residual variance is fixed at 1.

#include <cmath>
#include <cstddef>
#include <numbers>

namespace sdm::bart {

/// Prior probability that a node at `depth` is internal: alpha (1 + depth)^-beta.
inline double split_probability(std::size_t depth, double alpha, double beta) {
  return alpha * std::pow(1.0 + static_cast<double>(depth), -beta);
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Leaf prior scale for the binary model, 3 / (k sqrt(m)).
inline double leaf_prior_sd(double k, std::size_t trees) {
  return 3.0 / (k * std::sqrt(static_cast<double>(trees)));
}

struct LeafPosterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Normal-normal update for a leaf holding n unit-variance residuals with sum
/// `residual_sum` under a N(0, sigma_mu^2) prior.
inline LeafPosterior leaf_posterior(double residual_sum, std::size_t n, double sigma_mu) {
  const double variance = 1.0 / (static_cast<double>(n) + 1.0 / (sigma_mu * sigma_mu));
  return {variance * residual_sum, variance};
}

/// log p(residuals in leaf | tree) with mu integrated out, dropping the terms
/// -0.5 sum r^2 - n/2 log(2 pi) that cancel in every Metropolis-Hastings ratio.
inline double log_integrated_likelihood(double residual_sum, std::size_t n, double sigma_mu) {
  const double s2 = sigma_mu * sigma_mu;
  const double denom = 1.0 + static_cast<double>(n) * s2;
  return -0.5 * std::log(denom) + 0.5 * s2 * residual_sum * residual_sum / denom;
}

}  // namespace sdm::bart
