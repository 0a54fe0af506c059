#pragma once

#include <span>

#include "stf/datasets.hpp"
#include "stf/numerics.hpp"
#include "stf/schedule.hpp"

namespace stf {

/// Posterior responsibilities p(component | x_t) over mixture components or
/// empirical points. Nonnegative, sums to 1.
struct PosteriorWeights {
  Vec weights;
};

/// Exact grad log p_t(x_t). Each component N(mu_i, sh^2 I) becomes
/// N(a_t mu_i, (a_t^2 sh^2 + sigma_t^2) I); the score is the responsibility
/// weighted sum of component scores, all in log space.
Vec marginal_score(const Distribution& dist, const NoiseSchedule& schedule, std::span<const double> xt, double t);
Vec marginal_score(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt, double t);

/// log p_t(x_t), used by finite-difference checks.
double marginal_log_density(const Distribution& dist, const NoiseSchedule& schedule, std::span<const double> xt,
                            double t);

PosteriorWeights posterior_weights(const Distribution& dist, const NoiseSchedule& schedule,
                                   std::span<const double> xt, double t);
void posterior_weights_into(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt,
                            double t, std::span<double> out);

/// log of the responsibilities, exact even where they underflow.
void log_posterior_weights_into(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt,
                                double t, std::span<double> out);

/// Draws x_0 ~ p(x_0 | x_t): component from the responsibilities, then the
/// closed-form Gaussian posterior within it (a point for sh = 0).
void sample_posterior(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt, double t,
                      std::span<const double> responsibilities, Rng& rng, std::span<double> out);

/// Draws x_t ~ p_t: x_0 ~ p_0 then the transition kernel.
Vec sample_marginal(const Distribution& dist, const NoiseSchedule& schedule, double t, Rng& rng);

/// Monte-Carlo average over x_t ~ p_t of the two-Gaussians trace-of-covariance
/// integrand (VE only, components at +-offset*1):
///   d sh^2 / (sigma^2 (sigma^2 + sh^2)) + 4 alpha (1 - alpha) |mu|^2 / (sigma^2 + sh^2)^2,
///   alpha = sigmoid(2 x_t . mu / (sigma^2 + sh^2)).
/// A fast reference for the brute-force estimator, not an oracle.
Estimate v_dsm_closed_two_gaussians(double offset, double sigma_hat, std::size_t d, const NoiseSchedule& schedule,
                                    double t, std::size_t mc_points, Rng& rng);

enum class ReferenceMode {
  IID,          // x_1 ~ posterior, x_2..n ~ p_0
  FullSupport,  // reference batch = every point of an EmpiricalSet
};

struct VectorEstimate {
  Vec mean;
  Vec std_error;
  std::size_t samples = 0;
};

/// Monte-Carlo estimate of the STF minimizer at (x_t, t): the mean of the
/// self-normalized target over reference batches whose first element is a
/// posterior draw. Trials run in fixed blocks on keyed substreams, so the
/// result does not depend on the thread count.
VectorEstimate brute_force_stf_minimizer(const Distribution& dist, const NoiseSchedule& schedule,
                                         std::span<const double> xt, double t, std::size_t n, std::size_t trials,
                                         Rng& rng, ReferenceMode mode = ReferenceMode::IID);

}  // namespace stf
