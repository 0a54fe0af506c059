#include "stf/analytic.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stf/parallel.hpp"
#include "stf/simd.hpp"
#include "stf/targets.hpp"

namespace stf {
namespace {

struct KernelParams {
  double a;
  double sigma2;      // sigma_t^2
  double component2;  // a_t^2 sh^2 + sigma_t^2
};

KernelParams kernel_params(const NoiseSchedule& schedule, double t, double sigma_hat) {
  const double sigma = schedule.sigma_at(t);
  if (!(sigma > 0.0)) throw std::invalid_argument("analytic: sigma_t must be positive");
  const double a = schedule.scale_at(t);
  return {a, sigma * sigma, a * a * sigma_hat * sigma_hat + sigma * sigma};
}

constexpr std::size_t kTrialBlock = 256;

}  // namespace

void posterior_weights_into(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt,
                            double t, std::span<double> out) {
  require_same_dim(xt.size(), comps.dim(), "posterior_weights");
  const KernelParams kp = kernel_params(schedule, t, comps.sigma_hat);
  simd::active().scaled_sq_dists(xt.data(), comps.centers->data(), comps.size(), comps.dim(), kp.a, out.data());
  const double scale = -0.5 / kp.component2;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = comps.log_weights[i] + scale * out[i];
  softmax_inplace(out);
}

void log_posterior_weights_into(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt,
                                double t, std::span<double> out) {
  require_same_dim(xt.size(), comps.dim(), "posterior_weights");
  const KernelParams kp = kernel_params(schedule, t, comps.sigma_hat);
  simd::active().scaled_sq_dists(xt.data(), comps.centers->data(), comps.size(), comps.dim(), kp.a, out.data());
  const double scale = -0.5 / kp.component2;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = comps.log_weights[i] + scale * out[i];
  const double lse = log_sum_exp(out);
  for (double& v : out) v -= lse;
}

PosteriorWeights posterior_weights(const Distribution& dist, const NoiseSchedule& schedule,
                                   std::span<const double> xt, double t) {
  const ComponentView comps = components(dist);
  PosteriorWeights pw{Vec(comps.size())};
  posterior_weights_into(comps, schedule, xt, t, pw.weights);
  return pw;
}

Vec marginal_score(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt, double t) {
  Vec resp(comps.size());
  posterior_weights_into(comps, schedule, xt, t, resp);
  const KernelParams kp = kernel_params(schedule, t, comps.sigma_hat);
  Vec score(xt.size());
  simd::active().weighted_sum(resp.data(), comps.centers->data(), comps.size(), comps.dim(), score.data());
  const double inv = 1.0 / kp.component2;
  for (std::size_t j = 0; j < score.size(); ++j) score[j] = (kp.a * score[j] - xt[j]) * inv;
  return score;
}

Vec marginal_score(const Distribution& dist, const NoiseSchedule& schedule, std::span<const double> xt, double t) {
  return marginal_score(components(dist), schedule, xt, t);
}

double marginal_log_density(const Distribution& dist, const NoiseSchedule& schedule, std::span<const double> xt,
                            double t) {
  const ComponentView comps = components(dist);
  require_same_dim(xt.size(), comps.dim(), "marginal_log_density");
  const KernelParams kp = kernel_params(schedule, t, comps.sigma_hat);
  Vec logits(comps.size());
  simd::scalar_kernels().scaled_sq_dists(xt.data(), comps.centers->data(), comps.size(), comps.dim(), kp.a,
                                         logits.data());
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = comps.log_weights[i] - 0.5 * logits[i] / kp.component2;
  const double d = static_cast<double>(comps.dim());
  return log_sum_exp(logits) - 0.5 * d * std::log(2.0 * std::numbers::pi * kp.component2);
}

void sample_posterior(const ComponentView& comps, const NoiseSchedule& schedule, std::span<const double> xt, double t,
                      std::span<const double> responsibilities, Rng& rng, std::span<double> out) {
  const std::size_t i = rng.categorical(responsibilities);
  const auto mu = comps.centers->row(i);
  if (comps.sigma_hat == 0.0) {
    std::copy(mu.begin(), mu.end(), out.begin());
    return;
  }
  const KernelParams kp = kernel_params(schedule, t, comps.sigma_hat);
  const double sh2 = comps.sigma_hat * comps.sigma_hat;
  const double denom = kp.component2;
  const double post_std = std::sqrt(sh2 * kp.sigma2 / denom);
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = (kp.sigma2 * mu[j] + kp.a * sh2 * xt[j]) / denom + post_std * rng.normal();
  }
}

Vec sample_marginal(const Distribution& dist, const NoiseSchedule& schedule, double t, Rng& rng) {
  Points x0(1, dim_of(dist));
  sample_data_into(dist, x0, 0, rng);
  Vec noise(x0.dim());
  rng.fill_normal(noise);
  return perturb(schedule, x0.row(0), t, noise);
}

Estimate v_dsm_closed_two_gaussians(double offset, double sigma_hat, std::size_t d, const NoiseSchedule& schedule,
                                    double t, std::size_t mc_points, Rng& rng) {
  if (schedule.kind != ScheduleKind::VE) {
    throw std::invalid_argument("v_dsm_closed_two_gaussians: requires a VE schedule");
  }
  if (d == 0 || mc_points == 0) throw std::invalid_argument("v_dsm_closed_two_gaussians: empty problem");
  const double sigma = schedule.sigma_at(t);
  const double s2 = sigma * sigma;
  const double sh2 = sigma_hat * sigma_hat;
  const double total_var = s2 + sh2;
  const double dd = static_cast<double>(d);
  const double mu_norm2 = dd * offset * offset;
  const double within = dd * sh2 / (s2 * total_var);
  const double between_scale = 4.0 * mu_norm2 / (total_var * total_var);
  const double total_std = std::sqrt(total_var);

  MomentAccumulator acc;
  for (std::size_t m = 0; m < mc_points; ++m) {
    const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    // x_t . mu for x_t = sign*mu + total_std*z needs only the projection of z on 1.
    double z_sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) z_sum += rng.normal();
    const double proj = sign * mu_norm2 + total_std * offset * z_sum;
    const double logit = 2.0 * proj / total_var;
    const double alpha = 1.0 / (1.0 + std::exp(-logit));
    acc.add(within + between_scale * alpha * (1.0 - alpha));
  }
  return to_estimate(acc);
}

VectorEstimate brute_force_stf_minimizer(const Distribution& dist, const NoiseSchedule& schedule,
                                         std::span<const double> xt, double t, std::size_t n, std::size_t trials,
                                         Rng& rng, ReferenceMode mode) {
  const std::size_t d = dim_of(dist);
  require_same_dim(xt.size(), d, "brute_force_stf_minimizer");

  if (mode == ReferenceMode::FullSupport) {
    const auto* es = std::get_if<EmpiricalSet>(&dist);
    if (es == nullptr) throw std::invalid_argument("brute_force_stf_minimizer: full support needs an EmpiricalSet");
    return {stf_target(schedule, xt, es->points, t), Vec(d, 0.0), 1};
  }
  if (trials == 0) throw std::invalid_argument("brute_force_stf_minimizer: trials must be >= 1");
  if (n == 0) throw std::invalid_argument("brute_force_stf_minimizer: n must be >= 1");

  const ComponentView comps = components(dist);
  Vec resp(comps.size());
  posterior_weights_into(comps, schedule, xt, t, resp);

  const std::uint64_t base = rng.next_u64();
  const std::size_t blocks = (trials + kTrialBlock - 1) / kTrialBlock;
  std::vector<std::vector<MomentAccumulator>> partial(blocks, std::vector<MomentAccumulator>(d));

  parallel_for(blocks, [&](std::size_t blk) {
    Rng local = Rng::substream(base, {blk});
    Points refs(n, d);
    Vec weights(n);
    Vec target(d);
    const std::size_t begin = blk * kTrialBlock;
    const std::size_t end = std::min(trials, begin + kTrialBlock);
    for (std::size_t trial = begin; trial < end; ++trial) {
      sample_posterior(comps, schedule, xt, t, resp, local, refs.row(0));
      sample_data_into(dist, refs, 1, local);
      stf_target_into(schedule, xt, refs, t, weights, target);
      for (std::size_t j = 0; j < d; ++j) partial[blk][j].add(target[j]);
    }
  });

  std::vector<MomentAccumulator> total(d);
  for (const auto& block : partial) {
    for (std::size_t j = 0; j < d; ++j) total[j].merge(block[j]);
  }
  VectorEstimate est{Vec(d), Vec(d), trials};
  for (std::size_t j = 0; j < d; ++j) {
    est.mean[j] = total[j].mean;
    est.std_error[j] = total[j].std_error();
  }
  return est;
}

}  // namespace stf
