#include "stf/targets.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "stf/numerics.hpp"
#include "stf/parallel.hpp"
#include "stf/simd.hpp"

namespace stf {

std::string_view to_string(Objective objective) { return objective == Objective::DSM ? "DSM" : "STF"; }

Objective parse_objective(std::string_view name) {
  if (name == "DSM" || name == "dsm") return Objective::DSM;
  if (name == "STF" || name == "stf") return Objective::STF;
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

Vec dsm_target(const NoiseSchedule& schedule, std::span<const double> x0, std::span<const double> xt, double t) {
  return kernel_score(schedule, x0, xt, t);
}

namespace {

void check_refs(std::span<const double> xt, const Points& refs, const char* what) {
  if (refs.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty reference batch");
  require_same_dim(xt.size(), refs.dim(), what);
}

void weights_into(const NoiseSchedule& schedule, std::span<const double> xt, const Points& refs, double t,
                  std::span<double> weights) {
  const double sigma = schedule.sigma_at(t);
  if (!(sigma > 0.0)) throw std::invalid_argument("stf_weights: sigma_t must be positive");
  const double a = schedule.scale_at(t);
  simd::active().scaled_sq_dists(xt.data(), refs.data(), refs.rows(), refs.dim(), a, weights.data());
  const double inv_two_var = -0.5 / (sigma * sigma);
  for (double& w : weights) w *= inv_two_var;
  softmax_inplace(weights);
}

}  // namespace

Vec stf_weights(const NoiseSchedule& schedule, std::span<const double> xt, const Points& refs, double t) {
  check_refs(xt, refs, "stf_weights");
  Vec w(refs.rows());
  weights_into(schedule, xt, refs, t, w);
  return w;
}

void stf_target_into(const NoiseSchedule& schedule, std::span<const double> xt, const Points& refs, double t,
                     std::span<double> weights, std::span<double> target) {
  check_refs(xt, refs, "stf_target");
  require_same_dim(weights.size(), refs.rows(), "stf_target weights");
  require_same_dim(target.size(), xt.size(), "stf_target output");
  weights_into(schedule, xt, refs, t, weights);
  simd::active().weighted_sum(weights.data(), refs.data(), refs.rows(), refs.dim(), target.data());
  const double sigma = schedule.sigma_at(t);
  const double a = schedule.scale_at(t);
  const double inv_var = 1.0 / (sigma * sigma);
  for (std::size_t j = 0; j < target.size(); ++j) target[j] = (a * target[j] - xt[j]) * inv_var;
}

Vec stf_target(const NoiseSchedule& schedule, std::span<const double> xt, const Points& refs, double t) {
  Vec w(refs.rows());
  Vec out(xt.size());
  stf_target_into(schedule, xt, refs, t, w, out);
  return out;
}

void BatchSpec::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch: B must be >= 1");
  if (objective == Objective::STF && reference_size < batch_size) {
    throw std::invalid_argument("batch: STF requires reference size n (" + std::to_string(reference_size) +
                                ") >= batch size B (" + std::to_string(batch_size) + ")");
  }
}

TargetBatch make_training_batch(const Distribution& data, const NoiseSchedule& schedule,
                                const TimeSampler& time_sampler, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t b = spec.batch_size;
  const std::size_t n = spec.objective == Objective::STF ? spec.reference_size : b;
  const Points reference = sample_data(data, n, rng);
  const std::size_t d = reference.dim();

  TargetBatch batch;
  batch.clean = Points(b, d);
  std::copy(reference.data(), reference.data() + b * d, batch.clean.data());
  batch.times.resize(b);
  for (double& t : batch.times) t = sample_time(time_sampler, schedule, rng);
  batch.perturbed = Points(b, d);
  Vec noise(d);
  for (std::size_t i = 0; i < b; ++i) {
    rng.fill_normal(noise);
    const Vec xt = perturb(schedule, batch.clean.row(i), batch.times[i], noise);
    std::copy(xt.begin(), xt.end(), batch.perturbed.row(i).begin());
  }

  batch.targets = Points(b, d);
  if (spec.objective == Objective::DSM) {
    for (std::size_t i = 0; i < b; ++i) {
      const Vec target = dsm_target(schedule, batch.clean.row(i), batch.perturbed.row(i), batch.times[i]);
      std::copy(target.begin(), target.end(), batch.targets.row(i).begin());
    }
    return batch;
  }

  Points weights(b, n);
  parallel_for(b, [&](std::size_t i) {
    stf_target_into(schedule, batch.perturbed.row(i), reference, batch.times[i], weights.row(i), batch.targets.row(i));
  });
  if (spec.keep_weights) batch.weights = std::move(weights);
  return batch;
}

}  // namespace stf
