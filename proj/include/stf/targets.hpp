#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "stf/datasets.hpp"
#include "stf/points.hpp"
#include "stf/rng.hpp"
#include "stf/schedule.hpp"

namespace stf {

enum class Objective { DSM, STF };

std::string_view to_string(Objective objective);
Objective parse_objective(std::string_view name);

/// One training step's worth of (perturbed point, time, target) triples.
struct TargetBatch {
  Points clean;      // x_i, the small batch drawn from the reference batch
  Points perturbed;  // x_i(t_i)
  Vec times;
  Points targets;
  std::optional<Points> weights;  // B x n self-normalized weights (STF, on request)

  std::size_t size() const { return times.size(); }
};

/// Per-sample denoising target: the kernel score of the source point.
Vec dsm_target(const NoiseSchedule& schedule, std::span<const double> x0, std::span<const double> xt, double t);

/// softmax_k( -|| xt - a_t x_k ||^2 / (2 sigma_t^2) ) over the reference rows.
Vec stf_weights(const NoiseSchedule& schedule, std::span<const double> xt, const Points& refs, double t);

/// sum_k w_k (a_t x_k - xt) / sigma_t^2 with w = stf_weights.
Vec stf_target(const NoiseSchedule& schedule, std::span<const double> xt, const Points& refs, double t);

/// Weights and target in one pass; `weights` must hold refs.rows() entries.
void stf_target_into(const NoiseSchedule& schedule, std::span<const double> xt, const Points& refs, double t,
                     std::span<double> weights, std::span<double> target);

struct BatchSpec {
  std::size_t batch_size = 128;      // |B|
  std::size_t reference_size = 128;  // n = |B_L|
  Objective objective = Objective::DSM;
  bool keep_weights = false;

  void validate() const;
};

/// Draws B_L (n points; B points for DSM), takes its first B rows as the
/// small batch, samples one time per element and perturbs it, then forms
/// DSM or STF targets. RNG consumption order: data, times, noise.
TargetBatch make_training_batch(const Distribution& data, const NoiseSchedule& schedule,
                                const TimeSampler& time_sampler, const BatchSpec& spec, Rng& rng);

}  // namespace stf
