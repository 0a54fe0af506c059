#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "stf/datasets.hpp"
#include "stf/numerics.hpp"
#include "stf/points.hpp"
#include "stf/rng.hpp"
#include "stf/schedule.hpp"
#include "stf/targets.hpp"

namespace stf {

enum class Parametrization {
  Raw,          // s = net(x, t)
  NoiseScaled,  // s = net(x / sqrt(a_t^2 + sigma_t^2), t) / sigma_t
};

struct ScoreNetConfig {
  std::size_t dim = 2;
  std::vector<std::size_t> hidden{128, 128, 128};
  std::size_t fourier_features = 16;  // frequencies; each contributes sin and cos
  double fourier_scale = 1.0;
  bool zero_init_output = false;
  Parametrization parametrization = Parametrization::NoiseScaled;
  NoiseSchedule schedule;  // used by NoiseScaled only

  friend bool operator==(const ScoreNetConfig&, const ScoreNetConfig&) = default;
};

/// Time-conditioned MLP s(x, t) -> R^d with SiLU hidden activations.
/// Input features are [x, sin(2 pi w t), cos(2 pi w t)] for fixed random
/// frequencies w ~ N(0, scale^2). All trainable parameters live in one flat
/// vector: per layer, the in x out weight matrix (row-major) followed by the
/// bias.
class ScoreNet {
 public:
  ScoreNet() = default;
  ScoreNet(const ScoreNetConfig& config, Rng& rng);

  const ScoreNetConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t input_width() const { return config_.dim + 2 * config_.fourier_features; }
  std::size_t num_layers() const { return layers_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  const Vec& frequencies() const { return frequencies_; }

  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;

    friend bool operator==(const Layer&, const Layer&) = default;
  };
  const std::vector<Layer>& layers() const { return layers_; }

  Vec forward(std::span<const double> xt, double t) const;
  Points forward_batch(const Points& xt, std::span<const double> times) const;

  /// Weighted squared error (1/B) sum_i w_i |s(x_i, t_i) - y_i|^2 and its
  /// gradient with respect to params(), by reverse accumulation.
  double loss_and_grad(const Points& xt, std::span<const double> times, const Points& targets,
                       std::span<const double> weights, std::span<double> grad) const;

  nlohmann::json to_json() const;
  static ScoreNet from_json(const nlohmann::json& j);

  friend bool operator==(const ScoreNet&, const ScoreNet&) = default;

 private:
  void build_layout();
  void features(const Points& xt, std::span<const double> times, Points& out) const;

  ScoreNetConfig config_;
  Vec frequencies_;
  Vec params_;
  std::vector<Layer> layers_;
};

/// Loss over a target batch: lambda(t_i) weighted mean
/// squared error. Throws NumericalError on non-finite targets.
double loss_and_grad(const ScoreNet& net, const TargetBatch& batch, const NoiseSchedule& schedule,
                     const LossWeight& weight, std::span<double> grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vec m;
  Vec v;
  std::size_t step = 0;

  explicit AdamState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update in place. Throws NumericalError on non-finite
/// gradients before touching any state.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config);

using ScoreFn = std::function<Vec(std::span<const double> xt, double t)>;

/// Frozen evaluation points: for each t on the grid, probes_per_t draws from
/// p_t with their exact scores and loss weights.
struct ProbeSet {
  Points x;
  Vec t;
  Points truth;
  Vec lambda;
};

ProbeSet make_probe_set(const Distribution& dist, const NoiseSchedule& schedule, const Vec& t_grid,
                        std::size_t probes_per_t, const LossWeight& weight, Rng& rng);

/// Mean over probes of lambda(t) |s(x, t) - grad log p_t(x)|^2.
Estimate score_mse(const ScoreNet& net, const ProbeSet& probes);
Estimate score_mse(const ScoreFn& score, const ProbeSet& probes);

Estimate score_mse_vs_analytic(const ScoreNet& net, const Distribution& dist, const NoiseSchedule& schedule,
                               const Vec& t_grid, std::size_t probes_per_t, Rng& rng, const LossWeight& weight = {});
Estimate score_mse_vs_analytic(const ScoreFn& score, const Distribution& dist, const NoiseSchedule& schedule,
                               const Vec& t_grid, std::size_t probes_per_t, Rng& rng, const LossWeight& weight = {});

/// Default probe grid: 8 midpoints (k + 1/2)/8 of [0, 1].
Vec default_probe_grid();

enum class LrSchedule {
  Constant,
  Cosine,  // lr * (1 + cos(pi * step / steps)) / 2
};

struct TrainConfig {
  BatchSpec batch;  // objective, B, n
  std::size_t steps = 1000;
  AdamConfig adam;
  LrSchedule lr_schedule = LrSchedule::Constant;
  std::uint64_t seed = 0;
  std::size_t eval_every = 500;
  std::size_t probes_per_t = 512;
  Vec probe_grid = default_probe_grid();
  NoiseSchedule schedule;
  TimeSampler time_sampler;
  LossWeight loss_weight;
  ScoreNetConfig net;

  void validate() const;

  /// Learning rate used for the update that produces step `step + 1`.
  double learning_rate(std::size_t step) const;
};

struct TrainRecord {
  std::size_t step = 0;
  double wall_seconds = 0.0;
  double loss = 0.0;  // mean training loss since the previous record
  double score_mse = 0.0;
  std::optional<double> sample_quality;
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

/// Everything needed to continue a run bit-identically.
struct TrainerState {
  ScoreNet net;
  AdamState adam;
  Rng rng;
  std::size_t step = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  TrainLog log;
};

struct TrainHooks {
  // Extra sample-quality metric logged at each evaluation.
  std::function<double(const ScoreNet&, std::size_t step)> sample_quality;
  // Called after each evaluation record is appended.
  std::function<void(const TrainerState&)> on_eval;
};

TrainerState init_training(const TrainConfig& config);

/// Advances state to `until_step` (capped at config.steps). Throws
/// NumericalError carrying the step on a non-finite loss or gradient.
void run_training(const TrainConfig& config, const Distribution& dist, TrainerState& state, std::size_t until_step,
                  const TrainHooks& hooks = {});

struct TrainResult {
  ScoreNet net;
  TrainLog log;
};

TrainResult train(const TrainConfig& config, const Distribution& dist, const TrainHooks& hooks = {});

nlohmann::json checkpoint_to_json(const TrainerState& state);
TrainerState checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const TrainerState& state);
TrainerState load_checkpoint(const std::filesystem::path& path);

}  // namespace stf
