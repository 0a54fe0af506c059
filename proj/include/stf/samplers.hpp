#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <variant>

#include "stf/datasets.hpp"
#include "stf/model.hpp"
#include "stf/points.hpp"
#include "stf/rng.hpp"
#include "stf/schedule.hpp"

namespace stf {

enum class SamplerMethod { Euler, Heun, RK45, EulerMaruyama, PredictorCorrector };

std::string_view to_string(SamplerMethod method);
SamplerMethod parse_sampler_method(std::string_view name);

struct SamplerConfig {
  SamplerMethod method = SamplerMethod::Heun;
  std::size_t steps = 18;
  double atol = 1e-5;
  double rtol = 1e-5;
  double t_end = 1e-5;
  double snr = 0.16;
  std::size_t corrector_steps = 1;
  double noise_scale = 1.0;  // multiplies injected SDE noise; 0 gives the noise-free path
  std::size_t max_steps = 100000;  // RK45 attempted steps per element

  void validate() const;
};

/// Default terminal time: 1e-3 for VP, 1e-5 otherwise.
double default_t_end(const NoiseSchedule& schedule);

/// Anything that can evaluate s(x, t) on a batch with one time per row.
class ScoreSource {
 public:
  static ScoreSource network(const ScoreNet& net);
  static ScoreSource analytic(const Distribution& dist, const NoiseSchedule& schedule);
  static ScoreSource function(std::size_t dim, ScoreFn fn);

  std::size_t dim() const { return dim_; }
  Points score(const Points& xt, std::span<const double> times) const;
  Vec score(std::span<const double> xt, double t) const;

 private:
  ScoreSource() = default;
  std::size_t dim_ = 0;
  std::function<Points(const Points&, std::span<const double>)> batch_;
};

/// Probability-flow drift f(x, t) - g(t)^2 s(x, t) / 2.
Vec ode_drift(const ScoreSource& source, const NoiseSchedule& schedule, std::span<const double> xt, double t);
Points ode_drift(const ScoreSource& source, const NoiseSchedule& schedule, const Points& xt,
                 std::span<const double> times);

/// N + 1 sigmas from sigma_max down to sigma_min with rho-power spacing,
/// followed by 0.
Vec edm_sigma_grid(std::size_t steps, double sigma_min, double sigma_max, double rho);

struct SampleResult {
  Points samples;
  Points initial;            // prior draws the integration started from
  double nfe = 0.0;          // score evaluations per sample (mean for RK45)
  std::size_t nfe_min = 0;
  std::size_t nfe_max = 0;
  std::size_t nfe_total = 0;
};

/// Prior draw at t = 1: N(0, sigma_max^2 I) for VE/EDM, N(0, I) for VP.
Points sample_prior(const NoiseSchedule& schedule, std::size_t dim, std::size_t count, Rng& rng);

/// Heun on the EDM sigma grid with an Euler final step to sigma = 0;
/// NFE = 2N - 1. VP schedules map each sigma back to t.
SampleResult sample_heun(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps,
                         std::size_t count, Rng& rng);

/// Heun starting from given points (for order and flow-map checks).
SampleResult integrate_heun(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps,
                            const Points& start);

/// Euler probability-flow ODE on a uniform t grid from 1 to t_end.
SampleResult sample_euler(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps, double t_end,
                          std::size_t count, Rng& rng);

/// Dormand-Prince 5(4), per-element adaptive steps from t = 1 to t_end.
/// Throws NumericalError when the step size underflows.
SampleResult sample_rk45(const ScoreSource& source, const NoiseSchedule& schedule, double atol, double rtol,
                         double t_end, std::size_t count, Rng& rng, std::size_t max_steps = 100000);
SampleResult integrate_rk45(const ScoreSource& source, const NoiseSchedule& schedule, double atol, double rtol,
                            double t_end, const Points& start, std::size_t max_steps = 100000);

/// Euler-Maruyama on the reverse SDE dx = [f - g^2 s] dt + g dw, uniform grid.
SampleResult sample_euler_maruyama(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps,
                                   double t_end, std::size_t count, Rng& rng, double noise_scale = 1.0);

/// Euler-Maruyama predictor followed by Langevin corrector steps with
/// eta = 2 (snr |z| / |s|)^2.
SampleResult sample_pc(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps, double snr,
                       std::size_t corrector_steps, double t_end, std::size_t count, Rng& rng,
                       double noise_scale = 1.0);

/// Dispatches on config.method.
SampleResult sample(const ScoreSource& source, const NoiseSchedule& schedule, const SamplerConfig& config,
                    std::size_t count, Rng& rng);

}  // namespace stf
