#pragma once

#include <span>
#include <string>
#include <string_view>

#include "stf/points.hpp"
#include "stf/rng.hpp"

namespace stf {

enum class ScheduleKind { VE, VP, EDM };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

/// Gaussian transition kernel p(x_t | x_0) = N(scale_at(t) x_0, sigma_at(t)^2 I)
/// over t in [0, 1].
///
///   VE:  sigma_t = sigma_min (sigma_max / sigma_min)^t,                a_t = 1
///   EDM: sigma_t = (t sigma_max^(1/rho) + (1-t) sigma_min^(1/rho))^rho, a_t = 1
///   VP:  log a_t = -t^2 (beta_max - beta_min)/4 - t beta_min/2,  sigma_t^2 = 1 - a_t^2
///
/// VP has sigma_0 = 0; every operation that divides by sigma_t rejects t = 0
/// for VP.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::VE;
  double sigma_min = 0.01;
  double sigma_max = 50.0;
  double beta_min = 0.1;
  double beta_max = 20.0;
  double rho = 7.0;

  static NoiseSchedule ve(double sigma_min = 0.01, double sigma_max = 50.0);
  static NoiseSchedule vp(double beta_min = 0.1, double beta_max = 20.0);
  static NoiseSchedule edm(double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0);

  /// Throws std::invalid_argument on non-finite or out-of-order parameters.
  void validate() const;

  double sigma_at(double t) const;
  double scale_at(double t) const;

  /// log a_t (the VP exponent; 0 for VE and EDM).
  double log_scale_at(double t) const;

  /// g(t) of dx = f(x,t) dt + g(t) dw, with g^2 = a_t^2 d(sigma_t^2 / a_t^2)/dt.
  double diffusion_coeff(double t) const;

  /// Linear drift coefficient c(t) with f(x,t) = c(t) x (nonzero for VP only).
  double drift_coeff(double t) const;

  /// Inverse of sigma_at on [sigma_at(0), sigma_at(1)].
  double time_at_sigma(double sigma) const;

  double sigma_lo() const { return sigma_at(0.0); }
  double sigma_hi() const { return sigma_at(1.0); }

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

/// lambda(t) = scale * sigma_t^2 (default) or a constant scale.
struct LossWeight {
  enum class Kind { SigmaSquared, Constant };
  Kind kind = Kind::SigmaSquared;
  double scale = 1.0;

  double operator()(const NoiseSchedule& schedule, double t) const;
};

double loss_weight(const NoiseSchedule& schedule, double t, const LossWeight& weight = {});

enum class TimeSamplerKind { Uniform, LogNormalSigma };

struct TimeSampler {
  TimeSamplerKind kind = TimeSamplerKind::Uniform;
  double t_min = 1e-5;
  double log_mean = -1.2;
  double log_std = 1.2;

  void validate() const;
};

double sample_time(const TimeSampler& sampler, const NoiseSchedule& schedule, Rng& rng);

/// a_t x0 + sigma_t noise.
Vec perturb(const NoiseSchedule& schedule, std::span<const double> x0, double t, std::span<const double> noise);

/// grad_{x_t} log p(x_t | x_0) = (a_t x0 - x_t) / sigma_t^2.
Vec kernel_score(const NoiseSchedule& schedule, std::span<const double> x0, std::span<const double> xt, double t);

}  // namespace stf
