#include "stf/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace stf {
namespace {

void check_time(double t, const char* what) {
  if (!std::isfinite(t) || t < 0.0 || t > 1.0) {
    throw std::invalid_argument(std::string(what) + ": t must lie in [0, 1], got " + std::to_string(t));
  }
}

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::VE: return "VE";
    case ScheduleKind::VP: return "VP";
    case ScheduleKind::EDM: return "EDM";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "VE" || name == "ve") return ScheduleKind::VE;
  if (name == "VP" || name == "vp") return ScheduleKind::VP;
  if (name == "EDM" || name == "edm") return ScheduleKind::EDM;
  throw std::invalid_argument("unknown schedule kind '" + std::string(name) + "'");
}

NoiseSchedule NoiseSchedule::ve(double sigma_min, double sigma_max) {
  NoiseSchedule s;
  s.kind = ScheduleKind::VE;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::vp(double beta_min, double beta_max) {
  NoiseSchedule s;
  s.kind = ScheduleKind::VP;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::edm(double sigma_min, double sigma_max, double rho) {
  NoiseSchedule s;
  s.kind = ScheduleKind::EDM;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.rho = rho;
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  switch (kind) {
    case ScheduleKind::VE:
    case ScheduleKind::EDM:
      if (!finite_positive(sigma_min) || !finite_positive(sigma_max)) {
        throw std::invalid_argument("schedule: sigma_min and sigma_max must be finite and positive");
      }
      if (!(sigma_min < sigma_max)) throw std::invalid_argument("schedule: sigma_min must be below sigma_max");
      if (kind == ScheduleKind::EDM && !finite_positive(rho)) {
        throw std::invalid_argument("schedule: rho must be finite and positive");
      }
      break;
    case ScheduleKind::VP:
      if (!std::isfinite(beta_min) || beta_min < 0.0 || !finite_positive(beta_max)) {
        throw std::invalid_argument("schedule: beta_min must be >= 0 and beta_max > 0, both finite");
      }
      if (!(beta_min < beta_max)) throw std::invalid_argument("schedule: beta_min must be below beta_max");
      break;
  }
}

double NoiseSchedule::log_scale_at(double t) const {
  check_time(t, "scale_at");
  if (kind != ScheduleKind::VP) return 0.0;
  return -0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min;
}

double NoiseSchedule::scale_at(double t) const { return std::exp(log_scale_at(t)); }

double NoiseSchedule::sigma_at(double t) const {
  check_time(t, "sigma_at");
  switch (kind) {
    case ScheduleKind::VE: return sigma_min * std::pow(sigma_max / sigma_min, t);
    case ScheduleKind::EDM: {
      const double lo = std::pow(sigma_min, 1.0 / rho);
      const double hi = std::pow(sigma_max, 1.0 / rho);
      return std::pow(t * hi + (1.0 - t) * lo, rho);
    }
    case ScheduleKind::VP: return std::sqrt(-std::expm1(2.0 * log_scale_at(t)));
  }
  return 0.0;
}

double NoiseSchedule::diffusion_coeff(double t) const {
  check_time(t, "diffusion_coeff");
  switch (kind) {
    case ScheduleKind::VE: return sigma_at(t) * std::sqrt(2.0 * std::log(sigma_max / sigma_min));
    case ScheduleKind::EDM: {
      const double lo = std::pow(sigma_min, 1.0 / rho);
      const double hi = std::pow(sigma_max, 1.0 / rho);
      const double base = t * hi + (1.0 - t) * lo;
      const double sigma = std::pow(base, rho);
      const double dsigma = rho * std::pow(base, rho - 1.0) * (hi - lo);
      return std::sqrt(2.0 * sigma * dsigma);
    }
    case ScheduleKind::VP: return std::sqrt(beta_min + t * (beta_max - beta_min));
  }
  return 0.0;
}

double NoiseSchedule::drift_coeff(double t) const {
  check_time(t, "drift_coeff");
  if (kind != ScheduleKind::VP) return 0.0;
  return -0.5 * (beta_min + t * (beta_max - beta_min));
}

double NoiseSchedule::time_at_sigma(double sigma) const {
  const double lo = sigma_lo();
  const double hi = sigma_hi();
  // Accept rounding-level overshoot at either end.
  if (sigma < lo && sigma >= lo * (1.0 - 1e-12)) sigma = lo;
  if (sigma > hi && sigma <= hi * (1.0 + 1e-12)) sigma = hi;
  if (!std::isfinite(sigma) || sigma < lo || sigma > hi) {
    throw std::invalid_argument("time_at_sigma: sigma " + std::to_string(sigma) + " outside schedule range [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  double t = 0.0;
  switch (kind) {
    case ScheduleKind::VE: t = std::log(sigma / sigma_min) / std::log(sigma_max / sigma_min); break;
    case ScheduleKind::EDM: {
      const double a = std::pow(sigma_min, 1.0 / rho);
      const double b = std::pow(sigma_max, 1.0 / rho);
      t = (std::pow(sigma, 1.0 / rho) - a) / (b - a);
      break;
    }
    case ScheduleKind::VP: {
      // Solve (db/4) t^2 + (bmin/2) t = c with c = -log(1 - sigma^2)/2 >= 0,
      // using the cancellation-free root.
      const double c = -0.5 * std::log1p(-sigma * sigma);
      const double half_b = 0.5 * beta_min;
      const double quarter_db = 0.25 * (beta_max - beta_min);
      t = c == 0.0 ? 0.0 : 2.0 * c / (half_b + std::sqrt(half_b * half_b + 4.0 * quarter_db * c));
      break;
    }
  }
  return std::clamp(t, 0.0, 1.0);
}

double LossWeight::operator()(const NoiseSchedule& schedule, double t) const {
  if (kind == Kind::Constant) return scale;
  const double s = schedule.sigma_at(t);
  return scale * s * s;
}

double loss_weight(const NoiseSchedule& schedule, double t, const LossWeight& weight) {
  return weight(schedule, t);
}

void TimeSampler::validate() const {
  if (!std::isfinite(t_min) || t_min <= 0.0 || t_min >= 1.0) {
    throw std::invalid_argument("time sampler: t_min must lie in (0, 1)");
  }
  if (kind == TimeSamplerKind::LogNormalSigma && (!std::isfinite(log_std) || log_std <= 0.0 ||
                                                  !std::isfinite(log_mean))) {
    throw std::invalid_argument("time sampler: log_std must be positive and log_mean finite");
  }
}

double sample_time(const TimeSampler& sampler, const NoiseSchedule& schedule, Rng& rng) {
  if (sampler.kind == TimeSamplerKind::Uniform) {
    return std::min(1.0, sampler.t_min + (1.0 - sampler.t_min) * rng.uniform());
  }
  const double lo = schedule.sigma_lo() > 0.0 ? schedule.sigma_lo() : schedule.sigma_at(sampler.t_min);
  const double sigma = std::clamp(std::exp(sampler.log_mean + sampler.log_std * rng.normal()), lo,
                                  schedule.sigma_hi());
  return schedule.time_at_sigma(sigma);
}

Vec perturb(const NoiseSchedule& schedule, std::span<const double> x0, double t, std::span<const double> noise) {
  require_same_dim(x0.size(), noise.size(), "perturb");
  const double a = schedule.scale_at(t);
  const double s = schedule.sigma_at(t);
  Vec out(x0.size());
  for (std::size_t j = 0; j < x0.size(); ++j) out[j] = a * x0[j] + s * noise[j];
  return out;
}

Vec kernel_score(const NoiseSchedule& schedule, std::span<const double> x0, std::span<const double> xt, double t) {
  require_same_dim(x0.size(), xt.size(), "kernel_score");
  const double s = schedule.sigma_at(t);
  if (!(s > 0.0)) throw std::invalid_argument("kernel_score: sigma_t must be positive");
  const double a = schedule.scale_at(t);
  const double inv_var = 1.0 / (s * s);
  Vec out(x0.size());
  for (std::size_t j = 0; j < x0.size(); ++j) out[j] = (a * x0[j] - xt[j]) * inv_var;
  return out;
}

}  // namespace stf
