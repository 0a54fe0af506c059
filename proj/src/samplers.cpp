#include "stf/samplers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "stf/analytic.hpp"
#include "stf/errors.hpp"
#include "stf/parallel.hpp"

namespace stf {
namespace {

void check_finite(const Points& x, const char* what, std::size_t step) {
  for (double v : x.values()) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(what) + ": non-finite state at step " + std::to_string(step), step);
    }
  }
}

void check_t_end(double t_end) {
  if (!(t_end > 0.0 && t_end < 1.0)) throw std::invalid_argument("sampler: t_end must lie in (0, 1)");
}

std::vector<Rng> element_streams(std::size_t count, Rng& rng) {
  const std::uint64_t base = rng.next_u64();
  std::vector<Rng> streams;
  streams.reserve(count);
  for (std::size_t i = 0; i < count; ++i) streams.push_back(Rng::substream(base, {i}));
  return streams;
}

double prior_std(const NoiseSchedule& schedule) {
  return schedule.kind == ScheduleKind::VP ? 1.0 : schedule.sigma_hi();
}

Points prior_from_streams(const NoiseSchedule& schedule, std::size_t dim, std::vector<Rng>& streams) {
  const double std = prior_std(schedule);
  Points x(streams.size(), dim);
  for (std::size_t i = 0; i < streams.size(); ++i) {
    for (double& v : x.row(i)) v = std * streams[i].normal();
  }
  return x;
}

SampleResult fixed_cost(Points samples, Points initial, std::size_t nfe) {
  SampleResult r{std::move(samples), std::move(initial)};
  r.nfe = static_cast<double>(nfe);
  r.nfe_min = r.nfe_max = nfe;
  r.nfe_total = nfe * r.samples.rows();
  return r;
}

double rms(std::span<const double> v, std::span<const double> scale) {
  double s = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double r = v[j] / scale[j];
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::string_view to_string(SamplerMethod method) {
  switch (method) {
    case SamplerMethod::Euler: return "euler";
    case SamplerMethod::Heun: return "heun";
    case SamplerMethod::RK45: return "rk45";
    case SamplerMethod::EulerMaruyama: return "euler_maruyama";
    case SamplerMethod::PredictorCorrector: return "pc";
  }
  return "?";
}

SamplerMethod parse_sampler_method(std::string_view name) {
  if (name == "euler") return SamplerMethod::Euler;
  if (name == "heun") return SamplerMethod::Heun;
  if (name == "rk45") return SamplerMethod::RK45;
  if (name == "euler_maruyama" || name == "em") return SamplerMethod::EulerMaruyama;
  if (name == "pc" || name == "predictor_corrector") return SamplerMethod::PredictorCorrector;
  throw std::invalid_argument("unknown sampler method '" + std::string(name) + "'");
}

void SamplerConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  if (method == SamplerMethod::Heun && steps < 2) throw std::invalid_argument("sampler: heun needs steps >= 2");
  if (!(atol > 0.0) || !(rtol > 0.0)) throw std::invalid_argument("sampler: atol and rtol must be positive");
  check_t_end(t_end);
  if (!(snr > 0.0) || !std::isfinite(snr)) throw std::invalid_argument("sampler: snr must be positive");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("sampler: noise_scale must be >= 0");
  if (max_steps == 0) throw std::invalid_argument("sampler: max_steps must be >= 1");
}

double default_t_end(const NoiseSchedule& schedule) { return schedule.kind == ScheduleKind::VP ? 1e-3 : 1e-5; }

ScoreSource ScoreSource::network(const ScoreNet& net) {
  ScoreSource s;
  s.dim_ = net.dim();
  s.batch_ = [&net](const Points& x, std::span<const double> t) { return net.forward_batch(x, t); };
  return s;
}

ScoreSource ScoreSource::analytic(const Distribution& dist, const NoiseSchedule& schedule) {
  ScoreSource s;
  s.dim_ = dim_of(dist);
  auto owned = std::make_shared<const Distribution>(dist);
  s.batch_ = [owned, schedule](const Points& x, std::span<const double> t) {
    const ComponentView comps = components(*owned);
    Points out(x.rows(), x.dim());
    parallel_for(x.rows(), [&](std::size_t i) {
      const Vec s = marginal_score(comps, schedule, x.row(i), t[i]);
      std::copy(s.begin(), s.end(), out.row(i).begin());
    });
    return out;
  };
  return s;
}

ScoreSource ScoreSource::function(std::size_t dim, ScoreFn fn) {
  ScoreSource s;
  s.dim_ = dim;
  s.batch_ = [fn = std::move(fn), dim](const Points& x, std::span<const double> t) {
    Points out(x.rows(), dim);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const Vec v = fn(x.row(i), t[i]);
      if (v.size() != dim) throw std::invalid_argument("ScoreSource: score dimension mismatch");
      std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
  };
  return s;
}

Points ScoreSource::score(const Points& xt, std::span<const double> times) const {
  if (xt.dim() != dim_) throw std::invalid_argument("ScoreSource: dimension mismatch");
  return batch_(xt, times);
}

Vec ScoreSource::score(std::span<const double> xt, double t) const {
  Points x(1, xt.size());
  std::copy(xt.begin(), xt.end(), x.row(0).begin());
  const double times[1] = {t};
  const Points s = score(x, times);
  return Vec(s.row(0).begin(), s.row(0).end());
}

Points ode_drift(const ScoreSource& source, const NoiseSchedule& schedule, const Points& xt,
                 std::span<const double> times) {
  Points out = source.score(xt, times);
  for (std::size_t i = 0; i < xt.rows(); ++i) {
    const double g = schedule.diffusion_coeff(times[i]);
    const double c = schedule.drift_coeff(times[i]);
    const auto x = xt.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) {
      if (!std::isfinite(o[j])) throw NumericalError("ode_drift: non-finite score");
      o[j] = c * x[j] - 0.5 * g * g * o[j];
    }
  }
  return out;
}

Vec ode_drift(const ScoreSource& source, const NoiseSchedule& schedule, std::span<const double> xt, double t) {
  Points x(1, xt.size());
  std::copy(xt.begin(), xt.end(), x.row(0).begin());
  const double times[1] = {t};
  const Points d = ode_drift(source, schedule, x, times);
  return Vec(d.row(0).begin(), d.row(0).end());
}

Vec edm_sigma_grid(std::size_t steps, double sigma_min, double sigma_max, double rho) {
  if (steps < 2) throw std::invalid_argument("edm_sigma_grid: steps must be >= 2");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw std::invalid_argument("edm_sigma_grid: rho must be positive");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw std::invalid_argument("edm_sigma_grid: need 0 < sigma_min < sigma_max");
  }
  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  Vec grid(steps + 1);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
    grid[i] = std::pow(hi + frac * (lo - hi), rho);
  }
  grid[0] = sigma_max;
  grid[steps - 1] = sigma_min;
  grid[steps] = 0.0;
  return grid;
}

Points sample_prior(const NoiseSchedule& schedule, std::size_t dim, std::size_t count, Rng& rng) {
  auto streams = element_streams(count, rng);
  return prior_from_streams(schedule, dim, streams);
}

SampleResult integrate_heun(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps,
                            const Points& start) {
  const bool vp = schedule.kind == ScheduleKind::VP;
  const double sigma_min = vp ? schedule.sigma_at(default_t_end(schedule)) : schedule.sigma_lo();
  const Vec sigmas = edm_sigma_grid(steps, sigma_min, schedule.sigma_hi(), schedule.rho);
  // Integration variable: sigma for VE/EDM (dx/dsigma = -sigma s), t for VP.
  Vec u(sigmas.size());
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!vp) {
      u[i] = sigmas[i];
    } else {
      u[i] = i + 1 == sigmas.size() ? 0.0 : (i == 0 ? 1.0 : schedule.time_at_sigma(sigmas[i]));
    }
  }
  const std::size_t n = start.rows();
  auto slope = [&](const Points& x, double ui) {
    const Vec times(n, vp ? ui : schedule.time_at_sigma(ui));
    if (vp) return ode_drift(source, schedule, x, times);
    Points s = source.score(x, times);
    for (double& v : std::span<double>(s.data(), s.values().size())) {
      if (!std::isfinite(v)) throw NumericalError("heun: non-finite score");
      v *= -ui;
    }
    return s;
  };

  Points x = start;
  std::size_t nfe = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double h = u[i + 1] - u[i];
    const Points d1 = slope(x, u[i]);
    ++nfe;
    Points next = x;
    for (std::size_t k = 0; k < next.values().size(); ++k) next.data()[k] += h * d1.data()[k];
    if (i + 1 < steps) {
      const Points d2 = slope(next, u[i + 1]);
      ++nfe;
      for (std::size_t k = 0; k < next.values().size(); ++k) {
        next.data()[k] = x.data()[k] + 0.5 * h * (d1.data()[k] + d2.data()[k]);
      }
    }
    x = std::move(next);
    check_finite(x, "heun", i);
  }
  return fixed_cost(std::move(x), start, nfe);
}

SampleResult sample_heun(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps,
                         std::size_t count, Rng& rng) {
  return integrate_heun(source, schedule, steps, sample_prior(schedule, source.dim(), count, rng));
}

SampleResult sample_euler(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps, double t_end,
                          std::size_t count, Rng& rng) {
  if (steps < 1) throw std::invalid_argument("euler: steps must be >= 1");
  check_t_end(t_end);
  const Points start = sample_prior(schedule, source.dim(), count, rng);
  const double h = (1.0 - t_end) / static_cast<double>(steps);
  Points x = start;
  for (std::size_t i = 0; i < steps; ++i) {
    const Vec times(count, 1.0 - static_cast<double>(i) * h);
    const Points d = ode_drift(source, schedule, x, times);
    for (std::size_t k = 0; k < x.values().size(); ++k) x.data()[k] -= h * d.data()[k];
    check_finite(x, "euler", i);
  }
  return fixed_cost(std::move(x), start, steps);
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr std::array<double, 7> kC{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr std::array<std::array<double, 6>, 7> kA{{
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
}};
// Fifth- minus fourth-order weights.
constexpr std::array<double, 7> kE{71.0 / 57600,  0.0,         -71.0 / 16695, 71.0 / 1920,
                                   -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

struct Trajectory {
  Vec x;
  double t = 1.0;
  double h = 0.0;
  Vec k1;  // drift at (x, t)
  std::size_t nfe = 0;
  std::size_t attempts = 0;
  bool done = false;
};

}  // namespace

SampleResult integrate_rk45(const ScoreSource& source, const NoiseSchedule& schedule, double atol, double rtol,
                            double t_end, const Points& start, std::size_t max_steps) {
  if (!(atol > 0.0) || !(rtol > 0.0)) throw std::invalid_argument("rk45: atol and rtol must be positive");
  check_t_end(t_end);
  const std::size_t n = start.rows();
  const std::size_t d = start.dim();
  std::vector<Trajectory> traj(n);

  // Evaluates the drift for the listed trajectories at points ys / times.
  auto eval = [&](const std::vector<std::size_t>& ids, const Points& ys, const Vec& times) {
    for (std::size_t id : ids) ++traj[id].nfe;
    return ode_drift(source, schedule, ys, times);
  };

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = i;
    traj[i].x.assign(start.row(i).begin(), start.row(i).end());
  }
  {
    // Initial step size from the standard two-evaluation heuristic.
    const Points f0 = eval(all, start, Vec(n, 1.0));
    Points x1(n, d);
    Vec h0(n), d1v(n);
    for (std::size_t i = 0; i < n; ++i) {
      Trajectory& tr = traj[i];
      tr.k1.assign(f0.row(i).begin(), f0.row(i).end());
      Vec sc(d);
      for (std::size_t j = 0; j < d; ++j) sc[j] = atol + rtol * std::abs(tr.x[j]);
      const double d0 = rms(tr.x, sc);
      d1v[i] = rms(tr.k1, sc);
      h0[i] = (d0 < 1e-5 || d1v[i] < 1e-5) ? 1e-6 : 0.01 * d0 / d1v[i];
      h0[i] = std::min(h0[i], 1.0 - t_end);
      for (std::size_t j = 0; j < d; ++j) x1.row(i)[j] = tr.x[j] - h0[i] * tr.k1[j];
    }
    Vec t1(n);
    for (std::size_t i = 0; i < n; ++i) t1[i] = 1.0 - h0[i];
    const Points f1 = eval(all, x1, t1);
    for (std::size_t i = 0; i < n; ++i) {
      Trajectory& tr = traj[i];
      Vec sc(d), diff(d);
      for (std::size_t j = 0; j < d; ++j) {
        sc[j] = atol + rtol * std::abs(tr.x[j]);
        diff[j] = f1.row(i)[j] - tr.k1[j];
      }
      const double d2 = rms(diff, sc) / h0[i];
      const double m = std::max(d1v[i], d2);
      const double h1 = m <= 1e-15 ? std::max(1e-6, h0[i] * 1e-3) : std::pow(0.01 / m, 0.2);
      tr.h = std::min({100.0 * h0[i], h1, 1.0 - t_end});
    }
  }

  std::vector<std::size_t> active = all;
  std::vector<Points> k(7);
  while (!active.empty()) {
    const std::size_t m = active.size();
    k[0] = Points(m, d);
    for (std::size_t a = 0; a < m; ++a) {
      const Trajectory& tr = traj[active[a]];
      std::copy(tr.k1.begin(), tr.k1.end(), k[0].row(a).begin());
    }
    Points y(m, d);
    Vec times(m);
    for (std::size_t s = 1; s < 7; ++s) {
      for (std::size_t a = 0; a < m; ++a) {
        const Trajectory& tr = traj[active[a]];
        // Integrating backwards in t: the step is -h.
        const double h = -tr.h;
        auto yr = y.row(a);
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::size_t q = 0; q < s; ++q) acc += kA[s][q] * k[q].row(a)[j];
          yr[j] = tr.x[j] + h * acc;
        }
        times[a] = tr.t + kC[s] * h;
      }
      k[s] = eval(active, y, times);
    }
    // y now holds the fifth-order solution (stage 7 point).
    std::vector<std::size_t> still;
    for (std::size_t a = 0; a < m; ++a) {
      Trajectory& tr = traj[active[a]];
      ++tr.attempts;
      const double h = -tr.h;
      Vec err(d), sc(d);
      for (std::size_t j = 0; j < d; ++j) {
        double e = 0.0;
        for (std::size_t q = 0; q < 7; ++q) e += kE[q] * k[q].row(a)[j];
        err[j] = h * e;
        sc[j] = atol + rtol * std::max(std::abs(tr.x[j]), std::abs(y.row(a)[j]));
      }
      const double en = rms(err, sc);
      if (!std::isfinite(en)) {
        throw NumericalError("rk45: non-finite error estimate at t=" + std::to_string(tr.t), tr.attempts);
      }
      if (en <= 1.0) {
        const double t_new = tr.t - tr.h;
        tr.x.assign(y.row(a).begin(), y.row(a).end());
        tr.k1.assign(k[6].row(a).begin(), k[6].row(a).end());
        tr.t = t_new <= t_end * (1.0 + 1e-12) ? t_end : t_new;
        if (tr.t == t_end) {
          tr.done = true;
          continue;
        }
        const double fac = en == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 10.0);
        tr.h *= fac;
      } else {
        tr.h *= std::clamp(0.9 * std::pow(en, -0.2), 0.2, 1.0);
      }
      tr.h = std::min(tr.h, tr.t - t_end);
      if (tr.h < 16.0 * std::numeric_limits<double>::epsilon() * std::abs(tr.t)) {
        throw NumericalError("rk45: step size underflow at t=" + std::to_string(tr.t), tr.attempts);
      }
      if (tr.attempts >= max_steps) {
        throw NumericalError("rk45: step limit reached at t=" + std::to_string(tr.t), tr.attempts);
      }
      still.push_back(active[a]);
    }
    active = std::move(still);
  }

  SampleResult r{Points(n, d), start};
  r.nfe_min = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(traj[i].x.begin(), traj[i].x.end(), r.samples.row(i).begin());
    r.nfe_total += traj[i].nfe;
    r.nfe_min = std::min(r.nfe_min, traj[i].nfe);
    r.nfe_max = std::max(r.nfe_max, traj[i].nfe);
  }
  if (n == 0) r.nfe_min = 0;
  r.nfe = n ? static_cast<double>(r.nfe_total) / static_cast<double>(n) : 0.0;
  return r;
}

SampleResult sample_rk45(const ScoreSource& source, const NoiseSchedule& schedule, double atol, double rtol,
                         double t_end, std::size_t count, Rng& rng, std::size_t max_steps) {
  return integrate_rk45(source, schedule, atol, rtol, t_end, sample_prior(schedule, source.dim(), count, rng),
                        max_steps);
}

SampleResult sample_pc(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps, double snr,
                       std::size_t corrector_steps, double t_end, std::size_t count, Rng& rng, double noise_scale) {
  if (steps < 1) throw std::invalid_argument("pc: steps must be >= 1");
  if (!(snr > 0.0)) throw std::invalid_argument("pc: snr must be positive");
  check_t_end(t_end);
  const std::size_t d = source.dim();
  auto streams = element_streams(count, rng);
  const Points start = prior_from_streams(schedule, d, streams);
  const double h = (1.0 - t_end) / static_cast<double>(steps);
  const double sqrt_h = std::sqrt(h);
  Points x = start;
  Vec z(d);
  std::size_t nfe = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) * h;
    const double g = schedule.diffusion_coeff(t);
    const double c = schedule.drift_coeff(t);
    const Points s = source.score(x, Vec(count, t));
    ++nfe;
    for (std::size_t e = 0; e < count; ++e) {
      auto xr = x.row(e);
      const auto sr = s.row(e);
      streams[e].fill_normal(z);
      for (std::size_t j = 0; j < d; ++j) {
        xr[j] -= h * (c * xr[j] - g * g * sr[j]);
        xr[j] += noise_scale * g * sqrt_h * z[j];
      }
    }
    check_finite(x, "predictor", i);
    const double t_next = i + 1 == steps ? t_end : 1.0 - static_cast<double>(i + 1) * h;
    for (std::size_t c_step = 0; c_step < corrector_steps; ++c_step) {
      const Points sc = source.score(x, Vec(count, t_next));
      ++nfe;
      // Step size from batch-averaged norms; per-element ratios have a heavy tail.
      Points noise(count, d);
      double s_norm = 0.0, z_norm = 0.0;
      std::size_t active = 0;
      for (std::size_t e = 0; e < count; ++e) {
        streams[e].fill_normal(noise.row(e));
        double s2 = 0.0, z2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          s2 += sc.row(e)[j] * sc.row(e)[j];
          z2 += noise.row(e)[j] * noise.row(e)[j];
        }
        if (!(s2 > 0.0)) continue;
        s_norm += std::sqrt(s2);
        z_norm += std::sqrt(z2);
        ++active;
      }
      if (active == 0) continue;
      const double ratio = snr * z_norm / s_norm;
      const double eta = 2.0 * ratio * ratio;
      const double amp = std::sqrt(2.0 * eta);
      for (std::size_t e = 0; e < count; ++e) {
        auto xr = x.row(e);
        const auto sr = sc.row(e);
        double s2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) s2 += sr[j] * sr[j];
        if (!(s2 > 0.0)) continue;
        for (std::size_t j = 0; j < d; ++j) xr[j] += eta * sr[j] + amp * noise.row(e)[j];
      }
      check_finite(x, "corrector", i);
    }
  }
  return fixed_cost(std::move(x), start, nfe);
}

SampleResult sample_euler_maruyama(const ScoreSource& source, const NoiseSchedule& schedule, std::size_t steps,
                                   double t_end, std::size_t count, Rng& rng, double noise_scale) {
  // With no corrector the predictor-corrector loop is exactly Euler-Maruyama.
  return sample_pc(source, schedule, steps, 1.0, 0, t_end, count, rng, noise_scale);
}

SampleResult sample(const ScoreSource& source, const NoiseSchedule& schedule, const SamplerConfig& config,
                    std::size_t count, Rng& rng) {
  config.validate();
  switch (config.method) {
    case SamplerMethod::Euler: return sample_euler(source, schedule, config.steps, config.t_end, count, rng);
    case SamplerMethod::Heun: return sample_heun(source, schedule, config.steps, count, rng);
    case SamplerMethod::RK45:
      return sample_rk45(source, schedule, config.atol, config.rtol, config.t_end, count, rng, config.max_steps);
    case SamplerMethod::EulerMaruyama:
      return sample_euler_maruyama(source, schedule, config.steps, config.t_end, count, rng, config.noise_scale);
    case SamplerMethod::PredictorCorrector:
      return sample_pc(source, schedule, config.steps, config.snr, config.corrector_steps, config.t_end, count, rng,
                       config.noise_scale);
  }
  throw std::logic_error("sample: unknown method");
}

}  // namespace stf
