#include <doctest.h>

#include <cmath>

#include "stf/rng.hpp"
#include "stf/schedule.hpp"

using namespace stf;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// log N(x; mean, s^2 I) up to the normalizer.
double log_kernel(const Vec& x, const Vec& mean, double s) {
  double q = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) q += (x[j] - mean[j]) * (x[j] - mean[j]);
  return -0.5 * q / (s * s);
}

}  // namespace

TEST_CASE("VE sigma values") {
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  CHECK(ve.sigma_at(0.0) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(ve.sigma_at(1.0) == doctest::Approx(50.0).epsilon(1e-15));
  CHECK(rel(ve.sigma_at(0.5), 0.7071067811865476) < 1e-14);
  CHECK(ve.scale_at(0.3) == 1.0);
}

TEST_CASE("EDM sigma values") {
  const auto edm = NoiseSchedule::edm(0.002, 80.0, 7.0);
  CHECK(rel(edm.sigma_at(0.0), 0.002) < 1e-14);
  CHECK(rel(edm.sigma_at(1.0), 80.0) < 1e-14);
  CHECK(rel(edm.sigma_at(0.5), 2.515218976147158) < 1e-13);
  CHECK(edm.scale_at(0.7) == 1.0);
}

TEST_CASE("VP scale and sigma") {
  const auto vp = NoiseSchedule::vp(0.1, 20.0);
  CHECK(vp.scale_at(0.0) == 1.0);
  CHECK(vp.sigma_at(0.0) == 0.0);
  CHECK(rel(vp.scale_at(1.0), 0.006571586494929615) < 1e-13);
  CHECK(rel(vp.sigma_at(1.0), 0.9999784068923387) < 1e-14);
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.uniform();
    const double a = vp.scale_at(t), s = vp.sigma_at(t);
    CHECK(std::abs(a * a + s * s - 1.0) < 1e-12);
  }
  double prev = 2.0;
  for (int i = 0; i <= 100; ++i) {
    const double a = vp.scale_at(i / 100.0);
    CHECK(a > 0.0);
    CHECK(a <= 1.0);
    CHECK(a < prev);
    prev = a;
  }
}

TEST_CASE("sigma is monotone and finite on [0, 1]") {
  for (const auto& sch : {NoiseSchedule::ve(), NoiseSchedule::edm(), NoiseSchedule::vp()}) {
    double prev = -1.0;
    for (int i = 0; i <= 200; ++i) {
      const double s = sch.sigma_at(i / 200.0);
      CHECK(std::isfinite(s));
      CHECK(s >= prev);
      prev = s;
    }
  }
}

TEST_CASE("schedule rejects bad input") {
  const auto ve = NoiseSchedule::ve();
  CHECK_THROWS_AS(ve.sigma_at(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(ve.sigma_at(1.5), std::invalid_argument);
  CHECK_THROWS_AS(ve.sigma_at(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::ve(50.0, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::ve(0.01, INFINITY), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::vp(20.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::edm(0.002, 80.0, 0.0), std::invalid_argument);
}

TEST_CASE("sigma inversion round trip") {
  Rng rng(3);
  for (const auto& sch : {NoiseSchedule::ve(), NoiseSchedule::edm(), NoiseSchedule::vp()}) {
    for (int i = 0; i < 1000; ++i) {
      const double t = sch.kind == ScheduleKind::VP ? 1e-4 + (1.0 - 1e-4) * rng.uniform() : rng.uniform();
      const double s = sch.sigma_at(t);
      CHECK(rel(sch.sigma_at(sch.time_at_sigma(s)), s) < 1e-12);
    }
  }
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  CHECK(ve.time_at_sigma(0.7071067811865476) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(ve.time_at_sigma(0.01) == 0.0);
  CHECK(ve.time_at_sigma(50.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("perturb") {
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  const Vec z{1.0, 0.0};
  const Vec out = perturb(ve, Vec{0.0, 0.0}, 0.0, z);
  CHECK(out[0] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(out[1] == 0.0);
  const auto vp = NoiseSchedule::vp(0.1, 20.0);
  CHECK(rel(perturb(vp, Vec{1.0}, 1.0, Vec{0.0})[0], 0.006571586494929615) < 1e-13);
  const Vec x0{0.3, -2.0, 1.0};
  const Vec zero(3, 0.0);
  const Vec m = perturb(vp, x0, 0.4, zero);
  for (std::size_t j = 0; j < 3; ++j) CHECK(m[j] == doctest::Approx(vp.scale_at(0.4) * x0[j]));
  CHECK_THROWS_AS(perturb(ve, Vec{1.0}, 0.5, Vec{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("kernel score values") {
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  const double t1 = ve.time_at_sigma(1.0);
  CHECK(kernel_score(ve, Vec{2.0}, Vec{0.0}, t1)[0] == doctest::Approx(2.0).epsilon(1e-12));
  const double th = ve.time_at_sigma(0.5);
  CHECK(kernel_score(ve, Vec{0.0}, Vec{1.0}, th)[0] == doctest::Approx(-4.0).epsilon(1e-12));
  const Vec x0{0.5, -1.0};
  const auto at = perturb(ve, x0, 0.3, Vec{0.0, 0.0});
  for (double v : kernel_score(ve, x0, at, 0.3)) CHECK(v == 0.0);
  CHECK_THROWS_AS(kernel_score(ve, Vec{1.0}, Vec{1.0, 2.0}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(kernel_score(ve, Vec{1.0}, Vec{1.0}, 1.5), std::invalid_argument);
}

TEST_CASE("kernel score matches finite differences of the log kernel") {
  Rng rng(11);
  for (const auto& sch : {NoiseSchedule::ve(), NoiseSchedule::edm(), NoiseSchedule::vp()}) {
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t d = 1 + rng.index(8);
      const double t = 0.05 + 0.9 * rng.uniform();
      Vec x0(d), xt(d);
      rng.fill_normal(x0);
      rng.fill_normal(xt);
      const double a = sch.scale_at(t), s = sch.sigma_at(t);
      Vec mean(d);
      for (std::size_t j = 0; j < d; ++j) mean[j] = a * x0[j];
      const Vec g = kernel_score(sch, x0, xt, t);
      for (std::size_t j = 0; j < d; ++j) {
        const double h = 1e-5 * std::max(1.0, s);
        Vec xp = xt, xm = xt;
        xp[j] += h;
        xm[j] -= h;
        const double fd = (log_kernel(xp, mean, s) - log_kernel(xm, mean, s)) / (2.0 * h);
        CHECK(std::abs(fd - g[j]) <= 1e-5 * std::max(std::abs(g[j]), 1.0 / (s * s)));
      }
    }
  }
}

TEST_CASE("diffusion coefficient") {
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  for (double t : {0.1, 0.5, 0.9}) {
    CHECK(rel(ve.diffusion_coeff(t), ve.sigma_at(t) * 4.12727348049926) < 1e-13);
  }
  const auto vp = NoiseSchedule::vp(0.1, 20.0);
  CHECK(rel(vp.diffusion_coeff(0.0), std::sqrt(0.1)) < 1e-15);
  CHECK(rel(vp.diffusion_coeff(1.0), std::sqrt(20.0)) < 1e-15);
  CHECK(vp.drift_coeff(1.0) == doctest::Approx(-10.0));
  CHECK(ve.drift_coeff(0.5) == 0.0);

  // g^2 = a^2 d(sigma^2 / a^2)/dt, by central differences.
  for (const auto& sch : {NoiseSchedule::ve(), NoiseSchedule::edm(), NoiseSchedule::vp()}) {
    for (double t : {0.05, 0.3, 0.6, 0.95}) {
      const double h = 1e-6;
      auto ratio = [&](double u) {
        const double a = sch.scale_at(u), s = sch.sigma_at(u);
        return s * s / (a * a);
      };
      const double a = sch.scale_at(t);
      const double fd = a * a * (ratio(t + h) - ratio(t - h)) / (2.0 * h);
      const double g = sch.diffusion_coeff(t);
      CHECK(rel(g * g, fd) < 1e-4);
    }
  }
}

TEST_CASE("loss weight") {
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  CHECK(rel(loss_weight(ve, 0.0), 1e-4) < 1e-14);
  CHECK(rel(loss_weight(ve, 1.0), 2500.0) < 1e-14);
  CHECK(rel(loss_weight(NoiseSchedule::edm(), 1.0), 6400.0) < 1e-13);
  const LossWeight constant{LossWeight::Kind::Constant, 3.0};
  CHECK(loss_weight(ve, 0.7, constant) == 3.0);
}

TEST_CASE("time sampling") {
  Rng rng(5);
  const auto ve = NoiseSchedule::ve();
  TimeSampler uniform;
  uniform.t_min = 1e-5;
  for (int i = 0; i < 10000; ++i) {
    const double t = sample_time(uniform, ve, rng);
    CHECK(t >= 1e-5);
    CHECK(t <= 1.0);
  }
  TimeSampler lognormal{TimeSamplerKind::LogNormalSigma};
  const auto edm = NoiseSchedule::edm();
  for (int i = 0; i < 10000; ++i) {
    const double t = sample_time(lognormal, edm, rng);
    CHECK(t >= 0.0);
    CHECK(t <= 1.0);
    const double s = edm.sigma_at(t);
    CHECK(s > 0.0);
    CHECK(std::isfinite(s));
  }
  CHECK(edm.time_at_sigma(edm.sigma_min) == 0.0);
  CHECK(edm.time_at_sigma(edm.sigma_max) == doctest::Approx(1.0).epsilon(1e-14));
  TimeSampler bad;
  bad.t_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("rng substreams are reproducible and distinct") {
  Rng a = Rng::substream(42, {1, 2});
  Rng b = Rng::substream(42, {1, 2});
  Rng c = Rng::substream(42, {2, 1});
  const double x = a.normal();
  CHECK(x == b.normal());
  CHECK(x != c.normal());
  Rng r(9);
  r.normal();
  Rng copy;
  copy.deserialize(r.serialize());
  CHECK(copy == r);
  CHECK(copy.normal() == r.normal());
  CHECK(r.index(1) == 0);
  const Vec w{0.0, 1.0, 0.0};
  for (int i = 0; i < 50; ++i) CHECK(r.categorical(w) == 1);
}
