#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "stf/analytic.hpp"
#include "stf/errors.hpp"
#include "stf/model.hpp"

using namespace stf;

namespace {

ScoreNetConfig small_config(std::size_t dim, Parametrization p = Parametrization::NoiseScaled) {
  ScoreNetConfig c;
  c.dim = dim;
  c.hidden = {8, 8};
  c.fourier_features = 4;
  c.parametrization = p;
  return c;
}

struct Problem {
  Points xt;
  Vec times;
  Points targets;
  Vec weights;
};

Problem random_problem(std::size_t batch, std::size_t dim, Rng& rng) {
  Problem p{Points(batch, dim), Vec(batch), Points(batch, dim), Vec(batch)};
  for (std::size_t i = 0; i < batch; ++i) {
    rng.fill_normal(p.xt.row(i));
    rng.fill_normal(p.targets.row(i));
    p.times[i] = rng.uniform(0.05, 1.0);
    p.weights[i] = rng.uniform(0.5, 2.0);
  }
  return p;
}

TrainConfig quick_train_config(Objective objective, std::size_t batch, std::size_t n, std::size_t steps) {
  TrainConfig c;
  c.batch = {batch, n, objective};
  c.steps = steps;
  c.seed = 3;
  c.eval_every = steps;
  c.probes_per_t = 64;
  c.net = small_config(2);
  c.schedule = NoiseSchedule::ve(0.01, 10.0);
  c.net.schedule = c.schedule;
  return c;
}

}  // namespace

TEST_CASE("zero-initialized output layer gives a zero score") {
  Rng rng(1);
  for (auto p : {Parametrization::Raw, Parametrization::NoiseScaled}) {
    auto cfg = small_config(3, p);
    cfg.zero_init_output = true;
    const ScoreNet net(cfg, rng);
    for (int i = 0; i < 10; ++i) {
      Vec x(3);
      rng.fill_normal(x);
      for (double v : net.forward(x, rng.uniform(0.01, 1.0))) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("forward output has the input dimension and rejects mismatches") {
  Rng rng(2);
  const ScoreNet net(small_config(5), rng);
  CHECK(net.forward(Vec(5, 0.1), 0.5).size() == 5);
  CHECK_THROWS_AS(net.forward(Vec(4, 0.1), 0.5), std::invalid_argument);
}

TEST_CASE("batched forward equals per-element forwards") {
  Rng rng(3);
  ScoreNetConfig cfg;
  cfg.dim = 2;
  const ScoreNet net(cfg, rng);
  const auto p = random_problem(37, 2, rng);
  const Points out = net.forward_batch(p.xt, p.times);
  for (std::size_t i = 0; i < 37; ++i) {
    const Vec one = net.forward(p.xt.row(i), p.times[i]);
    CHECK(one[0] == out.row(i)[0]);
    CHECK(one[1] == out.row(i)[1]);
  }
}

TEST_CASE("gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto p = seed % 2 == 0 ? Parametrization::NoiseScaled : Parametrization::Raw;
    ScoreNet net(small_config(2, p), rng);
    const auto prob = random_problem(4, 2, rng);
    Vec grad(net.params().size());
    net.loss_and_grad(prob.xt, prob.times, prob.targets, prob.weights, grad);
    double scale = 0.0;
    for (double g : grad) scale = std::max(scale, std::abs(g));
    Vec scratch(grad.size());
    for (std::size_t k = 0; k < net.params().size(); ++k) {
      const double theta = net.params()[k];
      const double h = 1e-4 * std::max(std::abs(theta), 1e-2);
      net.params()[k] = theta + h;
      const double up = net.loss_and_grad(prob.xt, prob.times, prob.targets, prob.weights, scratch);
      net.params()[k] = theta - h;
      const double down = net.loss_and_grad(prob.xt, prob.times, prob.targets, prob.weights, scratch);
      net.params()[k] = theta;
      const double fd = (up - down) / (2.0 * h);
      CHECK(std::abs(fd - grad[k]) <= 1e-3 * std::max(std::abs(grad[k]), 1e-4 * scale));
    }
  }
}

TEST_CASE("gradient of the squared output norm") {
  // Targets of zero make the loss |s|^2.
  Rng rng(4);
  ScoreNet net(small_config(2), rng);
  Points x(1, 2);
  rng.fill_normal(x.row(0));
  const Vec t{0.4}, w{1.0};
  const Points zero(1, 2);
  Vec grad(net.params().size()), scratch(grad.size());
  const double loss = net.loss_and_grad(x, t, zero, w, grad);
  const Vec s = net.forward(x.row(0), 0.4);
  CHECK(loss == doctest::Approx(s[0] * s[0] + s[1] * s[1]).epsilon(1e-14));
  for (std::size_t k = 0; k < grad.size(); k += 7) {
    const double theta = net.params()[k];
    const double h = 1e-4 * std::max(std::abs(theta), 1e-2);
    net.params()[k] = theta + h;
    const double up = net.loss_and_grad(x, t, zero, w, scratch);
    net.params()[k] = theta - h;
    const double down = net.loss_and_grad(x, t, zero, w, scratch);
    net.params()[k] = theta;
    CHECK((up - down) / (2 * h) == doctest::Approx(grad[k]).epsilon(1e-4).scale(1e-8));
  }
}

TEST_CASE("loss vanishes when outputs equal targets") {
  Rng rng(5);
  const ScoreNet net(small_config(2), rng);
  const auto p = random_problem(6, 2, rng);
  const Points out = net.forward_batch(p.xt, p.times);
  Vec grad(net.params().size(), 1.0);
  CHECK(net.loss_and_grad(p.xt, p.times, out, p.weights, grad) == 0.0);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("loss weighting") {
  Rng rng(6);
  const ScoreNet net(small_config(2), rng);
  const auto ve = NoiseSchedule::ve(0.01, 10.0);
  Rng brng(7);
  const auto batch = make_training_batch(make_ring(8, 2.0, 0.05), ve, TimeSampler{}, {16, 16, Objective::DSM}, brng);
  Vec g1(net.params().size()), g4(g1.size());
  const double l1 = loss_and_grad(net, batch, ve, {LossWeight::Kind::SigmaSquared, 1.0}, g1);
  const double l4 = loss_and_grad(net, batch, ve, {LossWeight::Kind::SigmaSquared, 4.0}, g4);
  CHECK(l4 == 4.0 * l1);
  for (std::size_t k = 0; k < g1.size(); ++k) CHECK(g4[k] == 4.0 * g1[k]);

  // Single element with unit weight: the plain squared error.
  Points x(1, 2), y(1, 2);
  x.row(0)[0] = 0.3;
  y.row(0)[1] = 2.0;
  const Vec s = net.forward(x.row(0), 0.5);
  Vec g(net.params().size());
  const double loss = net.loss_and_grad(x, Vec{0.5}, y, Vec{1.0}, g);
  CHECK(loss == doctest::Approx(s[0] * s[0] + (s[1] - 2.0) * (s[1] - 2.0)).epsilon(1e-14));
}

TEST_CASE("non-finite targets abort") {
  Rng rng(8);
  const ScoreNet net(small_config(2), rng);
  TargetBatch batch;
  batch.perturbed = Points(1, 2);
  batch.times = {0.5};
  batch.targets = Points(2, Vec{NAN, 0.0});
  Vec grad(net.params().size());
  CHECK_THROWS_AS(loss_and_grad(net, batch, NoiseSchedule::ve(), {}, grad), NumericalError);
}

TEST_CASE("adam") {
  Vec params{1.0, -2.0, 0.5};
  const Vec orig = params;
  AdamState state(3);
  const AdamConfig cfg;
  adam_step(params, Vec{0.0, 0.0, 0.0}, state, cfg);
  CHECK(params == orig);

  AdamState fresh(3);
  const Vec g{3.0, -1e-3, 50.0};
  adam_step(params, g, fresh, cfg);
  for (std::size_t k = 0; k < 3; ++k) {
    const double step = params[k] - orig[k];
    CHECK(std::abs(step) <= cfg.lr * (1.0 + 1e-9));
    CHECK(step * g[k] < 0.0);
    // Step one is lr * g / (|g| + eps) after bias correction.
    CHECK(step == doctest::Approx(-cfg.lr * g[k] / (std::abs(g[k]) + cfg.eps)).epsilon(1e-12));
  }
  CHECK(fresh.step == 1);

  AdamState bad(3);
  Vec p2 = orig;
  CHECK_THROWS_AS(adam_step(p2, Vec{1.0, INFINITY, 0.0}, bad, cfg), NumericalError);
  CHECK(p2 == orig);
  CHECK(bad.step == 0);
  CHECK_THROWS_AS(adam_step(p2, Vec{1.0}, bad, cfg), std::invalid_argument);
}

TEST_CASE("training is deterministic") {
  const Distribution ring = make_ring(8, 2.0, 0.05);
  const auto cfg = quick_train_config(Objective::STF, 16, 32, 100);
  const auto a = train(cfg, ring);
  const auto b = train(cfg, ring);
  CHECK(a.net == b.net);
  CHECK(a.log.records.back().score_mse == b.log.records.back().score_mse);
}

TEST_CASE("dsm and stf trajectories coincide at n = B = 1") {
  const Distribution ring = make_ring(8, 2.0, 0.05);
  const auto a = train(quick_train_config(Objective::DSM, 1, 1, 200), ring);
  const auto b = train(quick_train_config(Objective::STF, 1, 1, 200), ring);
  CHECK(a.net == b.net);
}

TEST_CASE("train config validation") {
  auto cfg = quick_train_config(Objective::STF, 64, 32, 10);
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.batch.reference_size = 64;
  CHECK_NOTHROW(cfg.validate());
  cfg.eval_every = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("eval records are strictly increasing and include the final step") {
  const Distribution ring = make_ring(8, 2.0, 0.05);
  auto cfg = quick_train_config(Objective::DSM, 8, 8, 95);
  cfg.eval_every = 20;
  const auto res = train(cfg, ring);
  REQUIRE(!res.log.records.empty());
  for (std::size_t i = 1; i < res.log.records.size(); ++i)
    CHECK(res.log.records[i].step > res.log.records[i - 1].step);
  CHECK(res.log.records.back().step == 95);
}

TEST_CASE("resume from a checkpoint continues bit-identically") {
  const Distribution ring = make_ring(8, 2.0, 0.05);
  auto cfg = quick_train_config(Objective::STF, 16, 64, 120);
  cfg.eval_every = 40;
  auto straight = init_training(cfg);
  run_training(cfg, ring, straight, cfg.steps);

  auto first = init_training(cfg);
  run_training(cfg, ring, first, 50);
  const auto path = std::filesystem::temp_directory_path() / "stf_test_model_ckpt.json";
  save_checkpoint(path, first);
  auto resumed = load_checkpoint(path);
  CHECK(resumed.net == first.net);
  CHECK(resumed.rng == first.rng);
  run_training(cfg, ring, resumed, cfg.steps);
  CHECK(resumed.net == straight.net);
  CHECK(resumed.adam == straight.adam);
  CHECK(resumed.step == straight.step);
  REQUIRE(resumed.log.records.size() == straight.log.records.size());
  for (std::size_t i = 0; i < resumed.log.records.size(); ++i) {
    CHECK(resumed.log.records[i].loss == straight.log.records[i].loss);
    CHECK(resumed.log.records[i].score_mse == straight.log.records[i].score_mse);
  }
}

TEST_CASE("network json round trip") {
  Rng rng(9);
  const ScoreNet net(small_config(3), rng);
  const auto back = ScoreNet::from_json(net.to_json());
  CHECK(back == net);
  CHECK(back.forward(Vec{0.1, 0.2, 0.3}, 0.7) == net.forward(Vec{0.1, 0.2, 0.3}, 0.7));
}

TEST_CASE("score mse against the analytic score") {
  const Distribution gauss = GaussianMixture{{1.0}, Points(2, Vec{0.0, 0.0}), 1.0};
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  const Vec grid = default_probe_grid();
  CHECK(grid.size() == 8);
  CHECK(grid.front() == 1.0 / 16.0);

  Rng rng(10);
  const ScoreFn oracle = [&](std::span<const double> x, double t) { return marginal_score(gauss, ve, x, t); };
  CHECK(score_mse_vs_analytic(oracle, gauss, ve, grid, 128, rng).value == 0.0);

  // Zero score: E sigma^2 |x|^2 / (1 + sigma^2)^2 with x ~ N(0, (1 + sigma^2) I_2).
  double expected = 0.0;
  for (double t : grid) {
    const double s2 = ve.sigma_at(t) * ve.sigma_at(t);
    expected += 2.0 * s2 / (1.0 + s2);
  }
  expected /= static_cast<double>(grid.size());
  const ScoreFn zero = [](std::span<const double> x, double) { return Vec(x.size(), 0.0); };
  const auto est = score_mse_vs_analytic(zero, gauss, ve, grid, 8192, rng);
  CHECK(est.value == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("learning rate schedules") {
  TrainConfig cfg;
  cfg.steps = 100;
  cfg.adam.lr = 2e-3;
  CHECK(cfg.learning_rate(0) == 2e-3);
  CHECK(cfg.learning_rate(99) == 2e-3);
  cfg.lr_schedule = LrSchedule::Cosine;
  CHECK(cfg.learning_rate(0) == doctest::Approx(2e-3).epsilon(1e-15));
  CHECK(cfg.learning_rate(50) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(cfg.learning_rate(100) == doctest::Approx(0.0).epsilon(1e-15));
  for (std::size_t k = 1; k <= 100; ++k) CHECK(cfg.learning_rate(k) <= cfg.learning_rate(k - 1));
}

TEST_CASE("single-point dataset is learned") {
  const Distribution one = EmpiricalSet{Points(2, Vec{1.0, -0.5})};
  TrainConfig cfg;
  cfg.batch = {128, 128, Objective::DSM};
  cfg.steps = 2000;
  cfg.eval_every = 2000;
  cfg.seed = 1;
  cfg.adam.lr = 3e-3;
  cfg.lr_schedule = LrSchedule::Cosine;
  cfg.schedule = NoiseSchedule::ve(0.01, 10.0);
  cfg.net.dim = 2;
  cfg.net.schedule = cfg.schedule;
  const auto res = train(cfg, one);
  CHECK(res.log.records.back().score_mse < 1e-2);
}

TEST_CASE("score mse improves over training on the ring") {
  const Distribution ring = make_ring(8, 2.0, 0.05);
  TrainConfig cfg;
  cfg.batch = {128, 128, Objective::DSM};
  cfg.steps = 7000;
  cfg.eval_every = 1000;
  cfg.probes_per_t = 256;
  cfg.seed = 2;
  cfg.adam.lr = 3e-3;
  cfg.lr_schedule = LrSchedule::Cosine;
  cfg.schedule = NoiseSchedule::ve(0.01, 10.0);
  cfg.net.dim = 2;
  cfg.net.schedule = cfg.schedule;
  const auto res = train(cfg, ring);
  double best = INFINITY;
  for (const auto& r : res.log.records) {
    if (r.step > 5000) CHECK(r.score_mse <= 1.5 * best);
    best = std::min(best, r.score_mse);
  }
  CHECK(res.log.records.back().score_mse < 0.5 * res.log.records.front().score_mse);
}
