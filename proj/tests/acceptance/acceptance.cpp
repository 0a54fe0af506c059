// Acceptance gate: one PASS/FAIL line per criterion.
//
//   stf_acceptance [--criterion N]...   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stf/analytic.hpp"
#include "stf/config.hpp"
#include "stf/metrics.hpp"
#include "stf/model.hpp"
#include "stf/samplers.hpp"
#include "stf/targets.hpp"
#include "stf/variance.hpp"

using namespace stf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

const fs::path kConfigs = fs::path(STF_SOURCE_DIR) / "configs";

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double median(Vec v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// 1. STF with n = 1 is DSM, bit for bit.
Outcome reduction_identity() {
  std::size_t mismatches = 0, compared = 0;
  const Distribution ring = make_ring(8, 2.0, 0.05);
  const Distribution tg = make_two_gaussians(16, 0.1, 1e-4);
  for (const auto& sch : {NoiseSchedule::ve(0.01, 50.0), NoiseSchedule::vp(), NoiseSchedule::edm()}) {
    for (const Distribution* dist : {&ring, &tg}) {
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng a(seed), b(seed);
        const auto dsm = make_training_batch(*dist, sch, TimeSampler{}, {1, 1, Objective::DSM}, a);
        const auto stf = make_training_batch(*dist, sch, TimeSampler{}, {1, 1, Objective::STF}, b);
        mismatches += dsm.targets == stf.targets && dsm.perturbed == stf.perturbed ? 0 : 1;
        ++compared;
      }
    }
  }
  return {mismatches == 0, std::to_string(compared - mismatches) + "/" + std::to_string(compared) +
                               " batches bit-identical"};
}

// 2. Whole-support reference batch reproduces the empirical score.
Outcome full_batch_exactness() {
  Rng rng(2);
  const std::size_t count = 4096, d = 3;
  Points pts(count, d);
  for (std::size_t i = 0; i < count; ++i) rng.fill_normal(pts.row(i));
  const Distribution e = EmpiricalSet{pts};
  double worst = 0.0;
  const NoiseSchedule schedules[] = {NoiseSchedule::ve(0.01, 50.0), NoiseSchedule::vp()};
  for (int k = 0; k < 20; ++k) {
    const auto& sch = schedules[k % 2];
    const double t = 0.02 + 0.96 * rng.uniform();
    const Vec xt = sample_marginal(e, sch, t, rng);
    const Vec a = stf_target(sch, xt, pts, t), b = marginal_score(e, sch, xt, t);
    Vec diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = a[j] - b[j];
    worst = std::max(worst, norm(diff) / norm(b));
  }
  return {worst <= 1e-10, "max relative error " + fmt(worst) + " over 20 (xt, t), N = 4096 (bound 1e-10)"};
}

// 3. Phase shape of V_DSM and D(t) on the 64-d two-Gaussians set.
Outcome phase_reproduction() {
  const Distribution dist = make_two_gaussians(64, 0.1, 1e-4);
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  Vec grid;
  for (int k = 1; k <= 19; ++k) grid.push_back(0.05 * k);
  Vec v;
  std::vector<DivergenceEstimate> d1, d2;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Rng r1 = Rng::substream(3, {0, i}), r2 = Rng::substream(3, {1, i}), r3 = Rng::substream(3, {2, i});
    v.push_back(estimate_v_dsm(dist, ve, grid[i], 512, 64, r1).value);
    d1.push_back(estimate_divergence(dist, ve, grid[i], 512, r2, DivergenceOrder::P0_vs_Posterior));
    d2.push_back(estimate_divergence(dist, ve, grid[i], 512, r3, DivergenceOrder::Posterior_vs_P0));
  }
  const Vec vn = normalized(v);
  const std::size_t peak = static_cast<std::size_t>(std::max_element(vn.begin(), vn.end()) - vn.begin());
  const bool interior = peak != 0 && peak + 1 != vn.size();
  std::size_t local = 0;
  for (std::size_t i = 1; i + 1 < vn.size(); ++i) {
    if (vn[i] > vn[i - 1] && vn[i] > vn[i + 1]) local = i;
  }
  auto nonincreasing = [](const std::vector<DivergenceEstimate>& d) {
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (std::isinf(d[i - 1].value)) continue;
      if (std::isinf(d[i].value)) return false;
      const double slack = 2.0 * std::hypot(d[i].std_error, d[i - 1].std_error);
      if (d[i].value > d[i - 1].value + slack) return false;
    }
    return true;
  };
  const bool mono1 = nonincreasing(d1), mono2 = nonincreasing(d2);
  std::string detail = "V_DSM maximum at t=" + fmt(grid[peak]) + (interior ? " (interior)" : " (endpoint)");
  if (local != 0) detail += ", local interior peak at t=" + fmt(grid[local]) + " (" + fmt(vn[local]) + " of max)";
  detail += "; D(p0||post) nonincreasing " + std::string(mono1 ? "yes" : "no") + ", D(post||p0) nonincreasing " +
            (mono2 ? "yes" : "no");
  return {interior && mono1 && mono2, detail};
}

// 4. Far-field variance reduction by the reference size.
Outcome far_field_factor() {
  const Distribution dist = make_two_gaussians(64, 0.1, 1e-4);
  const auto ve = NoiseSchedule::ve(0.01, 50.0);
  const double t = 0.9;
  Rng r0 = Rng::substream(4, {0});
  const Estimate dsm = estimate_v_dsm(dist, ve, t, 512, 64, r0);
  const std::vector<std::size_t> ns{1, 4, 16, 64, 256, 1024};
  std::vector<Estimate> stf;
  for (std::size_t k = 0; k < ns.size(); ++k) {
    Rng r = Rng::substream(4, {1, k});
    stf.push_back(estimate_v_stf(dist, ve, t, ns[k], 512, 64, r));
  }
  bool ok = true;
  std::string detail;
  for (std::size_t k : {3u, 4u}) {
    const double ratio = dsm.value / stf[k].value, need = 0.5 * static_cast<double>(ns[k] - 1);
    ok = ok && ratio >= need;
    detail += "n=" + std::to_string(ns[k]) + " ratio " + fmt(ratio) + " (>= " + fmt(need) + "); ";
  }
  bool mono = true;
  for (std::size_t k = 1; k < ns.size(); ++k) {
    mono = mono && stf[k].value <= stf[k - 1].value + 3.0 * std::hypot(stf[k].std_error, stf[k - 1].std_error);
  }
  detail += std::string("V_STF monotone in n: ") + (mono ? "yes" : "no");
  return {ok && mono, detail};
}

// 5. Decay of the reference-batch minimizer's error with n.
Outcome bias_decay() {
  const Distribution ring = make_ring(8, 2.0, 0.05);
  const auto ve = NoiseSchedule::ve(0.01, 10.0);
  const double t = 0.5;
  // Between two modes, where the posterior is split.
  const Vec xt{1.6 * std::cos(0.3), 1.6 * std::sin(0.3)};
  Rng rng = Rng::substream(5, {0});
  const auto curve = estimate_bias_curve(ring, ve, xt, t, {2, 8, 32, 128, 512}, 200000, rng);
  bool decreasing = true;
  Vec lx, ly;
  std::string values;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (k > 0) decreasing = decreasing && curve[k].bias_norm < curve[k - 1].bias_norm;
    lx.push_back(std::log(static_cast<double>(curve[k].n)));
    ly.push_back(std::log(curve[k].bias_norm));
    values += (k ? ", " : "") + fmt(curve[k].bias_norm) + "±" + fmt(curve[k].noise_floor);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxy += (lx[k] - mx) * (ly[k] - my);
    sxx += (lx[k] - mx) * (lx[k] - mx);
  }
  const double slope = sxy / sxx;
  const bool band = slope >= -1.3 && slope <= -0.7;
  return {decreasing && band, "bias_norm over n={2,8,32,128,512}: " + values + "; strictly decreasing " +
                                  (decreasing ? "yes" : "no") + ", log-log slope " + fmt(slope) +
                                  " (band [-1.3, -0.7])"};
}

// 6. Divergence generator.
Outcome f_generator() {
  const bool at_one = f_div_scalar(1.0) == 0.0;
  const double upper = f_div_scalar(1.5), lower = f_div_scalar(std::nextafter(1.5, 0.0));
  const bool join = std::abs(upper - 1.0 / 9.0) <= 1e-15 && std::abs(lower - 1.0 / 9.0) <= 1e-15;
  Rng rng(6);
  std::size_t violations = 0;
  for (int k = 0; k < 1000; ++k) {
    const double a = 0.05 + 5.0 * rng.uniform(), b = 0.05 + 5.0 * rng.uniform();
    const double mid = f_div_scalar(0.5 * (a + b)), chord = 0.5 * (f_div_scalar(a) + f_div_scalar(b));
    violations += mid <= chord + 1e-12 * std::abs(chord) ? 0 : 1;
  }
  return {at_one && join && violations == 0,
          "f(1)=" + fmt(f_div_scalar(1.0)) + ", |f(1.5)-1/9|=" + fmt(std::abs(upper - 1.0 / 9.0)) +
              ", |f(1.5-)-1/9|=" + fmt(std::abs(lower - 1.0 / 9.0)) + ", midpoint violations " +
              std::to_string(violations) + "/1000"};
}

// 7. Backpropagation against central differences.
Outcome gradient_correctness() {
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = Rng::substream(7, {seed});
    ScoreNetConfig cfg;
    cfg.dim = 1 + seed % 3;
    cfg.hidden = {8 + seed % 5, 6 + seed % 4};
    cfg.fourier_features = 4;
    cfg.parametrization = seed % 2 == 0 ? Parametrization::NoiseScaled : Parametrization::Raw;
    cfg.schedule = seed % 3 == 0 ? NoiseSchedule::vp() : NoiseSchedule::ve(0.01, 10.0);
    ScoreNet net(cfg, rng);
    // Zero-initialized output layers give vanishing gradients; perturb every parameter.
    for (double& p : net.params()) p += 0.3 * rng.normal();
    const std::size_t batch = 5;
    Points x(batch, cfg.dim), target(batch, cfg.dim);
    Vec times(batch), weights(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      rng.fill_normal(x.row(i));
      rng.fill_normal(target.row(i));
      times[i] = 0.05 + 0.9 * rng.uniform();
      weights[i] = 0.5 + rng.uniform();
    }
    Vec grad(net.params().size()), scratch(grad.size());
    net.loss_and_grad(x, times, target, weights, grad);
    double scale = 0.0;
    for (double g : grad) scale = std::max(scale, std::abs(g));
    for (std::size_t k = 0; k < grad.size(); ++k) {
      const double theta = net.params()[k];
      const double h = 1e-5 * std::max(std::abs(theta), 1e-1);
      net.params()[k] = theta + h;
      const double up = net.loss_and_grad(x, times, target, weights, scratch);
      net.params()[k] = theta - h;
      const double down = net.loss_and_grad(x, times, target, weights, scratch);
      net.params()[k] = theta;
      const double fd = (up - down) / (2.0 * h);
      // Relative to the gradient, floored at 1e-6 of the largest entry so
      // that entries at rounding level do not dominate.
      worst = std::max(worst, std::abs(fd - grad[k]) / std::max(std::abs(grad[k]), 1e-6 * scale));
      ++checked;
    }
  }
  return {worst <= 1e-3, "max relative error " + fmt(worst) + " over " + std::to_string(checked) +
                             " parameters of 20 nets (bound 1e-3)"};
}

// 8. Samplers on the analytic Gaussian score.
Outcome sampler_correctness() {
  const Distribution gauss = GaussianMixture{{1.0}, Points(2, Vec{0.0, 0.0}), 1.0};
  const auto ve = NoiseSchedule::ve(0.01, 10.0);
  const auto src = ScoreSource::analytic(gauss, ve);
  Rng r1 = Rng::substream(8, {0}), r2 = Rng::substream(8, {1});
  const auto heun = sample_heun(src, ve, 18, 10000, r1);
  const auto rk = sample_rk45(src, ve, 1e-5, 1e-5, default_t_end(ve), 10000, r2);
  const double e_heun = covariance_identity_error(heun.samples), e_rk = covariance_identity_error(rk.samples);

  const Distribution ring = make_ring(8, 2.0, 0.3);
  const auto edm = NoiseSchedule::edm();
  const auto ring_src = ScoreSource::analytic(ring, edm);
  Rng r3 = Rng::substream(8, {2});
  const Points start = sample_prior(edm, 2, 256, r3);
  const Points ref = integrate_heun(ring_src, edm, 256, start).samples;
  auto rms = [&](std::size_t steps) {
    const Points x = integrate_heun(ring_src, edm, steps, start).samples;
    double s = 0.0;
    for (std::size_t k = 0; k < x.values().size(); ++k) s += std::pow(x.values()[k] - ref.values()[k], 2);
    return std::sqrt(s / static_cast<double>(x.rows()));
  };
  const double order = std::log2(rms(16) / rms(32));
  const bool ok = heun.nfe == 35.0 && e_heun <= 0.05 && e_rk <= 0.05 && order >= 1.7;
  return {ok, "Heun N=18 NFE " + fmt(heun.nfe) + " cov error " + fmt(e_heun) + "; RK45 NFE " + fmt(rk.nfe) +
                  " cov error " + fmt(e_rk) + " (bound 0.05); Heun order " + fmt(order) + " (>= 1.7)"};
}

// 9. Desk-scale training comparison on the ring.
Outcome training_win() {
  const RunConfig base = load_run_config(kConfigs / "ring8_2d.json");
  const Distribution ring = build_distribution(base);
  struct Arm {
    std::string label;
    BatchSpec spec;
    Vec mse, ed;
  };
  std::vector<Arm> arms{{"DSM", {128, 128, Objective::DSM}, {}, {}},
                        {"STF n=256", {128, 256, Objective::STF}, {}, {}},
                        // A reference batch must hold the training batch, so n = 64 trains with B = 64.
                        {"STF n=64", {64, 64, Objective::STF}, {}, {}},
                        {"STF n=1024", {128, 1024, Objective::STF}, {}, {}}};
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig cfg = base;
    cfg.seed = seed;
    Rng ref_rng = Rng::substream(seed, {9, 0});
    const Points reference = sample_data(ring, 4096, ref_rng);
    for (auto& arm : arms) {
      ObjectiveConfig objective;
      objective.batch = arm.spec;
      TrainConfig tc = make_train_config(cfg, objective);
      tc.steps = 20000;
      tc.eval_every = 20000;
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult res = train(tc, ring);
      SamplerConfig sc;
      sc.method = SamplerMethod::Heun;
      sc.steps = 18;
      Rng srng = Rng::substream(seed, {9, 1});
      const auto samples = sample(ScoreSource::network(res.net), cfg.schedule, sc, 4096, srng);
      arm.mse.push_back(res.log.records.back().score_mse);
      arm.ed.push_back(energy_distance(samples.samples, reference));
      std::cerr << "  " << arm.label << " seed " << seed << ": score_mse " << arm.mse.back() << ", energy "
                << arm.ed.back() << " ("
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
    }
  }
  const double mse_dsm = median(arms[0].mse), ed_dsm = median(arms[0].ed);
  const double mse_256 = median(arms[1].mse), ed_256 = median(arms[1].ed);
  const double mse_64 = median(arms[2].mse), ed_64 = median(arms[2].ed);
  const double mse_1024 = median(arms[3].mse), ed_1024 = median(arms[3].ed);
  const bool beats_dsm = mse_256 <= mse_dsm && ed_256 <= ed_dsm;
  const bool trend = mse_1024 <= mse_64 || ed_1024 <= ed_64;
  std::string detail = "median score_mse / energy: DSM " + fmt(mse_dsm) + " / " + fmt(ed_dsm) + ", STF256 " +
                       fmt(mse_256) + " / " + fmt(ed_256) + ", STF64 " + fmt(mse_64) + " / " + fmt(ed_64) +
                       ", STF1024 " + fmt(mse_1024) + " / " + fmt(ed_1024);
  return {beats_dsm && trend, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null").c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

// 10. Every bundled config twice; CSV outputs byte-identical.
Outcome determinism() {
  const std::string lab = STF_LAB_PATH;
  const fs::path root = fs::absolute("acceptance_determinism");
  fs::remove_all(root);
  std::size_t files = 0, differing = 0;
  std::string failures;
  for (const char* name : {"ring8_2d", "two_gaussians_64d", "empirical_demo"}) {
    const fs::path config = kConfigs / (std::string(name) + ".json");
    const RunConfig parsed = load_run_config(config);
    for (int pass = 0; pass < 2; ++pass) {
      const fs::path out = root / name / (pass == 0 ? "a" : "b");
      // The second pass uses two workers; results must not depend on it.
      const std::string common =
          " --config " + config.string() + " --out " + out.string() + " --threads " + (pass == 0 ? "1" : "2");
      std::vector<std::string> cmds;
      if (parsed.variance_scan || parsed.bias) cmds.push_back(lab + " variance-scan" + common);
      if (parsed.trainer) cmds.push_back(lab + " train" + common);
      if (parsed.sampler) {
        cmds.push_back(lab + " sample --analytic" + common);
        cmds.push_back(lab + " eval" + common);
      }
      cmds.push_back(lab + " verify" + common);
      for (const auto& cmd : cmds) {
        const int code = run(cmd);
        if (code != 0) failures += " [" + std::string(name) + ": exit " + std::to_string(code) + "]";
      }
    }
    for (const auto& entry : fs::directory_iterator(root / name / "a")) {
      if (entry.path().extension() != ".csv") continue;
      ++files;
      const fs::path twin = root / name / "b" / entry.path().filename();
      if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin)) {
        ++differing;
        failures += " [" + std::string(name) + "/" + entry.path().filename().string() + " differs]";
      }
    }
  }
  return {files > 0 && differing == 0 && failures.empty(),
          std::to_string(files - differing) + "/" + std::to_string(files) + " CSV files byte-identical" + failures};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"reduction identity", reduction_identity},   {"full-batch exactness", full_batch_exactness},
      {"phase reproduction", phase_reproduction},   {"far-field variance factor", far_field_factor},
      {"bias decay", bias_decay},                   {"f-divergence generator", f_generator},
      {"gradient correctness", gradient_correctness}, {"sampler correctness", sampler_correctness},
      {"desk-scale training win", training_win},    {"determinism", determinism},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.push_back(std::stoul(argv[++i]));
    } else {
      std::cerr << "usage: stf_acceptance [--criterion N]...\n";
      return 2;
    }
  }
  if (selected.empty()) {
    for (std::size_t k = 1; k <= criteria.size(); ++k) selected.push_back(k);
  }
  bool all = true;
  for (std::size_t k : selected) {
    if (k < 1 || k > criteria.size()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << criteria[k - 1].first
              << "): " << o.detail << " [" << fmt(secs) << " s]" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
