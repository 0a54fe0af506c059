#include "stf/commands.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>

#include "stf/analytic.hpp"
#include "stf/errors.hpp"
#include "stf/io.hpp"
#include "stf/metrics.hpp"
#include "stf/parallel.hpp"
#include "stf/samplers.hpp"
#include "stf/variance.hpp"

namespace stf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path prepare_output(const RunConfig& config) {
  fs::create_directories(config.output_dir);
  return config.output_dir;
}

json sidecar(const RunConfig& config, const std::string& command) {
  return {{"command", command},
          {"config", canonical_json(config)},
          {"config_fingerprint", fingerprint(config)},
          {"seed", config.seed}};
}

std::vector<std::string> coordinate_names(std::size_t d) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
  return names;
}

void write_points_csv(const fs::path& path, const Points& points, const std::string& fp) {
  CsvWriter csv(path, fp);
  csv.header(coordinate_names(points.dim()));
  for (std::size_t i = 0; i < points.rows(); ++i) csv.row(points.row(i));
}

Points reference_draws(const Distribution& dist, std::size_t count, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, {3});
  return sample_data(dist, count, rng);
}

// Bias-curve probe point: the configured one, else the midpoint of the first
// two components scaled by a_t.
Vec bias_point(const BiasConfig& bias, const Distribution& dist, const NoiseSchedule& schedule) {
  if (!bias.xt.empty()) return bias.xt;
  const ComponentView comps = components(dist);
  const std::size_t d = comps.dim();
  Vec xt(d);
  const auto a = comps.centers->row(0);
  const auto b = comps.centers->row(comps.size() > 1 ? 1 : 0);
  const double scale = schedule.scale_at(bias.t);
  for (std::size_t j = 0; j < d; ++j) xt[j] = 0.5 * scale * (a[j] + b[j]);
  return xt;
}

void print_phase_summary(const VarianceReport& report, std::ostream& log) {
  const std::size_t peak = report.v_dsm_peak();
  const bool interior = peak != 0 && peak + 1 != report.t_grid.size();
  log << "V_DSM peak at t=" << report.t_grid[peak] << " (" << (interior ? "interior" : "endpoint") << ")\n";
  // The sigma^2-weighted curve is what enters a lambda = sigma^2 loss.
  std::size_t far = report.t_grid.size();
  for (std::size_t k = 0; k < report.t_grid.size(); ++k) {
    if (report.d_p0_post[k].value < 0.1) {
      far = k;
      break;
    }
  }
  if (far < report.t_grid.size()) {
    log << "far field (D_t(p0||posterior) < 0.1) from t=" << report.t_grid[far] << "\n";
  } else {
    log << "far field not reached on this grid\n";
  }
}

}  // namespace

double loglog_slope(const Vec& x, const Vec& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

int cmd_variance_scan(const RunConfig& config, std::ostream& log) {
  if (!config.variance_scan && !config.bias) {
    throw ConfigError("config key 'variance_scan': required section is missing");
  }
  const fs::path out = prepare_output(config);
  const Distribution dist = build_distribution(config);
  const std::string fp = fingerprint(config);
  json meta = sidecar(config, "variance-scan");

  if (config.variance_scan) {
    const VarianceScanConfig& vs = *config.variance_scan;
    Rng rng = Rng::substream(config.seed, {10});
    VarianceReport report = phase_scan(dist, config.schedule, vs.t_grid, vs.n_list, vs.budgets, rng);
    report.fingerprint = fp;
    write_report_csv(report, out / "variance_scan.csv");
    const std::size_t peak = report.v_dsm_peak();
    meta["v_dsm_peak_t"] = report.t_grid[peak];
    meta["v_dsm_peak_interior"] = peak != 0 && peak + 1 != report.t_grid.size();
    print_phase_summary(report, log);
  }
  if (config.bias) {
    const BiasConfig& b = *config.bias;
    const Vec xt = bias_point(b, dist, config.schedule);
    Rng rng = Rng::substream(config.seed, {11});
    const auto curve = estimate_bias_curve(dist, config.schedule, xt, b.t, b.n_grid, b.trials, rng);
    CsvWriter csv(out / "bias_curve.csv", fp);
    csv.header(std::vector<std::string>{"n", "bias_norm", "noise_floor"});
    Vec ns, biases;
    for (const auto& p : curve) {
      csv.row(Vec{static_cast<double>(p.n), p.bias_norm, p.noise_floor});
      ns.push_back(static_cast<double>(p.n));
      biases.push_back(p.bias_norm);
    }
    const double slope = loglog_slope(ns, biases);
    meta["bias_xt"] = xt;
    meta["bias_loglog_slope"] = slope;
    log << "bias log-log slope " << slope << "\n";
  }
  write_json(out / "variance_scan.json", meta);
  return kExitOk;
}

namespace {

struct RunOutput {
  std::string label;
  TrainLog log;
};

TrainHooks make_hooks(const RunConfig& config, const TrainerConfig& trainer, const Distribution& dist,
                      const Points& reference) {
  TrainHooks hooks;
  if (trainer.quick_samples == 0) return hooks;
  hooks.sample_quality = [&config, &trainer, &reference](const ScoreNet& net, std::size_t step) {
    Rng rng = Rng::substream(config.seed, {4, step});
    const SampleResult r = sample(ScoreSource::network(net), config.schedule, trainer.quick_sampler,
                                  trainer.quick_samples, rng);
    return energy_distance(r.samples, reference);
  };
  (void)dist;
  return hooks;
}

void write_train_log(const fs::path& path, const TrainLog& log, const std::string& fp) {
  CsvWriter csv(path, fp);
  csv.header(std::vector<std::string>{"step", "loss", "score_mse", "energy_distance"});
  for (const auto& r : log.records) {
    csv.row(Vec{static_cast<double>(r.step), r.loss, r.score_mse,
                r.sample_quality ? *r.sample_quality : std::numeric_limits<double>::quiet_NaN()});
  }
}

json timing_json(const TrainLog& log) {
  json rows = json::array();
  for (const auto& r : log.records) rows.push_back({{"step", r.step}, {"wall_seconds", r.wall_seconds}});
  return rows;
}

}  // namespace

int cmd_train(const RunConfig& config, const CommandOptions& options, std::ostream& log) {
  if (!config.trainer) throw ConfigError("config key 'trainer': required section is missing");
  const TrainerConfig& trainer = *config.trainer;
  const fs::path out = prepare_output(config);
  const Distribution dist = build_distribution(config);
  const std::string fp = fingerprint(config);
  const Points reference = reference_draws(dist, trainer.quick_samples > 0 ? trainer.quick_samples : 1, config.seed);
  const TrainHooks base_hooks = make_hooks(config, trainer, dist, reference);

  std::vector<ObjectiveConfig> runs{config.objective};
  runs.insert(runs.end(), trainer.comparison.begin(), trainer.comparison.end());
  if (options.resume && runs.size() > 1) {
    throw ConfigError("--resume applies to single-objective configs (trainer.comparison must be empty)");
  }

  json meta = sidecar(config, "train");
  std::vector<RunOutput> outputs;
  for (const ObjectiveConfig& objective : runs) {
    const TrainConfig tc = make_train_config(config, objective);
    const fs::path ckpt = out / ("checkpoint_" + objective.label + ".json");
    TrainerState state = options.resume ? load_checkpoint(*options.resume) : init_training(tc);
    if (options.resume && state.net.params().size() != init_training(tc).net.params().size()) {
      throw ConfigError("checkpoint " + options.resume->string() + " does not match the configured network");
    }
    TrainHooks hooks = base_hooks;
    hooks.on_eval = [&](const TrainerState& s) {
      json j = checkpoint_to_json(s);
      j["config_fingerprint"] = fp;
      write_json(ckpt, j);
      const auto& r = s.log.records.back();
      log << objective.label << " step " << r.step << " loss " << r.loss << " score_mse " << r.score_mse;
      if (r.sample_quality) log << " energy " << *r.sample_quality;
      log << "\n";
    };
    try {
      run_training(tc, dist, state, tc.steps, hooks);
    } catch (const NumericalError& e) {
      write_train_log(out / ("train_log_" + objective.label + ".csv"), state.log, fp);
      throw;
    }
    write_train_log(out / ("train_log_" + objective.label + ".csv"), state.log, fp);
    meta["runs"][objective.label] = {{"objective", std::string(to_string(objective.batch.objective))},
                                     {"batch_size", objective.batch.batch_size},
                                     {"n", objective.batch.reference_size},
                                     {"checkpoint", ckpt.filename().string()},
                                     {"timing", timing_json(state.log)}};
    outputs.push_back({objective.label, state.log});
  }

  if (outputs.size() > 1) {
    CsvWriter csv(out / "comparison.csv", fp);
    std::vector<std::string> header{"step"};
    for (const auto& o : outputs) {
      header.push_back(o.label + "_score_mse");
      header.push_back(o.label + "_energy_distance");
    }
    csv.header(header);
    for (std::size_t k = 0; k < outputs.front().log.records.size(); ++k) {
      Vec row{static_cast<double>(outputs.front().log.records[k].step)};
      for (const auto& o : outputs) {
        const auto& r = o.log.records[k];
        row.push_back(r.score_mse);
        row.push_back(r.sample_quality ? *r.sample_quality : std::numeric_limits<double>::quiet_NaN());
      }
      csv.row(row);
    }
  }
  write_json(out / "train.json", meta);
  return kExitOk;
}

int cmd_sample(const RunConfig& config, const CommandOptions& options, std::ostream& log) {
  if (!config.sampler) throw ConfigError("config key 'sampler': required section is missing");
  if (!options.checkpoint && !options.analytic) throw ConfigError("sample needs --checkpoint <path> or --analytic");
  const SamplerSection& section = *config.sampler;
  const fs::path out = prepare_output(config);
  const Distribution dist = build_distribution(config);
  const std::string fp = fingerprint(config);

  std::optional<ScoreNet> net;
  if (options.checkpoint) {
    net = load_checkpoint(*options.checkpoint).net;
    if (net->dim() != dim_of(dist)) throw ConfigError("checkpoint dimension does not match the dataset");
  }
  const ScoreSource source = net ? ScoreSource::network(*net) : ScoreSource::analytic(dist, config.schedule);
  if (section.config.method == SamplerMethod::Heun && config.schedule.kind == ScheduleKind::VP) {
    log << "warning: EDM sigma grid requested with a VP schedule; converting each sigma to t by inversion\n";
  }
  Rng rng = Rng::substream(config.seed, {5});
  const SampleResult result = sample(source, config.schedule, section.config, section.count, rng);
  write_points_csv(out / "samples.csv", result.samples, fp);

  json meta = sidecar(config, "sample");
  meta["source"] = net ? "checkpoint:" + options.checkpoint->filename().string() : "analytic";
  meta["method"] = std::string(to_string(section.config.method));
  meta["count"] = section.count;
  meta["nfe"] = result.nfe;
  meta["nfe_min"] = result.nfe_min;
  meta["nfe_max"] = result.nfe_max;
  meta["nfe_total"] = result.nfe_total;
  write_json(out / "samples.json", meta);
  log << "wrote " << section.count << " samples, NFE " << result.nfe << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const CommandOptions& options, std::ostream& log) {
  const fs::path out = prepare_output(config);
  const fs::path samples_path = options.samples ? *options.samples : out / "samples.csv";
  if (!fs::exists(samples_path)) throw ConfigError("samples file not found: " + samples_path.string());
  Points a;
  Points b;
  try {
    a = load_points(samples_path).points;
    b = options.reference ? load_points(*options.reference).points
                          : reference_draws(build_distribution(config), config.eval.reference_count, config.seed);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  if (a.dim() != b.dim()) {
    throw ConfigError("eval: dimension mismatch (" + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
  }
  const double ed = energy_distance(a, b);
  json meta = sidecar(config, "eval");
  meta["samples"] = samples_path.filename().string();
  meta["reference"] = options.reference ? options.reference->filename().string() : "analytic draws";
  meta["energy_distance"] = ed;
  meta["moments"] = to_json(moment_diagnostics(a, b));
  write_json(out / "metrics.json", meta);
  log << "energy distance " << ed << "\n";
  return kExitOk;
}

int cmd_verify(const RunConfig& config, std::ostream& log) {
  const fs::path out = config.output_dir;
  if (!fs::is_directory(out)) throw ConfigError("output directory not found: " + out.string());
  const std::string fp = fingerprint(config);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(out)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".csv" || ext == ".json")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::size_t bad = 0;
  for (const auto& f : files) {
    const std::string found = read_fingerprint(f);
    const bool ok = found == fp;
    bad += ok ? 0 : 1;
    log << (ok ? "ok       " : "MISMATCH ") << f.filename().string() << (ok ? "" : " (" + found + ")") << "\n";
  }
  log << files.size() - bad << "/" << files.size() << " files carry fingerprint " << fp << "\n";
  return bad == 0 && !files.empty() ? kExitOk : kExitVerifyFailed;
}

}  // namespace stf
