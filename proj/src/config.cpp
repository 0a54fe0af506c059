#include "stf/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "stf/errors.hpp"
#include "stf/io.hpp"

namespace stf {
namespace {

using nlohmann::json;

bool is_nonnegative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

// A JSON object being read; remembers which keys were consumed so that
// unknown (usually misspelled) keys can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const std::string where = key.empty() ? (path_.empty() ? "<root>" : path_) : key_path(key);
    throw ConfigError("config key '" + where + "': " + message);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number()) fail(key, "expected a number, got " + v.dump());
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(key, "must be finite");
    return x;
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!is_nonnegative_integer(v)) {
      fail(key, "expected a nonnegative integer, got " + v.dump());
    }
    return v.get<std::size_t>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_string()) fail(key, "expected a string, got " + v.dump());
    return v.get<std::string>();
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) fail(key, "expected true or false, got " + v.dump());
    return v.get<bool>();
  }

  Vec numbers(const std::string& key, const Vec& fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_array()) fail(key, "expected an array of numbers");
    Vec out;
    for (const json& e : v) {
      if (!e.is_number()) fail(key, "expected an array of numbers, found " + e.dump());
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key, const std::vector<std::size_t>& fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_array()) fail(key, "expected an array of nonnegative integers");
    std::vector<std::size_t> out;
    for (const json& e : v) {
      if (!is_nonnegative_integer(e)) fail(key, "expected nonnegative integers, found " + e.dump());
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  Section child(const std::string& key) { return Section(raw(key), key_path(key)); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) fail(item.key(), "unknown key");
    }
  }

  // Runs fn, turning std::invalid_argument into a ConfigError at this section.
  template <typename Fn>
  void check(Fn&& fn) const {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      fail("", e.what());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

DatasetConfig parse_dataset(Section s) {
  DatasetConfig d;
  d.kind = s.text("kind", d.kind);
  if (d.kind == "ring") {
    d.dim = 2;
    d.k = s.count("k", 8);
    d.radius = s.number("radius", 2.0);
    d.sigma_hat = s.number("sigma_hat", 0.05);
  } else if (d.kind == "two_gaussians") {
    d.dim = s.count("dim", 64);
    d.offset = s.number("offset", 0.1);
    d.sigma_hat = s.number("sigma_hat", 1e-4);
  } else if (d.kind == "mixture") {
    d.sigma_hat = s.number("sigma_hat", 0.0);
    if (!s.has("means")) s.fail("means", "required for a mixture");
    const json& means = s.raw("means");
    if (!means.is_array() || means.empty()) s.fail("means", "expected a nonempty array of points");
    for (const json& m : means) {
      if (!m.is_array()) s.fail("means", "each mean must be an array of numbers");
      Vec v;
      for (const json& e : m) {
        if (!e.is_number()) s.fail("means", "each mean must be an array of numbers");
        v.push_back(e.get<double>());
      }
      d.means.push_back(std::move(v));
    }
    d.dim = d.means.front().size();
    d.weights = s.numbers("weights", Vec(d.means.size(), 1.0 / static_cast<double>(d.means.size())));
  } else if (d.kind == "empirical") {
    d.path = s.text("path", "");
    if (d.path.empty()) s.fail("path", "required for an empirical dataset");
  } else {
    s.fail("kind", "expected ring, two_gaussians, mixture or empirical, got '" + d.kind + "'");
  }
  s.finish();
  return d;
}

NoiseSchedule parse_schedule(Section s) {
  NoiseSchedule sch;
  const std::string kind = s.text("kind", "VE");
  s.check([&] { sch.kind = parse_schedule_kind(kind); });
  if (sch.kind == ScheduleKind::EDM) sch = NoiseSchedule::edm();
  if (sch.kind == ScheduleKind::VP) {
    sch.beta_min = s.number("beta_min", sch.beta_min);
    sch.beta_max = s.number("beta_max", sch.beta_max);
  } else {
    sch.sigma_min = s.number("sigma_min", sch.sigma_min);
    sch.sigma_max = s.number("sigma_max", sch.sigma_max);
    sch.rho = s.number("rho", sch.rho);
  }
  s.check([&] { sch.validate(); });
  s.finish();
  return sch;
}

ObjectiveConfig parse_objective(Section s, const std::string& default_label) {
  ObjectiveConfig o;
  const std::string kind = s.text("kind", "DSM");
  s.check([&] { o.batch.objective = stf::parse_objective(kind); });
  o.batch.batch_size = s.count("batch_size", o.batch.batch_size);
  o.batch.reference_size = s.count("n", o.batch.objective == Objective::STF ? 256 : o.batch.batch_size);
  if (o.batch.objective == Objective::DSM) o.batch.reference_size = o.batch.batch_size;
  o.label = s.text("label", default_label.empty()
                                ? (o.batch.objective == Objective::DSM
                                       ? std::string("dsm")
                                       : "stf_n" + std::to_string(o.batch.reference_size))
                                : default_label);
  s.check([&] { o.batch.validate(); });
  s.finish();
  return o;
}

SamplerConfig parse_sampler_config(Section& s, const NoiseSchedule& schedule) {
  SamplerConfig c;
  c.t_end = default_t_end(schedule);
  const std::string method = s.text("method", "heun");
  s.check([&] { c.method = parse_sampler_method(method); });
  c.steps = s.count("steps", c.method == SamplerMethod::Heun ? 18 : 500);
  c.atol = s.number("atol", c.atol);
  c.rtol = s.number("rtol", c.rtol);
  c.t_end = s.number("t_end", c.t_end);
  c.snr = s.number("snr", c.snr);
  c.corrector_steps = s.count("corrector_steps", c.corrector_steps);
  c.noise_scale = s.number("noise_scale", c.noise_scale);
  c.max_steps = s.count("max_steps", c.max_steps);
  s.check([&] { c.validate(); });
  return c;
}

TrainerConfig parse_trainer(Section s, const RunConfig& run) {
  TrainerConfig t;
  t.steps = s.count("steps", t.steps);
  t.adam.lr = s.number("lr", t.adam.lr);
  t.adam.beta1 = s.number("beta1", t.adam.beta1);
  t.adam.beta2 = s.number("beta2", t.adam.beta2);
  t.adam.eps = s.number("eps", t.adam.eps);
  const std::string lr_schedule = s.text("lr_schedule", "constant");
  if (lr_schedule == "constant") {
    t.lr_schedule = LrSchedule::Constant;
  } else if (lr_schedule == "cosine") {
    t.lr_schedule = LrSchedule::Cosine;
  } else {
    s.fail("lr_schedule", "expected constant or cosine");
  }
  t.eval_every = s.count("eval_every", t.eval_every);
  t.probes_per_t = s.count("probes_per_t", t.probes_per_t);
  t.probe_grid = s.numbers("probe_grid", t.probe_grid);
  t.quick_samples = s.count("quick_samples", t.quick_samples);

  if (s.has("time_sampler")) {
    Section ts = s.child("time_sampler");
    const std::string kind = ts.text("kind", "uniform");
    if (kind == "uniform") {
      t.time_sampler.kind = TimeSamplerKind::Uniform;
    } else if (kind == "log_normal_sigma") {
      t.time_sampler.kind = TimeSamplerKind::LogNormalSigma;
    } else {
      ts.fail("kind", "expected uniform or log_normal_sigma");
    }
    t.time_sampler.t_min = ts.number("t_min", t.time_sampler.t_min);
    t.time_sampler.log_mean = ts.number("log_mean", t.time_sampler.log_mean);
    t.time_sampler.log_std = ts.number("log_std", t.time_sampler.log_std);
    ts.check([&] { t.time_sampler.validate(); });
    ts.finish();
  }
  if (s.has("loss_weight")) {
    Section lw = s.child("loss_weight");
    const std::string kind = lw.text("kind", "sigma_squared");
    if (kind == "sigma_squared") {
      t.loss_weight.kind = LossWeight::Kind::SigmaSquared;
    } else if (kind == "constant") {
      t.loss_weight.kind = LossWeight::Kind::Constant;
    } else {
      lw.fail("kind", "expected sigma_squared or constant");
    }
    t.loss_weight.scale = lw.number("scale", 1.0);
    if (!(t.loss_weight.scale > 0.0)) lw.fail("scale", "must be positive");
    lw.finish();
  }
  if (s.has("net")) {
    Section n = s.child("net");
    t.net.hidden = n.counts("hidden", t.net.hidden);
    t.net.fourier_features = n.count("fourier_features", t.net.fourier_features);
    t.net.fourier_scale = n.number("fourier_scale", t.net.fourier_scale);
    const std::string p = n.text("parametrization", "noise_scaled");
    if (p == "noise_scaled") {
      t.net.parametrization = Parametrization::NoiseScaled;
    } else if (p == "raw") {
      t.net.parametrization = Parametrization::Raw;
    } else {
      n.fail("parametrization", "expected noise_scaled or raw");
    }
    for (std::size_t w : t.net.hidden) {
      if (w == 0) n.fail("hidden", "widths must be >= 1");
    }
    n.finish();
  }
  {
    json empty = json::object();
    Section q = s.has("quick_sampler") ? s.child("quick_sampler") : Section(empty, s.key_path("quick_sampler"));
    t.quick_sampler = parse_sampler_config(q, run.schedule);
    q.finish();
  }
  if (s.has("comparison")) {
    const json& list = s.raw("comparison");
    if (!list.is_array()) s.fail("comparison", "expected an array of objective sections");
    for (std::size_t i = 0; i < list.size(); ++i) {
      t.comparison.push_back(parse_objective(Section(list[i], s.key_path("comparison") + "[" + std::to_string(i) + "]"), ""));
    }
  }
  if (t.steps == 0) s.fail("steps", "must be >= 1");
  if (t.eval_every == 0) s.fail("eval_every", "must be >= 1");
  if (t.probes_per_t == 0) s.fail("probes_per_t", "must be >= 1");
  if (t.probe_grid.empty()) s.fail("probe_grid", "must be nonempty");
  for (double p : t.probe_grid) {
    if (!(p > 0.0 && p <= 1.0)) s.fail("probe_grid", "times must lie in (0, 1]");
  }
  if (!(t.adam.lr > 0.0)) s.fail("lr", "must be positive");
  if (!(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0)) s.fail("beta1", "must lie in [0, 1)");
  if (!(t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0)) s.fail("beta2", "must lie in [0, 1)");
  if (!(t.adam.eps > 0.0)) s.fail("eps", "must be positive");
  s.finish();
  return t;
}

Vec parse_t_grid(Section& s) {
  if (!s.has("t_grid")) {
    Vec grid;
    for (int k = 1; k <= 19; ++k) grid.push_back(0.05 * k);
    return grid;
  }
  const json& g = s.raw("t_grid");
  Vec grid;
  if (g.is_object()) {
    Section r(g, s.key_path("t_grid"));
    const double start = r.number("start", 0.05);
    const double stop = r.number("stop", 0.95);
    const std::size_t count = r.count("count", 19);
    r.finish();
    if (count < 1) r.fail("count", "must be >= 1");
    for (std::size_t k = 0; k < count; ++k) {
      grid.push_back(count == 1 ? start : start + (stop - start) * static_cast<double>(k) / static_cast<double>(count - 1));
    }
  } else {
    grid = s.numbers("t_grid", {});
  }
  if (grid.empty()) s.fail("t_grid", "must be nonempty");
  for (double t : grid) {
    if (!(t > 0.0 && t <= 1.0)) s.fail("t_grid", "times must lie in (0, 1]");
  }
  return grid;
}

json sampler_json(const SamplerConfig& c) {
  return {{"method", std::string(to_string(c.method))},
          {"steps", c.steps},
          {"atol", c.atol},
          {"rtol", c.rtol},
          {"t_end", c.t_end},
          {"snr", c.snr},
          {"corrector_steps", c.corrector_steps},
          {"noise_scale", c.noise_scale},
          {"max_steps", c.max_steps}};
}

json objective_json(const ObjectiveConfig& o) {
  return {{"label", o.label},
          {"kind", std::string(to_string(o.batch.objective))},
          {"batch_size", o.batch.batch_size},
          {"n", o.batch.reference_size}};
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

nlohmann::json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": line " + std::to_string(line_of(text, e.byte == 0 ? 0 : e.byte - 1)) +
                      ": invalid JSON (" + e.what() + ")");
  }
}

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  Section root(j, "");
  RunConfig c;
  c.base_dir = base_dir;
  c.name = root.text("name", c.name);
  if (root.has("seed")) {
    const json& v = root.raw("seed");
    if (!is_nonnegative_integer(v)) root.fail("seed", "expected a nonnegative integer, got " + v.dump());
    c.seed = v.get<std::uint64_t>();
  }
  c.output_dir = root.text("output_dir", c.output_dir.string());
  c.threads = root.count("threads", c.threads);
  if (c.threads == 0) root.fail("threads", "must be >= 1");

  if (!root.has("dataset")) root.fail("dataset", "required section is missing");
  c.dataset = parse_dataset(root.child("dataset"));
  if (root.has("schedule")) c.schedule = parse_schedule(root.child("schedule"));
  {
    json empty = json::object();
    c.objective = parse_objective(root.has("objective") ? root.child("objective") : Section(empty, "objective"), "");
  }
  if (root.has("trainer")) c.trainer = parse_trainer(root.child("trainer"), c);
  if (root.has("sampler")) {
    Section s = root.child("sampler");
    SamplerSection ss;
    ss.count = s.count("count", ss.count);
    if (ss.count == 0) s.fail("count", "must be >= 1");
    ss.config = parse_sampler_config(s, c.schedule);
    s.finish();
    c.sampler = ss;
  }
  if (root.has("variance_scan")) {
    Section s = root.child("variance_scan");
    VarianceScanConfig v;
    v.t_grid = parse_t_grid(s);
    v.n_list = s.counts("n_list", v.n_list);
    v.budgets.outer = s.count("outer", v.budgets.outer);
    v.budgets.inner = s.count("inner", v.budgets.inner);
    v.budgets.divergence_outer = s.count("divergence_outer", v.budgets.divergence_outer);
    if (v.budgets.outer < 2) s.fail("outer", "must be >= 2");
    if (v.budgets.inner < 2) s.fail("inner", "must be >= 2");
    if (v.budgets.divergence_outer < 2) s.fail("divergence_outer", "must be >= 2");
    for (std::size_t n : v.n_list) {
      if (n == 0) s.fail("n_list", "entries must be >= 1");
    }
    s.finish();
    c.variance_scan = v;
  }
  if (root.has("bias")) {
    Section s = root.child("bias");
    BiasConfig b;
    b.t = s.number("t", b.t);
    b.xt = s.numbers("xt", b.xt);
    b.n_grid = s.counts("n_grid", b.n_grid);
    b.trials = s.count("trials", b.trials);
    if (!(b.t > 0.0 && b.t <= 1.0)) s.fail("t", "must lie in (0, 1]");
    if (b.trials == 0) s.fail("trials", "must be >= 1");
    if (b.n_grid.empty()) s.fail("n_grid", "must be nonempty");
    for (std::size_t n : b.n_grid) {
      if (n == 0) s.fail("n_grid", "entries must be >= 1");
    }
    s.finish();
    c.bias = b;
  }
  if (root.has("eval")) {
    Section s = root.child("eval");
    c.eval.reference_count = s.count("reference_count", c.eval.reference_count);
    if (c.eval.reference_count == 0) s.fail("reference_count", "must be >= 1");
    s.finish();
  }
  root.finish();

  // Cross-section checks need the dataset itself.
  const Distribution dist = build_distribution(c);
  if (c.bias && !c.bias->xt.empty() && c.bias->xt.size() != dim_of(dist)) {
    throw ConfigError("config key 'bias.xt': expected " + std::to_string(dim_of(dist)) + " coordinates");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(parse_json_text(buffer.str(), path.string()), path.parent_path());
}

Distribution build_distribution(const RunConfig& config) {
  const DatasetConfig& d = config.dataset;
  try {
    if (d.kind == "ring") return make_ring(d.k, d.radius, d.sigma_hat);
    if (d.kind == "two_gaussians") return make_two_gaussians(d.dim, d.offset, d.sigma_hat);
    if (d.kind == "mixture") {
      GaussianMixture gm;
      gm.weights = d.weights;
      gm.sigma_hat = d.sigma_hat;
      for (const Vec& m : d.means) gm.means.push_back(m);
      gm.validate();
      return gm;
    }
    const std::filesystem::path p = std::filesystem::path(d.path).is_absolute() ? std::filesystem::path(d.path)
                                                                                : config.base_dir / d.path;
    return load_points(p);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key 'dataset': " + std::string(e.what()));
  }
}

nlohmann::json canonical_json(const RunConfig& c) {
  json dataset{{"kind", c.dataset.kind}};
  if (c.dataset.kind == "ring") {
    dataset["k"] = c.dataset.k;
    dataset["radius"] = c.dataset.radius;
    dataset["sigma_hat"] = c.dataset.sigma_hat;
  } else if (c.dataset.kind == "two_gaussians") {
    dataset["dim"] = c.dataset.dim;
    dataset["offset"] = c.dataset.offset;
    dataset["sigma_hat"] = c.dataset.sigma_hat;
  } else if (c.dataset.kind == "mixture") {
    dataset["means"] = c.dataset.means;
    dataset["weights"] = c.dataset.weights;
    dataset["sigma_hat"] = c.dataset.sigma_hat;
  } else {
    dataset["path"] = c.dataset.path;
  }
  json j{{"name", c.name},
         {"seed", c.seed},
         {"dataset", dataset},
         {"schedule", schedule_to_json(c.schedule)},
         {"objective", objective_json(c.objective)},
         {"eval", {{"reference_count", c.eval.reference_count}}}};
  if (c.trainer) {
    const TrainerConfig& t = *c.trainer;
    json comparison = json::array();
    for (const auto& o : t.comparison) comparison.push_back(objective_json(o));
    j["trainer"] = {
        {"steps", t.steps},
        {"lr", t.adam.lr},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps},
        {"lr_schedule", t.lr_schedule == LrSchedule::Constant ? "constant" : "cosine"},
        {"eval_every", t.eval_every},
        {"probes_per_t", t.probes_per_t},
        {"probe_grid", t.probe_grid},
        {"quick_samples", t.quick_samples},
        {"quick_sampler", sampler_json(t.quick_sampler)},
        {"time_sampler",
         {{"kind", t.time_sampler.kind == TimeSamplerKind::Uniform ? "uniform" : "log_normal_sigma"},
          {"t_min", t.time_sampler.t_min},
          {"log_mean", t.time_sampler.log_mean},
          {"log_std", t.time_sampler.log_std}}},
        {"loss_weight",
         {{"kind", t.loss_weight.kind == LossWeight::Kind::SigmaSquared ? "sigma_squared" : "constant"},
          {"scale", t.loss_weight.scale}}},
        {"net",
         {{"hidden", t.net.hidden},
          {"fourier_features", t.net.fourier_features},
          {"fourier_scale", t.net.fourier_scale},
          {"parametrization", t.net.parametrization == Parametrization::Raw ? "raw" : "noise_scaled"}}},
        {"comparison", comparison},
    };
  }
  if (c.sampler) {
    j["sampler"] = sampler_json(c.sampler->config);
    j["sampler"]["count"] = c.sampler->count;
  }
  if (c.variance_scan) {
    j["variance_scan"] = {{"t_grid", c.variance_scan->t_grid},
                          {"n_list", c.variance_scan->n_list},
                          {"outer", c.variance_scan->budgets.outer},
                          {"inner", c.variance_scan->budgets.inner},
                          {"divergence_outer", c.variance_scan->budgets.divergence_outer}};
  }
  if (c.bias) {
    j["bias"] = {{"t", c.bias->t}, {"xt", c.bias->xt}, {"n_grid", c.bias->n_grid}, {"trials", c.bias->trials}};
  }
  return j;
}

std::string fingerprint(const RunConfig& config) { return config_fingerprint(canonical_json(config)); }

TrainConfig make_train_config(const RunConfig& config, const ObjectiveConfig& objective) {
  if (!config.trainer) throw ConfigError("config key 'trainer': required section is missing");
  const TrainerConfig& t = *config.trainer;
  TrainConfig tc;
  tc.batch = objective.batch;
  tc.steps = t.steps;
  tc.adam = t.adam;
  tc.lr_schedule = t.lr_schedule;
  tc.seed = config.seed;
  tc.eval_every = t.eval_every;
  tc.probes_per_t = t.probes_per_t;
  tc.probe_grid = t.probe_grid;
  tc.schedule = config.schedule;
  tc.time_sampler = t.time_sampler;
  tc.loss_weight = t.loss_weight;
  tc.net = t.net;
  tc.net.dim = dim_of(build_distribution(config));
  tc.net.schedule = config.schedule;
  return tc;
}

}  // namespace stf
