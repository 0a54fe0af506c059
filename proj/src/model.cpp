#include "stf/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "stf/analytic.hpp"
#include "stf/errors.hpp"
#include "stf/io.hpp"
#include "stf/simd.hpp"

namespace stf {
namespace {

constexpr int kCheckpointVersion = 1;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void transpose(const double* a, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  }
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct Scaling {
  double in = 1.0;
  double out = 1.0;
};

Scaling scaling_at(const ScoreNetConfig& config, double t) {
  if (config.parametrization == Parametrization::Raw) return {};
  const double sigma = config.schedule.sigma_at(t);
  if (!(sigma > 0.0)) throw std::invalid_argument("ScoreNet: noise-scaled output needs sigma_t > 0");
  const double a = config.schedule.scale_at(t);
  return {1.0 / std::sqrt(a * a + sigma * sigma), 1.0 / sigma};
}

// Activations kept for the backward pass.
struct Tape {
  std::vector<Points> inputs;  // inputs[l]: input of layer l
  std::vector<Points> pre;     // pre[l]: pre-activation of layer l
  std::vector<Points> gate;    // gate[l]: sigmoid(pre[l]) for hidden layers
  Vec out_scale;
};

const char* to_string(Parametrization p) { return p == Parametrization::Raw ? "raw" : "noise_scaled"; }

Parametrization parse_parametrization(const std::string& name) {
  if (name == "raw") return Parametrization::Raw;
  if (name == "noise_scaled") return Parametrization::NoiseScaled;
  throw std::invalid_argument("unknown parametrization '" + name + "'");
}

}  // namespace

ScoreNet::ScoreNet(const ScoreNetConfig& config, Rng& rng) : config_(config) {
  if (config_.dim == 0) throw std::invalid_argument("ScoreNet: dim must be >= 1");
  if (!(config_.fourier_scale >= 0.0) || !std::isfinite(config_.fourier_scale)) {
    throw std::invalid_argument("ScoreNet: fourier_scale must be finite and >= 0");
  }
  for (std::size_t h : config_.hidden) {
    if (h == 0) throw std::invalid_argument("ScoreNet: hidden widths must be >= 1");
  }
  if (config_.parametrization == Parametrization::NoiseScaled) config_.schedule.validate();
  build_layout();
  frequencies_.resize(config_.fourier_features);
  for (double& w : frequencies_) w = config_.fourier_scale * rng.normal();
  // LeCun-normal weights, zero biases.
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const bool zero = config_.zero_init_output && l + 1 == layers_.size();
    const double std = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t k = 0; k < layer.in * layer.out; ++k) {
      params_[layer.weight_offset + k] = zero ? 0.0 : std * rng.normal();
    }
  }
}

void ScoreNet::build_layout() {
  layers_.clear();
  std::size_t in = input_width();
  std::size_t offset = 0;
  std::vector<std::size_t> widths = config_.hidden;
  widths.push_back(config_.dim);
  for (std::size_t out : widths) {
    Layer layer{in, out, offset, offset + in * out};
    offset = layer.bias_offset + out;
    layers_.push_back(layer);
    in = out;
  }
  params_.assign(offset, 0.0);
}

void ScoreNet::features(const Points& xt, std::span<const double> times, Points& out) const {
  const std::size_t d = config_.dim;
  const std::size_t nf = config_.fourier_features;
  for (std::size_t i = 0; i < xt.rows(); ++i) {
    const double c_in = scaling_at(config_, times[i]).in;
    const auto x = xt.row(i);
    auto f = out.row(i);
    for (std::size_t j = 0; j < d; ++j) f[j] = c_in * x[j];
    for (std::size_t k = 0; k < nf; ++k) {
      const double phase = 2.0 * std::numbers::pi * frequencies_[k] * times[i];
      f[d + k] = std::sin(phase);
      f[d + nf + k] = std::cos(phase);
    }
  }
}

namespace {

Points run_forward(const ScoreNet& net, const Points& feats, std::span<const double> times, Tape* tape) {
  const auto& kernels = simd::active();
  const auto params = net.params();
  const std::size_t rows = feats.rows();
  Points act = feats;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    Points z(rows, layer.out);
    kernels.gemm_nn(act.data(), params.data() + layer.weight_offset, z.data(), rows, layer.in, layer.out, false);
    const double* bias = params.data() + layer.bias_offset;
    for (std::size_t i = 0; i < rows; ++i) {
      auto zr = z.row(i);
      for (std::size_t j = 0; j < layer.out; ++j) zr[j] += bias[j];
    }
    if (tape) tape->inputs.push_back(std::move(act));
    const bool last = l + 1 == net.layers().size();
    if (last) {
      if (tape) tape->pre.push_back(z);
      act = std::move(z);
    } else {
      Points a(rows, layer.out);
      Points gate(rows, layer.out);
      for (std::size_t k = 0; k < z.values().size(); ++k) {
        const double v = z.data()[k];
        gate.data()[k] = sigmoid(v);
        a.data()[k] = v * gate.data()[k];
      }
      if (tape) {
        tape->pre.push_back(std::move(z));
        tape->gate.push_back(std::move(gate));
      }
      act = std::move(a);
    }
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const double c_out = scaling_at(net.config(), times[i]).out;
    if (tape) tape->out_scale.push_back(c_out);
    for (double& v : act.row(i)) v *= c_out;
  }
  return act;
}

}  // namespace

Points ScoreNet::forward_batch(const Points& xt, std::span<const double> times) const {
  if (xt.dim() != config_.dim) throw std::invalid_argument("ScoreNet::forward: dimension mismatch");
  if (times.size() != xt.rows()) throw std::invalid_argument("ScoreNet::forward: one time per row required");
  Points feats(xt.rows(), input_width());
  features(xt, times, feats);
  return run_forward(*this, feats, times, nullptr);
}

Vec ScoreNet::forward(std::span<const double> xt, double t) const {
  if (xt.size() != config_.dim) throw std::invalid_argument("ScoreNet::forward: dimension mismatch");
  Points x(1, config_.dim);
  std::copy(xt.begin(), xt.end(), x.row(0).begin());
  const double times[1] = {t};
  const Points out = forward_batch(x, times);
  return Vec(out.row(0).begin(), out.row(0).end());
}

double ScoreNet::loss_and_grad(const Points& xt, std::span<const double> times, const Points& targets,
                               std::span<const double> weights, std::span<double> grad) const {
  const std::size_t rows = xt.rows();
  if (rows == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  if (xt.dim() != config_.dim || targets.dim() != config_.dim || targets.rows() != rows) {
    throw std::invalid_argument("loss_and_grad: dimension mismatch");
  }
  if (times.size() != rows || weights.size() != rows) throw std::invalid_argument("loss_and_grad: size mismatch");
  if (grad.size() != params_.size()) throw std::invalid_argument("loss_and_grad: gradient buffer size mismatch");
  if (!all_finite(targets.values())) throw NumericalError("loss_and_grad: non-finite training target");

  Points feats(rows, input_width());
  features(xt, times, feats);
  Tape tape;
  const Points out = run_forward(*this, feats, times, &tape);

  const auto& kernels = simd::active();
  const double inv_b = 1.0 / static_cast<double>(rows);
  double loss = 0.0;
  const std::size_t d = config_.dim;
  Points delta(rows, d);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto s = out.row(i);
    const auto y = targets.row(i);
    auto g = delta.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = s[j] - y[j];
      sq += r * r;
      // d loss / d raw output, through the output scaling.
      g[j] = 2.0 * inv_b * weights[i] * r * tape.out_scale[i];
    }
    loss += weights[i] * sq;
  }
  loss *= inv_b;

  std::fill(grad.begin(), grad.end(), 0.0);
  Vec scratch;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const Points& input = tape.inputs[l];
    // dW = input^T * delta
    scratch.resize(layer.in * rows);
    transpose(input.data(), rows, layer.in, scratch.data());
    kernels.gemm_nn(scratch.data(), delta.data(), grad.data() + layer.weight_offset, layer.in, rows, layer.out, false);
    double* db = grad.data() + layer.bias_offset;
    for (std::size_t i = 0; i < rows; ++i) {
      const auto dr = delta.row(i);
      for (std::size_t j = 0; j < layer.out; ++j) db[j] += dr[j];
    }
    if (l == 0) break;
    // d input = delta * W^T, then through SiLU of the previous layer.
    scratch.resize(layer.out * layer.in);
    transpose(params_.data() + layer.weight_offset, layer.in, layer.out, scratch.data());
    Points prev(rows, layer.in);
    kernels.gemm_nn(delta.data(), scratch.data(), prev.data(), rows, layer.out, layer.in, false);
    const Points& z = tape.pre[l - 1];
    const Points& gate = tape.gate[l - 1];
    for (std::size_t k = 0; k < prev.values().size(); ++k) {
      const double v = z.data()[k];
      const double sg = gate.data()[k];
      prev.data()[k] *= sg * (1.0 + v * (1.0 - sg));
    }
    delta = std::move(prev);
  }
  return loss;
}

nlohmann::json ScoreNet::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : layers_) layers.push_back({l.in, l.out});
  return {
      {"dim", config_.dim},
      {"hidden", config_.hidden},
      {"fourier_features", config_.fourier_features},
      {"fourier_scale", config_.fourier_scale},
      {"zero_init_output", config_.zero_init_output},
      {"parametrization", to_string(config_.parametrization)},
      {"schedule", schedule_to_json(config_.schedule)},
      {"layer_shapes", layers},
      {"frequencies", frequencies_},
      {"params", params_},
  };
}

ScoreNet ScoreNet::from_json(const nlohmann::json& j) {
  ScoreNet net;
  net.config_.dim = j.at("dim").get<std::size_t>();
  net.config_.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  net.config_.fourier_features = j.at("fourier_features").get<std::size_t>();
  net.config_.fourier_scale = j.at("fourier_scale").get<double>();
  net.config_.zero_init_output = j.value("zero_init_output", false);
  net.config_.parametrization = parse_parametrization(j.at("parametrization").get<std::string>());
  net.config_.schedule = schedule_from_json(j.at("schedule"));
  net.build_layout();
  net.frequencies_ = j.at("frequencies").get<Vec>();
  const Vec params = j.at("params").get<Vec>();
  if (net.frequencies_.size() != net.config_.fourier_features || params.size() != net.params_.size()) {
    throw std::invalid_argument("ScoreNet::from_json: parameter count does not match layer shapes");
  }
  net.params_ = params;
  return net;
}

double loss_and_grad(const ScoreNet& net, const TargetBatch& batch, const NoiseSchedule& schedule,
                     const LossWeight& weight, std::span<double> grad) {
  Vec lambda(batch.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) lambda[i] = weight(schedule, batch.times[i]);
  return net.loss_and_grad(batch.perturbed, batch.times, batch.targets, lambda, grad);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: state dimensions do not match parameters");
  }
  if (!all_finite(grads)) throw NumericalError("adam_step: non-finite gradient", state.step);
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, step);
  const double c2 = 1.0 - std::pow(config.beta2, step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g;
    state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    params[k] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

Vec default_probe_grid() {
  Vec grid(8);
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = (static_cast<double>(k) + 0.5) / 8.0;
  return grid;
}

ProbeSet make_probe_set(const Distribution& dist, const NoiseSchedule& schedule, const Vec& t_grid,
                        std::size_t probes_per_t, const LossWeight& weight, Rng& rng) {
  if (t_grid.empty() || probes_per_t == 0) throw std::invalid_argument("make_probe_set: empty probe grid");
  const ComponentView comps = components(dist);
  const std::size_t d = comps.dim();
  ProbeSet probes{Points(0, d), {}, Points(0, d), {}};
  probes.x.reserve(t_grid.size() * probes_per_t);
  probes.truth.reserve(t_grid.size() * probes_per_t);
  for (double t : t_grid) {
    const double lambda = weight(schedule, t);
    for (std::size_t p = 0; p < probes_per_t; ++p) {
      const Vec x = sample_marginal(dist, schedule, t, rng);
      probes.x.push_back(x);
      probes.truth.push_back(marginal_score(comps, schedule, x, t));
      probes.t.push_back(t);
      probes.lambda.push_back(lambda);
    }
  }
  return probes;
}

namespace {

Estimate probe_error(const Points& predicted, const ProbeSet& probes) {
  MomentAccumulator acc;
  for (std::size_t i = 0; i < probes.t.size(); ++i) {
    const auto s = predicted.row(i);
    const auto truth = probes.truth.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double r = s[j] - truth[j];
      sq += r * r;
    }
    acc.add(probes.lambda[i] * sq);
  }
  return to_estimate(acc);
}

}  // namespace

Estimate score_mse(const ScoreNet& net, const ProbeSet& probes) {
  return probe_error(net.forward_batch(probes.x, probes.t), probes);
}

Estimate score_mse(const ScoreFn& score, const ProbeSet& probes) {
  Points predicted(probes.x.rows(), probes.x.dim());
  for (std::size_t i = 0; i < probes.t.size(); ++i) {
    const Vec s = score(probes.x.row(i), probes.t[i]);
    if (s.size() != predicted.dim()) throw std::invalid_argument("score_mse: score dimension mismatch");
    std::copy(s.begin(), s.end(), predicted.row(i).begin());
  }
  return probe_error(predicted, probes);
}

Estimate score_mse_vs_analytic(const ScoreNet& net, const Distribution& dist, const NoiseSchedule& schedule,
                               const Vec& t_grid, std::size_t probes_per_t, Rng& rng, const LossWeight& weight) {
  return score_mse(net, make_probe_set(dist, schedule, t_grid, probes_per_t, weight, rng));
}

Estimate score_mse_vs_analytic(const ScoreFn& score, const Distribution& dist, const NoiseSchedule& schedule,
                               const Vec& t_grid, std::size_t probes_per_t, Rng& rng, const LossWeight& weight) {
  return score_mse(score, make_probe_set(dist, schedule, t_grid, probes_per_t, weight, rng));
}

void TrainConfig::validate() const {
  batch.validate();
  schedule.validate();
  time_sampler.validate();
  if (steps == 0) throw std::invalid_argument("train: steps must be >= 1");
  if (eval_every == 0) throw std::invalid_argument("train: eval_every must be >= 1");
  if (probes_per_t == 0 || probe_grid.empty()) throw std::invalid_argument("train: probe set must be nonempty");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0)) {
    throw std::invalid_argument("train: Adam needs lr > 0, betas in [0, 1) and eps > 0");
  }
  for (double t : probe_grid) {
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("train: probe times must lie in (0, 1]");
  }
}

double TrainConfig::learning_rate(std::size_t step) const {
  if (lr_schedule == LrSchedule::Constant) return adam.lr;
  const double progress = static_cast<double>(step) / static_cast<double>(steps);
  return adam.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainerState init_training(const TrainConfig& config) {
  config.validate();
  ScoreNetConfig net_config = config.net;
  net_config.schedule = config.schedule;
  Rng init = Rng::substream(config.seed, {0});
  TrainerState state{ScoreNet(net_config, init), AdamState(), Rng::substream(config.seed, {1}), 0, 0.0, 0, {}};
  state.adam = AdamState(state.net.params().size());
  return state;
}

void run_training(const TrainConfig& config, const Distribution& dist, TrainerState& state, std::size_t until_step,
                  const TrainHooks& hooks) {
  config.validate();
  if (dim_of(dist) != state.net.dim()) throw std::invalid_argument("train: dataset dimension does not match net");
  until_step = std::min(until_step, config.steps);
  Rng probe_rng = Rng::substream(config.seed, {2});
  const ProbeSet probes =
      make_probe_set(dist, config.schedule, config.probe_grid, config.probes_per_t, config.loss_weight, probe_rng);
  Vec grad(state.net.params().size());
  const auto start = std::chrono::steady_clock::now();
  const double wall_offset = state.log.records.empty() ? 0.0 : state.log.records.back().wall_seconds;

  while (state.step < until_step) {
    const TargetBatch batch =
        make_training_batch(dist, config.schedule, config.time_sampler, config.batch, state.rng);
    double loss = 0.0;
    try {
      loss = loss_and_grad(state.net, batch, config.schedule, config.loss_weight, grad);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(state.step + 1), state.step + 1);
    }
    if (!std::isfinite(loss) || !all_finite(grad)) {
      throw NumericalError("training diverged (non-finite loss or gradient) at step " + std::to_string(state.step + 1),
                           state.step + 1);
    }
    AdamConfig adam = config.adam;
    adam.lr = config.learning_rate(state.step);
    adam_step(state.net.params(), grad, state.adam, adam);
    if (!all_finite(state.net.params())) {
      throw NumericalError("non-finite parameters after step " + std::to_string(state.step + 1), state.step + 1);
    }
    ++state.step;
    state.loss_sum += loss;
    ++state.loss_count;

    if (state.step % config.eval_every == 0 || state.step == config.steps) {
      TrainRecord rec;
      rec.step = state.step;
      rec.loss = state.loss_sum / static_cast<double>(state.loss_count);
      rec.score_mse = score_mse(state.net, probes).value;
      if (hooks.sample_quality) rec.sample_quality = hooks.sample_quality(state.net, state.step);
      rec.wall_seconds =
          wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      state.log.records.push_back(rec);
      state.loss_sum = 0.0;
      state.loss_count = 0;
      if (hooks.on_eval) hooks.on_eval(state);
    }
  }
}

TrainResult train(const TrainConfig& config, const Distribution& dist, const TrainHooks& hooks) {
  TrainerState state = init_training(config);
  run_training(config, dist, state, config.steps, hooks);
  return {std::move(state.net), std::move(state.log)};
}

nlohmann::json checkpoint_to_json(const TrainerState& state) {
  nlohmann::json log = nlohmann::json::array();
  for (const TrainRecord& r : state.log.records) {
    nlohmann::json rec{{"step", r.step}, {"wall_seconds", r.wall_seconds}, {"loss", r.loss}, {"score_mse", r.score_mse}};
    if (r.sample_quality) rec["sample_quality"] = *r.sample_quality;
    log.push_back(rec);
  }
  return {
      {"version", kCheckpointVersion},
      {"net", state.net.to_json()},
      {"adam", {{"m", state.adam.m}, {"v", state.adam.v}, {"step", state.adam.step}}},
      {"rng", state.rng.serialize()},
      {"step", state.step},
      {"loss_sum", state.loss_sum},
      {"loss_count", state.loss_count},
      {"log", log},
  };
}

TrainerState checkpoint_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::invalid_argument("checkpoint: unsupported version " + j.at("version").dump());
  }
  TrainerState state;
  state.net = ScoreNet::from_json(j.at("net"));
  const auto& adam = j.at("adam");
  state.adam.m = adam.at("m").get<Vec>();
  state.adam.v = adam.at("v").get<Vec>();
  state.adam.step = adam.at("step").get<std::size_t>();
  if (state.adam.m.size() != state.net.params().size() || state.adam.v.size() != state.net.params().size()) {
    throw std::invalid_argument("checkpoint: optimizer state does not match parameters");
  }
  state.rng.deserialize(j.at("rng").get<std::string>());
  state.step = j.at("step").get<std::size_t>();
  state.loss_sum = j.at("loss_sum").get<double>();
  state.loss_count = j.at("loss_count").get<std::size_t>();
  for (const auto& rec : j.at("log")) {
    TrainRecord r;
    r.step = rec.at("step").get<std::size_t>();
    r.wall_seconds = rec.at("wall_seconds").get<double>();
    r.loss = rec.at("loss").get<double>();
    r.score_mse = rec.at("score_mse").get<double>();
    if (rec.contains("sample_quality")) r.sample_quality = rec.at("sample_quality").get<double>();
    state.log.records.push_back(r);
  }
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainerState& state) {
  write_json(path, checkpoint_to_json(state));
}

TrainerState load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json(path)); }

}  // namespace stf
