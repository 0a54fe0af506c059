#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stf/datasets.hpp"
#include "stf/model.hpp"
#include "stf/samplers.hpp"
#include "stf/schedule.hpp"
#include "stf/targets.hpp"
#include "stf/variance.hpp"

namespace stf {

struct DatasetConfig {
  std::string kind = "ring";  // ring | two_gaussians | mixture | empirical
  std::size_t dim = 2;
  std::size_t k = 8;
  double radius = 2.0;
  double offset = 0.1;
  double sigma_hat = 0.05;
  Vec weights;                // mixture
  std::vector<Vec> means;     // mixture
  std::string path;           // empirical, relative to the config file
};

struct ObjectiveConfig {
  std::string label;  // column prefix in comparison outputs
  BatchSpec batch;
};

struct TrainerConfig {
  std::size_t steps = 1000;
  AdamConfig adam;
  LrSchedule lr_schedule = LrSchedule::Constant;
  std::size_t eval_every = 500;
  std::size_t probes_per_t = 512;
  Vec probe_grid = default_probe_grid();
  TimeSampler time_sampler;
  LossWeight loss_weight;
  ScoreNetConfig net;
  std::size_t quick_samples = 2048;  // samples per energy-distance evaluation
  SamplerConfig quick_sampler;
  std::vector<ObjectiveConfig> comparison;  // extra paired runs
};

struct SamplerSection {
  SamplerConfig config;
  std::size_t count = 4096;
};

struct VarianceScanConfig {
  Vec t_grid;
  std::vector<std::size_t> n_list{1, 16, 64, 256, 1024};
  ScanBudgets budgets;
};

struct BiasConfig {
  double t = 0.5;
  Vec xt;  // empty: the first mixture center scaled by a_t
  std::vector<std::size_t> n_grid{2, 8, 32, 128, 512};
  std::size_t trials = 20000;
};

struct EvalConfig {
  std::size_t reference_count = 4096;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  std::size_t threads = 1;
  std::filesystem::path base_dir;  // directory of the config file

  DatasetConfig dataset;
  NoiseSchedule schedule;
  ObjectiveConfig objective;
  std::optional<TrainerConfig> trainer;
  std::optional<SamplerSection> sampler;
  std::optional<VarianceScanConfig> variance_scan;
  std::optional<BiasConfig> bias;
  EvalConfig eval;
};

/// Parses and validates; every failure is a ConfigError naming the key path
/// (or the line for syntax errors).
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json parse_json_text(const std::string& text, const std::string& source);

/// Fully defaulted form of the config. Output directory and thread count are
/// left out: neither changes results.
nlohmann::json canonical_json(const RunConfig& config);
std::string fingerprint(const RunConfig& config);

Distribution build_distribution(const RunConfig& config);
TrainConfig make_train_config(const RunConfig& config, const ObjectiveConfig& objective);

}  // namespace stf
