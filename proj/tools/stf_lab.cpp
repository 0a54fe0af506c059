// stf-lab: experiment driver.
//
// Precedence for run settings: command-line flag > config file > built-in
// default. Exit codes: 0 success, 1 verification mismatch, 2 config error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "stf/commands.hpp"
#include "stf/errors.hpp"
#include "stf/parallel.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, GlobalFlags& flags) {
  cmd->add_option("--config", flags.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", flags.seed, "Override the config seed");
  cmd->add_option("--out", flags.out, "Override the output directory");
  cmd->add_option("--threads", flags.threads, "Worker thread cap (results do not depend on it)")
      ->check(CLI::PositiveNumber);
}

stf::RunConfig resolve(const GlobalFlags& flags) {
  stf::RunConfig config = stf::load_run_config(flags.config);
  if (flags.seed) config.seed = *flags.seed;
  if (flags.out) config.output_dir = *flags.out;
  if (flags.threads) config.threads = *flags.threads;
  stf::set_max_threads(config.threads);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stable target field experiments: variance scans, training, sampling and evaluation"};
  app.require_subcommand(1);
  GlobalFlags flags;
  stf::CommandOptions options;
  std::string checkpoint, resume, samples, reference;

  auto* scan = app.add_subcommand("variance-scan", "Estimate V_DSM, V_STF and D(t) over a time grid");
  auto* train = app.add_subcommand("train", "Train a score network (DSM or STF)");
  auto* sample = app.add_subcommand("sample", "Generate samples from a checkpoint or the analytic score");
  auto* eval = app.add_subcommand("eval", "Energy distance and moments between sample sets");
  auto* verify = app.add_subcommand("verify", "Check the config fingerprint of every output file");
  for (auto* cmd : {scan, train, sample, eval, verify}) add_common(cmd, flags);
  train->add_option("--resume", resume, "Continue from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "Trained checkpoint");
  sample->add_flag("--analytic", options.analytic, "Use the exact score of the configured dataset");
  eval->add_option("--samples", samples, "Sample CSV (default: <out>/samples.csv)");
  eval->add_option("--reference", reference, "Reference CSV (default: fresh draws from the dataset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : stf::kExitConfig;
  }
  if (!checkpoint.empty()) options.checkpoint = checkpoint;
  if (!resume.empty()) options.resume = resume;
  if (!samples.empty()) options.samples = samples;
  if (!reference.empty()) options.reference = reference;

  try {
    const stf::RunConfig config = resolve(flags);
    if (*scan) return stf::cmd_variance_scan(config, std::cout);
    if (*train) return stf::cmd_train(config, options, std::cout);
    if (*sample) return stf::cmd_sample(config, options, std::cout);
    if (*eval) return stf::cmd_eval(config, options, std::cout);
    return stf::cmd_verify(config, std::cout);
  } catch (const stf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return stf::kExitConfig;
  } catch (const stf::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return stf::kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return stf::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return stf::kExitNumerical;
  }
}
