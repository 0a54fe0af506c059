#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "stf/config.hpp"

namespace stf {

struct CommandOptions {
  std::optional<std::filesystem::path> checkpoint;  // sample
  bool analytic = false;                             // sample
  std::optional<std::filesystem::path> resume;      // train
  std::optional<std::filesystem::path> samples;     // eval
  std::optional<std::filesystem::path> reference;   // eval
};

/// Exit codes shared by the subcommands.
enum ExitCode : int { kExitOk = 0, kExitVerifyFailed = 1, kExitConfig = 2, kExitNumerical = 3 };

int cmd_variance_scan(const RunConfig& config, std::ostream& log);
int cmd_train(const RunConfig& config, const CommandOptions& options, std::ostream& log);
int cmd_sample(const RunConfig& config, const CommandOptions& options, std::ostream& log);
int cmd_eval(const RunConfig& config, const CommandOptions& options, std::ostream& log);

/// Checks that every CSV/JSON output in the output directory carries the
/// fingerprint of the given config.
int cmd_verify(const RunConfig& config, std::ostream& log);

/// Log-log least-squares slope of y against x.
double loglog_slope(const Vec& x, const Vec& y);

}  // namespace stf
