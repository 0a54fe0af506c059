#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stf/schedule.hpp"

namespace stf {

/// Shortest decimal that round-trips; "inf", "-inf", "nan" for non-finite.
std::string format_double(double v);

/// 64-bit FNV-1a of the canonical (sorted-key, compact) JSON dump, as hex.
std::string config_fingerprint(const nlohmann::json& config);

/// CSV file whose first line is "# config_fingerprint=<hex>" when a
/// fingerprint is given.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& fingerprint);

  void header(std::span<const std::string> names);
  void row(std::span<const double> values);

 private:
  std::ofstream out_;
  std::size_t columns_ = 0;
};

void write_json(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

/// Fingerprint recorded in a CSV comment line or a JSON sidecar's
/// "config_fingerprint" field; empty when absent.
std::string read_fingerprint(const std::filesystem::path& path);

nlohmann::json schedule_to_json(const NoiseSchedule& schedule);

/// Missing keys keep their defaults; the result is validated.
NoiseSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace stf
