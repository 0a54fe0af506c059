#include "stf/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>

namespace stf {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string config_fingerprint(const nlohmann::json& config) {
  const std::string canonical = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& fingerprint) : out_(path) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  if (!fingerprint.empty()) out_ << "# config_fingerprint=" << fingerprint << '\n';
}

void CsvWriter::header(std::span<const std::string> names) {
  columns_ = names.size();
  for (std::size_t i = 0; i < names.size(); ++i) out_ << (i ? "," : "") << names[i];
  out_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  if (columns_ != 0 && values.size() != columns_) throw std::logic_error("CsvWriter: row width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_double(values[i]);
  out_ << '\n';
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

std::string read_fingerprint(const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    const auto j = read_json(path);
    return j.value("config_fingerprint", std::string());
  }
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return {};
  const std::string prefix = "# config_fingerprint=";
  return line.rfind(prefix, 0) == 0 ? line.substr(prefix.size()) : std::string();
}

nlohmann::json schedule_to_json(const NoiseSchedule& schedule) {
  nlohmann::json j{{"kind", std::string(to_string(schedule.kind))}};
  switch (schedule.kind) {
    case ScheduleKind::VE:
      j["sigma_min"] = schedule.sigma_min;
      j["sigma_max"] = schedule.sigma_max;
      break;
    case ScheduleKind::EDM:
      j["sigma_min"] = schedule.sigma_min;
      j["sigma_max"] = schedule.sigma_max;
      j["rho"] = schedule.rho;
      break;
    case ScheduleKind::VP:
      j["beta_min"] = schedule.beta_min;
      j["beta_max"] = schedule.beta_max;
      break;
  }
  return j;
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  NoiseSchedule s;
  s.kind = parse_schedule_kind(j.at("kind").get<std::string>());
  if (s.kind == ScheduleKind::EDM) s = NoiseSchedule::edm();
  s.sigma_min = j.value("sigma_min", s.sigma_min);
  s.sigma_max = j.value("sigma_max", s.sigma_max);
  s.beta_min = j.value("beta_min", s.beta_min);
  s.beta_max = j.value("beta_max", s.beta_max);
  s.rho = j.value("rho", s.rho);
  s.validate();
  return s;
}

}  // namespace stf
