#include "stf/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

namespace stf {

void GaussianMixture::validate() const {
  if (means.rows() == 0 || means.dim() == 0) throw std::invalid_argument("GaussianMixture: no components");
  if (weights.size() != means.rows()) throw std::invalid_argument("GaussianMixture: weights/means size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("GaussianMixture: weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  if (!std::isfinite(sigma_hat) || sigma_hat < 0.0) {
    throw std::invalid_argument("GaussianMixture: sigma_hat must be finite and >= 0");
  }
  for (double v : means.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("GaussianMixture: non-finite mean");
  }
}

void EmpiricalSet::validate() const {
  if (points.rows() == 0) throw std::invalid_argument("empty dataset");
  for (double v : points.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("EmpiricalSet: non-finite point");
  }
}

std::size_t dim_of(const Distribution& dist) {
  return std::visit([](const auto& d) { return d.dim(); }, dist);
}

ComponentView components(const Distribution& dist) {
  ComponentView view;
  if (const auto* gm = std::get_if<GaussianMixture>(&dist)) {
    view.centers = &gm->means;
    view.weights = gm->weights;
    view.sigma_hat = gm->sigma_hat;
  } else {
    const auto& es = std::get<EmpiricalSet>(dist);
    view.centers = &es.points;
    view.weights.assign(es.points.rows(), 1.0 / static_cast<double>(es.points.rows()));
  }
  view.log_weights.resize(view.weights.size());
  for (std::size_t i = 0; i < view.weights.size(); ++i) view.log_weights[i] = std::log(view.weights[i]);
  return view;
}

GaussianMixture make_two_gaussians(std::size_t d, double offset, double sigma_hat) {
  if (d == 0) throw std::invalid_argument("make_two_gaussians: d must be >= 1");
  GaussianMixture gm;
  gm.weights = {0.5, 0.5};
  gm.means = Points(2, d);
  for (std::size_t j = 0; j < d; ++j) {
    gm.means.row(0)[j] = offset;
    gm.means.row(1)[j] = -offset;
  }
  gm.sigma_hat = sigma_hat;
  gm.validate();
  return gm;
}

GaussianMixture make_ring(std::size_t k, double radius, double sigma_hat) {
  if (k == 0) throw std::invalid_argument("make_ring: k must be >= 1");
  GaussianMixture gm;
  gm.weights.assign(k, 1.0 / static_cast<double>(k));
  gm.means = Points(k, 2);
  for (std::size_t j = 0; j < k; ++j) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(k);
    gm.means.row(j)[0] = radius * std::cos(angle);
    gm.means.row(j)[1] = radius * std::sin(angle);
  }
  // Snap exact quarter turns so (4, 1, 0) gives (+-1, 0), (0, +-1) exactly.
  for (double& v : std::span<double>(gm.means.data(), 2 * k)) {
    if (std::abs(v) < 1e-15 * std::max(1.0, radius)) v = 0.0;
  }
  gm.sigma_hat = sigma_hat;
  gm.validate();
  return gm;
}

void sample_data_into(const Distribution& dist, Points& out, std::size_t first, Rng& rng) {
  const std::size_t d = dim_of(dist);
  require_same_dim(out.dim(), d, "sample_data");
  if (const auto* es = std::get_if<EmpiricalSet>(&dist)) {
    for (std::size_t i = first; i < out.rows(); ++i) {
      const auto src = es->points.row(rng.index(es->points.rows()));
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return;
  }
  const auto& gm = std::get<GaussianMixture>(dist);
  for (std::size_t i = first; i < out.rows(); ++i) {
    const auto mean = gm.means.row(gm.weights.size() == 1 ? 0 : rng.categorical(gm.weights));
    auto dst = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] = gm.sigma_hat > 0.0 ? mean[j] + gm.sigma_hat * rng.normal() : mean[j];
    }
  }
}

Points sample_data(const Distribution& dist, std::size_t count, Rng& rng) {
  Points out(count, dim_of(dist));
  sample_data_into(dist, out, 0, rng);
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view field, std::size_t line_no) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw std::runtime_error("malformed row at line " + std::to_string(line_no) + ": '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

EmpiricalSet load_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
  std::size_t declared_dim = 0;
  std::vector<double> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  bool column_header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    if (values.empty() && !column_header_seen && !view.starts_with("d=") && std::isalpha(static_cast<unsigned char>(view.front()))) {
      // Named columns such as "x0,x1" before the first row.
      bool numeric = true;
      try {
        parse_double(view.substr(0, view.find(',')), line_no);
      } catch (const std::runtime_error&) {
        numeric = false;
      }
      if (!numeric) {
        column_header_seen = true;
        continue;
      }
    }
    if (view.starts_with("d=")) {
      if (!values.empty() || declared_dim != 0) {
        throw std::runtime_error("header 'd=' only allowed on the first line (line " + std::to_string(line_no) + ")");
      }
      const double d = parse_double(view.substr(2), line_no);
      if (d < 1 || d != std::floor(d)) throw std::runtime_error("invalid dimension header at line 1");
      declared_dim = static_cast<std::size_t>(d);
      continue;
    }
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = view.find(',', start);
      values.push_back(parse_double(view.substr(start, comma - start), line_no));
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (dim == 0) dim = declared_dim != 0 ? declared_dim : count;
    if (count != dim) {
      throw std::runtime_error("inconsistent dimension at line " + std::to_string(line_no) + ": expected " +
                               std::to_string(dim) + ", got " + std::to_string(count));
    }
  }
  if (values.empty()) throw std::runtime_error("empty dataset");
  EmpiricalSet es{Points(dim, std::move(values))};
  es.validate();
  return es;
}

void save_points(const std::filesystem::path& path, const Points& points, bool with_header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (with_header) out << "d=" << points.dim() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto row = points.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), row[j]);
      if (j) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

}  // namespace stf
