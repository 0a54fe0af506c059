#pragma once

#include <cstddef>
#include <filesystem>
#include <variant>

#include "stf/points.hpp"
#include "stf/rng.hpp"

namespace stf {

/// sum_i w_i N(mu_i, sigma_hat^2 I). sigma_hat = 0 is a weighted set of deltas.
struct GaussianMixture {
  Vec weights;
  Points means;
  double sigma_hat = 0.0;

  void validate() const;
  std::size_t dim() const { return means.dim(); }
};

/// Uniform distribution over a finite point set.
struct EmpiricalSet {
  Points points;

  void validate() const;
  std::size_t dim() const { return points.dim(); }
};

using Distribution = std::variant<GaussianMixture, EmpiricalSet>;

std::size_t dim_of(const Distribution& dist);

/// Components of either kind as (log prior weight, center, shared std). An
/// EmpiricalSet is the sigma_hat = 0 mixture with uniform weights, so the
/// analytic code sees one representation.
struct ComponentView {
  const Points* centers = nullptr;
  Vec log_weights;
  Vec weights;
  double sigma_hat = 0.0;

  std::size_t size() const { return centers->rows(); }
  std::size_t dim() const { return centers->dim(); }
};

ComponentView components(const Distribution& dist);

GaussianMixture make_two_gaussians(std::size_t d, double offset, double sigma_hat);

/// k equal-weight components on a circle of the given radius in R^2.
GaussianMixture make_ring(std::size_t k, double radius, double sigma_hat);

/// count i.i.d. draws. EmpiricalSet draws are uniform with replacement.
Points sample_data(const Distribution& dist, std::size_t count, Rng& rng);

/// Fills rows [first, out.rows()) of out with draws; same stream as sample_data.
void sample_data_into(const Distribution& dist, Points& out, std::size_t first, Rng& rng);

/// CSV of decimal floats, one point per row, optional first line "d=<dim>".
EmpiricalSet load_points(const std::filesystem::path& path);
void save_points(const std::filesystem::path& path, const Points& points, bool with_header = true);

}  // namespace stf
