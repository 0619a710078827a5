#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bmc/counts.hpp"
#include "bmc/random.hpp"

namespace bmc {

/// Grid over the hyperprior quantile box [tail, 1 - tail] in each dimension.
struct GridConfig {
  int k_nodes = 256;
  int theta_nodes = 256;
  double tail = 1e-4;
};

/// log of the Gamma-Poisson marginal likelihood, closed form.
double poisson_log_evidence(std::span<const std::int64_t> x, const GammaParams& prior);

/// Conjugate update Gamma(k + sum x, 1 / (N + 1/theta)).
GammaParams poisson_posterior(std::span<const std::int64_t> x, const GammaParams& prior);

/// log prod_i C(x_i + r - 1, x_i) (1 - p)^r p^x_i with real r.
double nb_log_likelihood(std::span<const std::int64_t> x, double r, double p);

struct NbEvidence {
  double log_evidence;
  double prior_mass_covered;  // hyperprior mass inside the integration box
  bool coverage_warning;      // covered mass < 99.9 %
};

/// Double integral over (r, p) of the NB likelihood times the transformed
/// hyperprior density, trapezoid rule in log space.
NbEvidence nb_log_evidence(std::span<const std::int64_t> x, const GammaParams& shape_prior,
                           const GammaParams& scale_prior, const GridConfig& grid = {});

/// Normalized posterior density over (k, theta) on a rectangular grid with
/// tabulated CDFs for inverse-transform sampling.
struct GridPosterior2D {
  Eigen::VectorXd k_grid;
  Eigen::VectorXd theta_grid;
  Eigen::MatrixXd log_density;           // |k| x |theta|, trapezoid mass 1
  Eigen::VectorXd marginal_k_cdf;        // |k|
  Eigen::MatrixXd conditional_theta_cdf; // |k| x |theta|, each row ends at 1 (or all zero for massless rows)
  bool coverage_warning = false;

  double total_mass() const;
  Eigen::Vector2d mean() const;
  Eigen::Matrix2d covariance() const;
  /// Bilinear interpolation of the density; -inf outside the grid.
  double log_pdf(double k, double theta) const;
  Eigen::VectorXd marginal_k() const;
  Eigen::VectorXd marginal_theta() const;

  void validate() const;
};

GridPosterior2D nb_grid_posterior(std::span<const std::int64_t> x, const GammaParams& shape_prior,
                                  const GammaParams& scale_prior, const GridConfig& grid = {});

std::vector<Eigen::Vector2d> grid_sample(const GridPosterior2D& g, std::size_t n, Rng& rng);

void save_grid(const GridPosterior2D& g, const std::string& path);
GridPosterior2D load_grid(const std::string& path);

/// Normalizes log evidences against a model prior with log-sum-exp.
std::vector<double> posterior_from_log_evidence(std::span<const double> log_evidence, std::span<const double> prior);

std::vector<double> model_posterior_exact(std::span<const std::int64_t> x, const CountModelSpec& spec,
                                          const GridConfig& grid = {});

/// Trapezoid weights for a uniform 1-D grid of n nodes with spacing h.
Eigen::VectorXd trapezoid_weights(int n, double h);

}  // namespace bmc
