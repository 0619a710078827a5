#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bmc/counts.hpp"
#include "bmc/mdn.hpp"
#include "bmc/random.hpp"

namespace bmc {

/// A distribution seen through its log density and, optionally, a sampler.
struct Density {
  std::function<double(const Eigen::VectorXd&)> log_pdf;
  std::function<Eigen::VectorXd(Rng&)> sample;
};

Density gamma_density(const GammaParams& g);
Density mog_density(const MoGPosterior& q);

/// Tensor-product integration grid, one axis per dimension.
struct QuadratureGrid {
  std::vector<Eigen::VectorXd> axes;
};

/// Uniform grid between the lo and hi quantiles of a Gamma distribution.
QuadratureGrid gamma_grid(const GammaParams& g, int nodes = 4001, double tail = 1e-12);

enum class KlMode { Quadrature, MonteCarlo };

struct KlResult {
  double value = 0.0;
  double std_error = 0.0;  // zero for quadrature
  bool infinite = false;   // q vanishes where p has mass
};

KlResult kl_quadrature(const Density& p, const Density& q, const QuadratureGrid& grid);
KlResult kl_monte_carlo(const Density& p, const Density& q, std::size_t n, Rng& rng);
KlResult kl_divergence(const Density& p, const Density& q, KlMode mode, std::size_t n, const QuadratureGrid* grid,
                       Rng* rng);

struct NormalizedKl {
  double value = 0.0;
  bool undefined = false;  // exact posterior indistinguishable from the prior
};

/// D(exact || estimate) / D(exact || prior), both by quadrature on `grid`.
NormalizedKl normalized_kl(const Density& exact, const Density& estimate, const Density& prior,
                           const QuadratureGrid& grid);

/// One-dimensional posterior seen through its CDF and quantile function.
struct Posterior1D {
  std::function<double(double)> cdf;
  std::function<double(double)> quantile;
};

Posterior1D gamma_posterior_1d(const GammaParams& g);
Posterior1D mog_posterior_1d(const MoGPosterior::Marginal& m);

/// Kolmogorov-Smirnov distance of a sample from U(0, 1).
double ks_uniform(std::vector<double> values);
/// Critical KS distance at significance 1 % (Stephens' finite-n form).
double ks_critical_1pct(std::size_t n);

struct QuantileReport {
  std::vector<double> quantiles;
  double ks = 0.0;
  double ks_critical = 0.0;
  bool uniform() const { return ks < ks_critical; }
};

QuantileReport quantile_check(std::span<const Posterior1D> posteriors, std::span<const double> truths);

/// Fraction of truths inside the central interval of mass gamma, per level.
std::vector<double> credible_coverage(std::span<const Posterior1D> posteriors, std::span<const double> truths,
                                      std::span<const double> levels);

std::vector<double> default_levels();  // 0.1, 0.2, ..., 0.9

struct EigenCheck {
  Eigen::Matrix2d estimated_vectors;  // columns: nu_max, nu_min of the estimate
  Eigen::Vector2d estimated_values;
  Eigen::Vector2d exact_values;       // eigenvalues of the exact sample covariance, max first
  Eigen::Vector2d exact_proj_mean, exact_proj_var;          // exact samples along nu_max, nu_min
  Eigen::Vector2d estimated_proj_mean, estimated_proj_var;  // estimate samples along nu_max, nu_min
  Eigen::Vector2d variance_ratio;     // exact projected variance / exact eigenvalue
  double angle_deg = 0.0;             // between leading eigenvectors, in [0, 90]
  bool undefined = false;             // estimate nearly isotropic
};

/// Total covariance sum_k a_k (S_k + m_k m_k^T) - mu mu^T of a mixture.
Eigen::MatrixXd mog_total_covariance(const MoGPosterior& q);

/// Angle in degrees between two undirected axes.
double axis_angle_deg(const Eigen::Vector2d& a, const Eigen::Vector2d& b);

EigenCheck eigen_check(const Eigen::MatrixXd& exact_samples, const MoGPosterior& q, std::size_t n, Rng& rng);

struct PriorConsistencyRow {
  double prior;           // prior probability of model 0
  double mean_posterior;  // average predicted probability of model 0
};

/// Retrains the count classifier per prior value and averages its model-0
/// probability over a fresh test set drawn at that prior.
std::vector<PriorConsistencyRow> prior_consistency(const CountScenario& scenario, std::span<const double> priors,
                                                   std::size_t n_train, std::size_t n_test,
                                                   const std::vector<int>& hidden, const TrainConfig& cfg,
                                                   std::uint64_t seed);

struct MethodScore {
  std::string method;
  double mae = 0.0;            // NaN without a reference posterior
  double cross_entropy = 0.0;  // against the generating labels
  std::size_t n = 0;
};

struct MethodOutput {
  std::string method;
  Eigen::MatrixXd probabilities;  // test points x models
};

/// `reference` may be empty (no exact posterior available).
std::vector<MethodScore> compare_methods(std::span<const MethodOutput> methods, const Eigen::MatrixXd& reference,
                                         std::span<const int> labels);

struct CalibrationReport {
  std::string name;
  std::vector<double> quantiles;
  double ks = 0.0;
  double ks_critical = 0.0;
  std::vector<double> levels;
  std::vector<double> coverage;
  std::vector<double> normalized_kl;
  std::vector<double> eigen_angles;
  std::vector<MethodScore> methods;

  void validate() const;
  std::string to_json() const;
  void write(const std::string& directory) const;  // report json plus tsv tables
};

double median_of(std::vector<double> v);

}  // namespace bmc
