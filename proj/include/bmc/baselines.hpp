#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bmc/counts.hpp"
#include "bmc/features.hpp"
#include "bmc/random.hpp"

namespace bmc {

/// Prior and forward simulator of one candidate model, reduced to summaries.
struct ModelSimulator {
  std::function<std::vector<double>(Rng&)> sample_prior;
  std::function<double(std::span<const double>)> log_prior;  // -inf outside the support
  std::function<Eigen::VectorXd(std::span<const double>, Rng&)> simulate_summary;
};

std::vector<ModelSimulator> count_simulators(const CountModelSpec& spec);

/// Euclidean distance between z-scored summaries.
struct SummaryDistance {
  ZScaler scaler;
  double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return (a - b).cwiseQuotient(scaler.stds).norm();
  }
};

/// z-scaling fitted on a prior-predictive pilot run.
SummaryDistance pilot_distance(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                               std::size_t n_pilot, std::uint64_t seed);

struct RejectionConfig {
  double epsilon = std::numeric_limits<double>::infinity();
  std::size_t simulations = 10000;
  std::string distance = "euclidean_z";

  void validate() const;
};

struct ParamRejectionResult {
  std::vector<std::vector<double>> accepted;
  double acceptance_rate = 0.0;
  bool none_accepted = true;
};

ParamRejectionResult reject_params(const ModelSimulator& model, const Eigen::VectorXd& observed,
                                   const SummaryDistance& distance, const RejectionConfig& cfg, Rng& rng);

/// Pre-simulated joint draws (m, theta, s) shared by every observation.
struct ReferenceTable {
  std::vector<int> models;
  std::vector<std::vector<double>> params;
  std::vector<Eigen::VectorXd> summaries;

  std::size_t size() const { return models.size(); }
};

ReferenceTable build_reference_table(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                                     std::size_t n, std::uint64_t seed);

struct ModelRejectionResult {
  std::vector<double> estimate;  // accepted fraction per model; empty when nothing was accepted
  std::vector<std::size_t> accepted_per_model;
  std::size_t accepted = 0;
  std::size_t simulations = 0;
  bool undefined = true;
};

ModelRejectionResult reject_models_from_table(const ReferenceTable& table, std::size_t n_models,
                                              const Eigen::VectorXd& observed, const SummaryDistance& distance,
                                              double epsilon);

ModelRejectionResult reject_models(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                                   const Eigen::VectorXd& observed, const SummaryDistance& distance,
                                   const RejectionConfig& cfg, std::uint64_t seed);

/// Tolerance accepting roughly `fraction` of the table for a typical observation:
/// the median over `observations` of the per-observation distance quantile.
double epsilon_for_acceptance(const ReferenceTable& table, const std::vector<Eigen::VectorXd>& observations,
                              const SummaryDistance& distance, double fraction);

struct SmcConfig {
  int rounds = 20;                 // upper bound; rounds stop once the budget is spent
  std::size_t particles = 1000;
  std::size_t budget = 20000;      // total simulations across all rounds
  double first_epsilon = std::numeric_limits<double>::infinity();
  double kernel_scale = 2.0;       // kernel covariance = scale * weighted particle covariance
  double model_jump = 0.0;         // probability of perturbing the model index
  double min_ess = 5.0;

  void validate() const;
};

struct SmcRound {
  double epsilon;
  std::vector<double> estimate;
  double ess;
  std::size_t simulations;
};

struct SmcResult {
  std::vector<SmcRound> rounds;
  std::vector<int> models;               // final population
  std::vector<std::vector<double>> params;
  std::vector<double> weights;           // normalized
  std::size_t simulations = 0;
  bool degenerate = false;               // stopped early on low effective sample size

  const std::vector<double>& estimate() const { return rounds.back().estimate; }
};

SmcResult smc_models(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                     const Eigen::VectorXd& observed, const SummaryDistance& distance, const SmcConfig& cfg,
                     std::uint64_t seed);

}  // namespace bmc
