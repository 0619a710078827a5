#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "bmc/baselines.hpp"
#include "bmc/channels.hpp"
#include "bmc/counts.hpp"
#include "bmc/features.hpp"
#include "bmc/mdn.hpp"
#include "bmc/oracle.hpp"
#include "bmc/validation.hpp"

namespace bmc {

enum class ExperimentKind { CountsEasy, CountsDifficult, Channels };

std::string kind_name(ExperimentKind k);
ExperimentKind kind_from_name(const std::string& name);

struct NetworkConfig {
  std::vector<int> hidden;
  TrainConfig train;
};

struct RejectionSettings {
  std::size_t simulations = 0;        // 0: same budget as the training set
  double acceptance_fraction = 0.01;  // used when epsilon < 0
  double epsilon = -1.0;
  std::size_t pilot = 1000;           // prior-predictive draws for z-scaling and epsilon
};

struct SmcSettings {
  bool enabled = true;
  std::size_t test_points = 50;
  SmcConfig config;
};

struct PcaSettings {
  std::size_t corpus_per_model = 1000;
  int components = 5;
};

struct ValidationSettings {
  std::vector<double> levels = default_levels();
  std::size_t eigen_cases = 100;
  std::size_t eigen_samples = 5000;
  bool prior_consistency = true;
  std::vector<double> priors{0.1, 0.3, 0.5, 0.7, 0.9};
  std::size_t consistency_train = 0;  // 0: n_train
  std::size_t consistency_test = 1000;
  int quadrature_nodes = 4001;
};

/// Fully resolved description of one experiment. Every seed used anywhere in
/// the pipeline is derived from `seed` or stated explicitly here.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::CountsEasy;
  std::uint64_t seed = 1;
  std::size_t n_train = 100000;
  std::size_t n_test = 1000;
  std::string output_dir = "output";
  CountScenario scenario = CountScenario::easy();
  int counts_per_sample = 100;
  std::vector<double> model_prior{0.5, 0.5};
  GridConfig grid;
  ProtocolSettings protocols;
  PcaSettings pca;
  NetworkConfig classifier;
  std::vector<NetworkConfig> posteriors;  // one per model
  RejectionSettings rejection;
  SmcSettings smc;
  ValidationSettings validation;

  static ExperimentConfig defaults(ExperimentKind kind, std::uint64_t seed = 1);
  /// Starts from the defaults of the named experiment; unknown keys are errors.
  static ExperimentConfig from_json(const std::string& text);
  std::string to_json() const;
  void validate() const;

  bool is_counts() const { return kind != ExperimentKind::Channels; }
  int n_models() const { return static_cast<int>(model_prior.size()); }
  CountModelSpec count_spec() const;
  /// output_dir, placed under BMC_OUTPUT_ROOT when that is set and the path is relative.
  std::string resolved_output_dir() const;
  std::string path(const std::string& file) const;
};

using Dataset = std::vector<LabeledSample>;

Eigen::MatrixXd summaries_matrix(const Dataset& ds);
std::vector<int> labels_of(const Dataset& ds);
/// Rows of the samples generated by `model`.
Dataset subset_for_model(const Dataset& ds, int model);
Eigen::MatrixXd params_matrix(const Dataset& ds);

/// Prior-sampled corpus per protocol (rows = simulations), n_per_model from each model.
std::vector<Eigen::MatrixXd> simulate_channel_corpus(const std::vector<VoltageProtocol>& protocols,
                                                     std::size_t n_per_model, std::uint64_t seed);
PcaBasis build_channel_pca(const ExperimentConfig& cfg);

Eigen::VectorXd channel_summary(int model, std::span<const double> free, const std::vector<VoltageProtocol>& protocols,
                                const PcaBasis& basis);
Dataset generate_channel_dataset(const std::vector<double>& model_prior, const std::vector<VoltageProtocol>& protocols,
                                 const PcaBasis& basis, std::size_t n, std::uint64_t seed);
std::vector<ModelSimulator> channel_simulators(const std::vector<VoltageProtocol>& protocols, const PcaBasis& basis);

/// Training or test split for the configured experiment. Channel data needs the basis.
Dataset make_dataset(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed, const PcaBasis* basis = nullptr);
std::uint64_t train_seed(const ExperimentConfig& cfg);
std::uint64_t test_seed(const ExperimentConfig& cfg);

ClassifierModel train_classifier_on(const Dataset& ds, const NetworkConfig& net);
PosteriorModel train_posterior_on(const Dataset& ds, int model, const NetworkConfig& net);

/// Exact p(m | x) for every count test point (rows) with the configured grid.
Eigen::MatrixXd exact_model_posteriors(const ExperimentConfig& cfg, const Dataset& ds);

struct RejectionRun {
  Eigen::MatrixXd estimates;  // test points x models, prior substituted where undefined
  std::vector<char> undefined;
  double epsilon = 0.0;
  std::size_t budget = 0;
};

/// Reference table holding the joint draws of a dataset.
ReferenceTable reference_table_from(const Dataset& ds);

/// Rejection on an existing table. Its leading rows double as the pilot for the
/// z-scaling and the tolerance; `distance_out` receives the fitted distance.
RejectionRun run_rejection_on_table(const ExperimentConfig& cfg, const ReferenceTable& table,
                                    const std::vector<Eigen::VectorXd>& observed, SummaryDistance* distance_out = nullptr);

/// Amortized rejection baseline: one reference table of the configured budget
/// shared by all test points, tolerance fixed from a prior-predictive pilot.
RejectionRun run_rejection(const ExperimentConfig& cfg, const std::vector<ModelSimulator>& sims,
                           const std::vector<Eigen::VectorXd>& observed);

Eigen::MatrixXd classifier_predictions(const ClassifierModel& m, const Dataset& ds);

/// Pipeline commands; each logs its resolved config into the output directory
/// and returns the files it wrote.
std::vector<std::string> cmd_gen_data(const ExperimentConfig& cfg);
std::vector<std::string> cmd_build_pca(const ExperimentConfig& cfg);
/// target: "classifier" or "posterior:<model index or name>"
std::vector<std::string> cmd_train(const ExperimentConfig& cfg, const std::string& target);
std::vector<std::string> cmd_predict(const ExperimentConfig& cfg, const std::string& input);
std::vector<std::string> cmd_validate(const ExperimentConfig& cfg);
std::vector<std::string> cmd_compare(const ExperimentConfig& cfg);
std::vector<std::string> cmd_report(const ExperimentConfig& cfg);

}  // namespace bmc
