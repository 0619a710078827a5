#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bmc/features.hpp"
#include "bmc/random.hpp"

namespace bmc {

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
};

/// Fully connected trunk with tanh units.
struct FeedforwardNet {
  std::vector<DenseLayer> layers;

  int input_dim() const { return static_cast<int>(layers.front().W.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().W.rows()); }
  std::vector<int> sizes() const;
  void validate() const;
  /// Activation of the last hidden layer for each column of `inputs`.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
};

/// Softmax readout over model indices.
struct ClassifierHead {
  DenseLayer out;
  int n_models() const { return static_cast<int>(out.W.rows()); }
};

/// Mixture-of-Gaussians readout. Output layout per sample:
/// [K mixing logits | K*d means | K*d log-diagonal of U | K*d(d-1)/2 upper triangle of U].
struct MoGHead {
  DenseLayer out;
  int components = 1;
  int dim = 1;

  static int output_size(int components, int dim) { return components * (1 + 2 * dim + dim * (dim - 1) / 2); }
};

template <class Head>
struct Mdn {
  FeedforwardNet trunk;
  Head head;
};
using ClassifierNet = Mdn<ClassifierHead>;
using MogNet = Mdn<MoGHead>;

/// sum_k alpha_k N(theta | mean_k, (U_k^T U_k)^-1)
struct MoGPosterior {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;                   // K x d
  std::vector<Eigen::MatrixXd> precision_factors;  // upper triangular U_k, positive diagonal

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
  Eigen::MatrixXd component_covariance(int k) const;
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
  Eigen::VectorXd sample(Rng& rng) const;
  /// 1-D marginal of coordinate i as a K-component mixture (weights, means, stds).
  struct Marginal {
    Eigen::VectorXd weights, means, stds;
    double cdf(double x) const;
    double quantile(double u) const;
    double log_pdf(double x) const;
    double mean() const;
    double std() const;
  };
  Marginal marginal(int i) const;
  void validate() const;
};

double mog_log_density(const MoGPosterior& q, const Eigen::VectorXd& theta);

/// Maps a posterior over z-scored parameters back to the original scale.
MoGPosterior mog_to_original_scale(const MoGPosterior& q, const ZScaler& param_scaler);

ClassifierNet make_classifier(int input_dim, const std::vector<int>& hidden, int n_models, std::uint64_t seed);
MogNet make_mog(int input_dim, const std::vector<int>& hidden, int components, int dim, std::uint64_t seed);

Eigen::VectorXd forward_classifier(const ClassifierNet& net, const Eigen::VectorXd& s);
MoGPosterior forward_mog(const MogNet& net, const Eigen::VectorXd& s);

struct LossValue {
  double value;
  bool clamped;  // a true-label probability fell below the floor
};
inline constexpr double kProbabilityFloor = 1e-12;

/// Mean negative log-probability of the true label; probs has one row per sample.
LossValue classifier_loss(const Eigen::MatrixXd& probs, std::span<const int> labels);

/// Batch losses and gradients. Inputs are one sample per row; `grad` receives
/// the gradient of the mean loss with the same shapes as the network.
double classifier_loss_and_gradient(const ClassifierNet& net, const Eigen::MatrixXd& inputs, std::span<const int> labels,
                                    ClassifierNet* grad);
double mog_loss_and_gradient(const MogNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                             MogNet* grad);

template <class Head>
Eigen::VectorXd pack(const Mdn<Head>& net);
template <class Head>
void unpack(const Eigen::VectorXd& flat, Mdn<Head>& net);

struct TrainConfig {
  double learning_rate = 0.01;
  int batch_size = 0;  // 0 -> N / 100
  int epochs = 100;
  int components = 3;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  int resolved_batch_size(std::size_t n) const;
};

class Adam {
 public:
  Adam(Eigen::Index n, const TrainConfig& cfg);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  Eigen::VectorXd m_, v_;
  long t_ = 0;
  double lr_, beta1_, beta2_, eps_;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// The classifier sees only model labels and the MoG head only parameters.
TrainResult train_classifier(ClassifierNet& net, const Eigen::MatrixXd& inputs, std::span<const int> labels,
                             const TrainConfig& cfg);
TrainResult train_mog(MogNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                      const TrainConfig& cfg);

/// Trained network bundled with its scalers; predictions take raw summaries.
struct ClassifierModel {
  ClassifierNet net;
  ZScaler input_scaler;
  TrainConfig config;
  std::vector<double> loss_trace;

  Eigen::VectorXd predict(const Eigen::VectorXd& summary) const;
};

struct PosteriorModel {
  MogNet net;
  ZScaler input_scaler;
  ZScaler param_scaler;
  TrainConfig config;
  std::vector<double> loss_trace;

  MoGPosterior predict(const Eigen::VectorXd& summary) const;  // original parameter scale
};

ClassifierModel fit_classifier(const Eigen::MatrixXd& summaries, std::span<const int> labels,
                               const std::vector<int>& hidden, const TrainConfig& cfg);
PosteriorModel fit_posterior(const Eigen::MatrixXd& summaries, const Eigen::MatrixXd& params,
                             const std::vector<int>& hidden, const TrainConfig& cfg);

}  // namespace bmc
