#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bmc/random.hpp"

namespace bmc {

/// Gamma distribution in shape/scale form (mean shape * scale).
struct GammaParams {
  double shape = 1.0;
  double scale = 1.0;

  void validate() const;
  double mean() const { return shape * scale; }
  double log_pdf(double x) const;
};

enum class CountModel : int { Poisson = 0, NegativeBinomial = 1 };

/// Two-model count comparison: Poisson(lambda) vs. a Poisson-Gamma mixture
/// with Gamma hyperpriors on its shape and scale.
struct CountModelSpec {
  std::vector<double> model_prior{0.5, 0.5};
  GammaParams poisson_rate_prior;
  GammaParams nb_shape_prior;
  GammaParams nb_scale_prior;
  int counts_per_sample = 100;

  void validate() const;
};

/// One joint draw (m, theta, x, s(x)). `counts` is empty for samples whose raw
/// data is not a count vector (channel traces are reduced to summaries only).
struct LabeledSample {
  int model_index = 0;
  std::vector<double> params;
  std::vector<std::int64_t> counts;
  std::vector<double> summary;
};

double sample_gamma(const GammaParams& p, Rng& rng);
std::vector<std::int64_t> simulate_poisson(double lambda, int count, Rng& rng);
std::vector<std::int64_t> simulate_nb(double shape, double scale, int count, Rng& rng);

/// Direct NB(r, p) route: P(x) = C(x + r - 1, x) (1 - p)^r p^x, sampled by CDF
/// inversion. Used only to cross-check the Poisson-Gamma route.
std::vector<std::int64_t> simulate_nb_direct(double r, double p, int count, Rng& rng);

struct DifficultyScaling {
  double poisson_shape;         // k1
  double expected_nb_variance;  // E[k (theta^2 + theta)]
};

/// Equal-expected-mean constraint k2 th2 k3 th3 = k1 th1 and the implied NB variance.
DifficultyScaling scale_difficulty(double k2, double theta2, double k3, double theta3, double theta1);

/// Named hyperparameter set; only k2 is fixed by the scenario, the remaining
/// hyperparameters default to 1.
struct CountScenario {
  std::string name = "easy";
  double k2 = 20.0;
  double theta2 = 1.0;
  double k3 = 1.0;
  double theta3 = 1.0;
  double theta1 = 1.0;

  static CountScenario easy() { return {"easy", 20.0}; }
  static CountScenario difficult() { return {"difficult", 1.0}; }
  static CountScenario by_name(const std::string& name);
};

CountModelSpec make_count_spec(const CountScenario& scenario, std::vector<double> model_prior = {0.5, 0.5},
                               int counts_per_sample = 100);

/// Draws m ~ prior, theta ~ p(theta | m), x ~ model, s(x). Reproducible for a
/// fixed seed; sample i always uses stream (seed, i).
LabeledSample draw_count_sample(const CountModelSpec& spec, Rng& rng);
LabeledSample draw_count_sample(const CountModelSpec& spec, int model_index, Rng& rng);
std::vector<LabeledSample> generate_count_dataset(const CountModelSpec& spec, std::size_t n, std::uint64_t seed);

int sample_model_index(const std::vector<double>& prior, Rng& rng);

}  // namespace bmc
