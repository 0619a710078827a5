#include "bmc/counts.hpp"

#include <cmath>
#include <numeric>

#include "bmc/errors.hpp"
#include "bmc/features.hpp"
#include "bmc/parallel.hpp"

namespace bmc {

void GammaParams::validate() const {
  if (!(shape > 0.0) || !(scale > 0.0) || !std::isfinite(shape) || !std::isfinite(scale))
    throw DomainError("GammaParams: shape and scale must be positive, got shape=" + std::to_string(shape) +
                      " scale=" + std::to_string(scale));
}

double GammaParams::log_pdf(double x) const {
  if (!(x > 0.0)) return -INFINITY;
  return (shape - 1.0) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale);
}

void CountModelSpec::validate() const {
  if (model_prior.size() != 2) throw DomainError("CountModelSpec: model prior must have two entries");
  double total = 0.0;
  for (double p : model_prior) {
    if (!(p >= 0.0)) throw DomainError("CountModelSpec: negative model prior entry");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw DomainError("CountModelSpec: model prior must sum to 1");
  poisson_rate_prior.validate();
  nb_shape_prior.validate();
  nb_scale_prior.validate();
  if (counts_per_sample < 2) throw DomainError("CountModelSpec: need at least 2 counts per sample");
}

double sample_gamma(const GammaParams& p, Rng& rng) {
  p.validate();
  return gamma_variate(rng, p.shape, p.scale);
}

std::vector<std::int64_t> simulate_poisson(double lambda, int count, Rng& rng) {
  if (!(lambda >= 0.0)) throw DomainError("simulate_poisson: lambda must be >= 0");
  if (count < 0) throw DomainError("simulate_poisson: negative count");
  std::vector<std::int64_t> x(static_cast<std::size_t>(count));
  for (auto& xi : x) xi = poisson_variate(rng, lambda);
  return x;
}

std::vector<std::int64_t> simulate_nb(double shape, double scale, int count, Rng& rng) {
  if (!(shape > 0.0) || !(scale > 0.0)) throw DomainError("simulate_nb: shape and scale must be positive");
  if (count < 0) throw DomainError("simulate_nb: negative count");
  std::vector<std::int64_t> x(static_cast<std::size_t>(count));
  for (auto& xi : x) xi = poisson_variate(rng, gamma_variate(rng, shape, scale));
  return x;
}

std::vector<std::int64_t> simulate_nb_direct(double r, double p, int count, Rng& rng) {
  if (!(r > 0.0) || !(p > 0.0) || !(p < 1.0)) throw DomainError("simulate_nb_direct: need r > 0, 0 < p < 1");
  std::vector<std::int64_t> x(static_cast<std::size_t>(count));
  const double p0 = std::exp(r * std::log1p(-p));
  for (auto& xi : x) {
    const double u = rng.uniform();
    double pmf = p0;
    double cdf = pmf;
    std::int64_t k = 0;
    while (cdf <= u && pmf > 0.0) {
      pmf *= p * (static_cast<double>(k) + r) / static_cast<double>(k + 1);
      cdf += pmf;
      ++k;
    }
    xi = k;
  }
  return x;
}

DifficultyScaling scale_difficulty(double k2, double theta2, double k3, double theta3, double theta1) {
  for (double v : {k2, theta2, k3, theta3, theta1})
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("scale_difficulty: all hyperparameters must be positive");
  const double k1 = k2 * theta2 * k3 * theta3 / theta1;
  // E[theta^2 + theta] for theta ~ Gamma(k3, theta3)
  const double second_moment = k3 * (k3 + 1.0) * theta3 * theta3 + k3 * theta3;
  return {k1, k2 * theta2 * second_moment};
}

CountScenario CountScenario::by_name(const std::string& name) {
  if (name == "easy" || name == "counts_easy") return easy();
  if (name == "difficult" || name == "counts_difficult") return difficult();
  throw ConfigError("unknown count scenario '" + name + "'");
}

CountModelSpec make_count_spec(const CountScenario& s, std::vector<double> model_prior, int counts_per_sample) {
  const auto scaling = scale_difficulty(s.k2, s.theta2, s.k3, s.theta3, s.theta1);
  CountModelSpec spec;
  spec.model_prior = std::move(model_prior);
  spec.poisson_rate_prior = {scaling.poisson_shape, s.theta1};
  spec.nb_shape_prior = {s.k2, s.theta2};
  spec.nb_scale_prior = {s.k3, s.theta3};
  spec.counts_per_sample = counts_per_sample;
  spec.validate();
  return spec;
}

int sample_model_index(const std::vector<double>& prior, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    if (prior[i] > 0.0) last_positive = static_cast<int>(i);
    acc += prior[i];
    if (u < acc && prior[i] > 0.0) return static_cast<int>(i);
  }
  return last_positive;
}

LabeledSample draw_count_sample(const CountModelSpec& spec, int model_index, Rng& rng) {
  LabeledSample s;
  s.model_index = model_index;
  if (model_index == static_cast<int>(CountModel::Poisson)) {
    const double lambda = sample_gamma(spec.poisson_rate_prior, rng);
    s.params = {lambda};
    s.counts = simulate_poisson(lambda, spec.counts_per_sample, rng);
  } else {
    const double k = sample_gamma(spec.nb_shape_prior, rng);
    const double theta = sample_gamma(spec.nb_scale_prior, rng);
    s.params = {k, theta};
    s.counts = simulate_nb(k, theta, spec.counts_per_sample, rng);
  }
  const auto [mean, var] = count_summary(s.counts);
  s.summary = {mean, var};
  return s;
}

LabeledSample draw_count_sample(const CountModelSpec& spec, Rng& rng) {
  const int m = sample_model_index(spec.model_prior, rng);
  return draw_count_sample(spec, m, rng);
}

std::vector<LabeledSample> generate_count_dataset(const CountModelSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw InputError("generate_count_dataset: N must be >= 1");
  std::vector<LabeledSample> out(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = stream(seed, i);
    out[i] = draw_count_sample(spec, rng);
  });
  return out;
}

}  // namespace bmc
