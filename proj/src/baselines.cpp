#include "bmc/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bmc/errors.hpp"
#include "bmc/parallel.hpp"

namespace bmc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::VectorXd counts_summary_vector(std::span<const std::int64_t> x) {
  const auto [mean, var] = count_summary(x);
  Eigen::VectorXd s(2);
  s << mean, var;
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double log_sum_exp(std::span<const double> v) {
  double peak = -INFINITY;
  for (double x : v) peak = std::max(peak, x);
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - peak);
  return peak + std::log(acc);
}

std::size_t categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last;
}

struct Kernel {
  Eigen::MatrixXd chol;  // lower factor of the kernel covariance
  double log_norm = 0.0; // -(d/2) log 2 pi - log det chol
};

Kernel make_kernel(const std::vector<std::vector<double>>& params, const std::vector<double>& w, double scale) {
  const Eigen::Index d = static_cast<Eigen::Index>(params.front().size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  double total = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    mean += w[i] * Eigen::Map<const Eigen::VectorXd>(params[i].data(), d);
    total += w[i];
  }
  mean /= total;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::VectorXd diff = Eigen::Map<const Eigen::VectorXd>(params[i].data(), d) - mean;
    cov += w[i] * diff * diff.transpose();
  }
  cov *= scale / total;
  // keep the kernel proper when the population has collapsed
  const double ridge = 1e-10 * std::max(1.0, cov.diagonal().maxCoeff());
  cov.diagonal().array() += ridge;
  Kernel k;
  k.chol = cov.llt().matrixL();
  k.log_norm = -0.5 * static_cast<double>(d) * kLog2Pi - k.chol.diagonal().array().log().sum();
  return k;
}

double kernel_log_density(const Kernel& k, const Eigen::VectorXd& x, const Eigen::VectorXd& center) {
  const Eigen::VectorXd z = k.chol.triangularView<Eigen::Lower>().solve(x - center);
  return k.log_norm - 0.5 * z.squaredNorm();
}

}  // namespace

std::vector<ModelSimulator> count_simulators(const CountModelSpec& spec) {
  spec.validate();
  const int c = spec.counts_per_sample;
  ModelSimulator poisson{
      [prior = spec.poisson_rate_prior](Rng& rng) { return std::vector<double>{sample_gamma(prior, rng)}; },
      [prior = spec.poisson_rate_prior](std::span<const double> t) { return prior.log_pdf(t[0]); },
      [c](std::span<const double> t, Rng& rng) { return counts_summary_vector(simulate_poisson(t[0], c, rng)); }};
  ModelSimulator nb{
      [k = spec.nb_shape_prior, s = spec.nb_scale_prior](Rng& rng) {
        const double shape = sample_gamma(k, rng);
        return std::vector<double>{shape, sample_gamma(s, rng)};
      },
      [k = spec.nb_shape_prior, s = spec.nb_scale_prior](std::span<const double> t) {
        return k.log_pdf(t[0]) + s.log_pdf(t[1]);
      },
      [c](std::span<const double> t, Rng& rng) { return counts_summary_vector(simulate_nb(t[0], t[1], c, rng)); }};
  return {poisson, nb};
}

SummaryDistance pilot_distance(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                               std::size_t n_pilot, std::uint64_t seed) {
  const auto table = build_reference_table(model_prior, models, n_pilot, seed);
  Eigen::MatrixXd s(static_cast<Eigen::Index>(table.size()), table.summaries.front().size());
  for (std::size_t i = 0; i < table.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = table.summaries[i].transpose();
  return {ZScaler::fit(s)};
}

void RejectionConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("RejectionConfig: epsilon must be >= 0");
  if (simulations < 1) throw ConfigError("RejectionConfig: need at least one simulation");
  if (distance != "euclidean_z") throw ConfigError("RejectionConfig: unknown distance '" + distance + "'");
}

ParamRejectionResult reject_params(const ModelSimulator& model, const Eigen::VectorXd& observed,
                                   const SummaryDistance& distance, const RejectionConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamRejectionResult out;
  for (std::size_t i = 0; i < cfg.simulations; ++i) {
    auto theta = model.sample_prior(rng);
    const Eigen::VectorXd s = model.simulate_summary(theta, rng);
    if (distance(observed, s) <= cfg.epsilon) out.accepted.push_back(std::move(theta));
  }
  out.acceptance_rate = static_cast<double>(out.accepted.size()) / static_cast<double>(cfg.simulations);
  out.none_accepted = out.accepted.empty();
  return out;
}

ReferenceTable build_reference_table(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                                     std::size_t n, std::uint64_t seed) {
  if (model_prior.size() != models.size()) throw InputError("reference table: prior and model list differ in size");
  ReferenceTable t;
  t.models.resize(n);
  t.params.resize(n);
  t.summaries.resize(n);
  const std::vector<double> prior(model_prior.begin(), model_prior.end());
  parallel_for(n, [&](std::size_t i) {
    Rng rng = stream(seed, i);
    const int m = sample_model_index(prior, rng);
    t.models[i] = m;
    t.params[i] = models[static_cast<std::size_t>(m)].sample_prior(rng);
    t.summaries[i] = models[static_cast<std::size_t>(m)].simulate_summary(t.params[i], rng);
  });
  return t;
}

ModelRejectionResult reject_models_from_table(const ReferenceTable& table, std::size_t n_models,
                                              const Eigen::VectorXd& observed, const SummaryDistance& distance,
                                              double epsilon) {
  ModelRejectionResult out;
  out.accepted_per_model.assign(n_models, 0);
  out.simulations = table.size();
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (distance(observed, table.summaries[i]) <= epsilon) {
      ++out.accepted_per_model[static_cast<std::size_t>(table.models[i])];
      ++out.accepted;
    }
  }
  out.undefined = out.accepted == 0;
  if (!out.undefined) {
    out.estimate.resize(n_models);
    for (std::size_t m = 0; m < n_models; ++m)
      out.estimate[m] = static_cast<double>(out.accepted_per_model[m]) / static_cast<double>(out.accepted);
  }
  return out;
}

ModelRejectionResult reject_models(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                                   const Eigen::VectorXd& observed, const SummaryDistance& distance,
                                   const RejectionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto table = build_reference_table(model_prior, models, cfg.simulations, seed);
  return reject_models_from_table(table, models.size(), observed, distance, cfg.epsilon);
}

double epsilon_for_acceptance(const ReferenceTable& table, const std::vector<Eigen::VectorXd>& observations,
                              const SummaryDistance& distance, double fraction) {
  if (observations.empty() || table.size() == 0) throw InputError("epsilon_for_acceptance: empty input");
  std::vector<double> per_obs;
  per_obs.reserve(observations.size());
  std::vector<double> d(table.size());
  for (const auto& obs : observations) {
    for (std::size_t i = 0; i < table.size(); ++i) d[i] = distance(obs, table.summaries[i]);
    const auto rank = static_cast<std::size_t>(std::clamp(fraction, 0.0, 1.0) * static_cast<double>(d.size() - 1));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(rank), d.end());
    per_obs.push_back(d[rank]);
  }
  return median(per_obs);
}

void SmcConfig::validate() const {
  if (rounds < 1) throw ConfigError("SmcConfig: rounds must be >= 1");
  if (particles < 2) throw ConfigError("SmcConfig: need at least two particles");
  if (budget < particles) throw ConfigError("SmcConfig: budget smaller than one population");
  if (!(kernel_scale > 0.0)) throw ConfigError("SmcConfig: kernel scale must be positive");
  if (!(model_jump >= 0.0 && model_jump < 1.0)) throw ConfigError("SmcConfig: model jump must lie in [0, 1)");
}

SmcResult smc_models(std::span<const double> model_prior, const std::vector<ModelSimulator>& models,
                     const Eigen::VectorXd& observed, const SummaryDistance& distance, const SmcConfig& cfg,
                     std::uint64_t seed) {
  cfg.validate();
  const std::size_t M = models.size();
  if (model_prior.size() != M) throw InputError("smc_models: prior and model list differ in size");
  Rng rng(seed);
  SmcResult result;

  std::vector<int> pop_models;
  std::vector<std::vector<double>> pop_params;
  std::vector<double> pop_logw, pop_dist;

  auto finish_round = [&](double epsilon, std::size_t sims) {
    const double lse = log_sum_exp(pop_logw);
    std::vector<double> w(pop_logw.size());
    double sq = 0.0;
    std::vector<double> est(M, 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = std::exp(pop_logw[i] - lse);
      sq += w[i] * w[i];
      est[static_cast<std::size_t>(pop_models[i])] += w[i];
    }
    result.rounds.push_back({epsilon, est, 1.0 / sq, sims});
    result.models = pop_models;
    result.params = pop_params;
    result.weights = w;
  };

  // first population straight from the prior
  std::size_t round_budget = cfg.budget;
  {
    std::size_t sims = 0;
    const std::vector<double> prior(model_prior.begin(), model_prior.end());
    while (pop_models.size() < cfg.particles && sims < round_budget) {
      const int m = sample_model_index(prior, rng);
      auto theta = models[static_cast<std::size_t>(m)].sample_prior(rng);
      const double d = distance(observed, models[static_cast<std::size_t>(m)].simulate_summary(theta, rng));
      ++sims;
      if (d <= cfg.first_epsilon) {
        pop_models.push_back(m);
        pop_params.push_back(std::move(theta));
        pop_logw.push_back(0.0);
        pop_dist.push_back(d);
      }
    }
    result.simulations += sims;
    if (pop_models.empty()) {
      result.degenerate = true;
      result.rounds.push_back({cfg.first_epsilon, std::vector<double>(M, 0.0), 0.0, sims});
      return result;
    }
    finish_round(cfg.first_epsilon, sims);
    if (result.rounds.back().ess < cfg.min_ess) {
      result.degenerate = true;
      return result;
    }
  }

  for (int r = 1; r < cfg.rounds; ++r) {
    const double epsilon = median(pop_dist);
    const std::vector<double> prev_w = result.weights;
    const std::vector<int> prev_models = pop_models;
    const std::vector<std::vector<double>> prev_params = pop_params;

    // per-model populations, normalized weights and kernels
    std::vector<double> model_mass(M, 0.0);
    std::vector<std::vector<std::size_t>> members(M);
    for (std::size_t i = 0; i < prev_w.size(); ++i) {
      model_mass[static_cast<std::size_t>(prev_models[i])] += prev_w[i];
      members[static_cast<std::size_t>(prev_models[i])].push_back(i);
    }
    std::vector<Kernel> kernels(M);
    std::vector<std::vector<double>> member_w(M);
    for (std::size_t m = 0; m < M; ++m) {
      if (members[m].empty()) continue;
      std::vector<std::vector<double>> ps;
      for (auto i : members[m]) {
        ps.push_back(prev_params[i]);
        member_w[m].push_back(prev_w[i] / model_mass[m]);
      }
      kernels[m] = make_kernel(ps, member_w[m], cfg.kernel_scale);
    }
    auto model_kernel = [&](std::size_t to, std::size_t from) {
      if (M == 1) return 1.0;
      return to == from ? 1.0 - cfg.model_jump : cfg.model_jump / static_cast<double>(M - 1);
    };

    // later rounds run until the population is full or the budget is spent
    if (result.simulations >= cfg.budget) break;
    round_budget = cfg.budget - result.simulations;
    std::size_t sims = 0, attempts = 0;
    const std::size_t max_attempts = 100 * std::max<std::size_t>(round_budget, 1);
    pop_models.clear();
    pop_params.clear();
    pop_logw.clear();
    pop_dist.clear();
    while (pop_models.size() < cfg.particles && sims < round_budget && attempts < max_attempts) {
      ++attempts;
      std::size_t m = categorical(model_mass, rng);
      if (M > 1 && cfg.model_jump > 0.0 && rng.uniform() < cfg.model_jump) {
        const std::size_t shift = 1 + rng.below(M - 1);
        m = (m + shift) % M;
      }
      const auto& model = models[m];
      std::vector<double> theta;
      if (members[m].empty()) {
        theta = model.sample_prior(rng);
      } else {
        const std::size_t j = members[m][categorical(member_w[m], rng)];
        const Eigen::Index d = static_cast<Eigen::Index>(prev_params[j].size());
        Eigen::VectorXd z(d);
        for (Eigen::Index i = 0; i < d; ++i) z(i) = rng.normal();
        const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(prev_params[j].data(), d) + kernels[m].chol * z;
        theta.assign(x.data(), x.data() + d);
      }
      const double log_prior = model.log_prior(theta);
      if (!std::isfinite(log_prior)) continue;
      const double dist = distance(observed, model.simulate_summary(theta, rng));
      ++sims;
      if (dist > epsilon) continue;

      double q_model = 0.0;
      for (std::size_t from = 0; from < M; ++from) q_model += model_mass[from] * model_kernel(m, from);
      double log_q_theta;
      if (members[m].empty()) {
        log_q_theta = log_prior;
      } else {
        const Eigen::Map<const Eigen::VectorXd> x(theta.data(), static_cast<Eigen::Index>(theta.size()));
        std::vector<double> terms;
        terms.reserve(members[m].size());
        for (std::size_t a = 0; a < members[m].size(); ++a) {
          const auto& c = prev_params[members[m][a]];
          terms.push_back(std::log(member_w[m][a]) +
                          kernel_log_density(kernels[m], x, Eigen::Map<const Eigen::VectorXd>(c.data(), x.size())));
        }
        log_q_theta = log_sum_exp(terms);
      }
      pop_models.push_back(static_cast<int>(m));
      pop_params.push_back(std::move(theta));
      pop_logw.push_back(std::log(model_prior[m]) + log_prior - std::log(q_model) - log_q_theta);
      pop_dist.push_back(dist);
    }
    result.simulations += sims;
    if (pop_models.size() < cfg.particles / 2) {
      // budget or attempts ran out before a usable population formed: the
      // previous round stands as the answer
      result.degenerate = pop_models.empty() && attempts >= max_attempts;
      pop_models = prev_models;
      pop_params = prev_params;
      break;
    }
    finish_round(epsilon, sims);
    if (result.rounds.back().ess < cfg.min_ess) {
      result.degenerate = true;
      break;
    }
  }
  return result;
}

}  // namespace bmc
