#include "bmc/validation.hpp"

#include <algorithm>
#include <boost/math/distributions/gamma.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>

#include "bmc/errors.hpp"
#include "bmc/parallel.hpp"

namespace bmc {

namespace {

Eigen::VectorXd trapezoid_on(const Eigen::VectorXd& axis) {
  const Eigen::Index n = axis.size();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double h = axis(i + 1) - axis(i);
    w(i) += 0.5 * h;
    w(i + 1) += 0.5 * h;
  }
  return w;
}

std::string ensure_dir(const std::string& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create directory '" + directory + "': " + ec.message());
  return directory;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace

Density gamma_density(const GammaParams& g) {
  g.validate();
  return {[g](const Eigen::VectorXd& x) { return g.log_pdf(x(0)); },
          [g](Rng& rng) {
            Eigen::VectorXd v(1);
            v(0) = sample_gamma(g, rng);
            return v;
          }};
}

Density mog_density(const MoGPosterior& q) {
  q.validate();
  return {[q](const Eigen::VectorXd& x) { return mog_log_density(q, x); }, [q](Rng& rng) { return q.sample(rng); }};
}

QuadratureGrid gamma_grid(const GammaParams& g, int nodes, double tail) {
  g.validate();
  if (nodes < 2) throw InputError("gamma_grid: need at least two nodes");
  const boost::math::gamma_distribution<double> dist(g.shape, g.scale);
  const double lo = boost::math::quantile(dist, tail);
  const double hi = boost::math::quantile(boost::math::complement(dist, tail));
  return {{Eigen::VectorXd::LinSpaced(nodes, lo, hi)}};
}

KlResult kl_quadrature(const Density& p, const Density& q, const QuadratureGrid& grid) {
  if (grid.axes.empty() || grid.axes.size() > 2) throw InputError("kl_quadrature: grid must be 1-D or 2-D");
  const Eigen::VectorXd w0 = trapezoid_on(grid.axes[0]);
  const Eigen::VectorXd w1 = grid.axes.size() == 2 ? trapezoid_on(grid.axes[1]) : Eigen::VectorXd::Ones(1);
  const Eigen::Index d = static_cast<Eigen::Index>(grid.axes.size());
  double mass = 0.0, acc = 0.0;
  KlResult r;
  Eigen::VectorXd x(d);
  for (Eigen::Index i = 0; i < w0.size(); ++i) {
    x(0) = grid.axes[0](i);
    for (Eigen::Index j = 0; j < w1.size(); ++j) {
      if (d == 2) x(1) = grid.axes[1](j);
      const double lp = p.log_pdf(x);
      if (!(lp > -std::numeric_limits<double>::infinity())) continue;
      const double pw = w0(i) * w1(j) * std::exp(lp);
      if (pw == 0.0) continue;
      const double lq = q.log_pdf(x);
      if (!(lq > -std::numeric_limits<double>::infinity())) {
        r.infinite = true;
        r.value = std::numeric_limits<double>::infinity();
        return r;
      }
      mass += pw;
      acc += pw * (lp - lq);
    }
  }
  if (!(mass > 0.0)) throw DomainError("kl_quadrature: p has no mass on the grid");
  r.value = acc / mass;
  return r;
}

KlResult kl_monte_carlo(const Density& p, const Density& q, std::size_t n, Rng& rng) {
  if (!p.sample) throw InputError("kl_monte_carlo: p is not sampleable");
  if (n < 2) throw InputError("kl_monte_carlo: need at least two draws");
  double mean = 0.0, m2 = 0.0;
  KlResult r;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd x = p.sample(rng);
    const double lq = q.log_pdf(x);
    if (!(lq > -std::numeric_limits<double>::infinity())) {
      r.infinite = true;
      r.value = std::numeric_limits<double>::infinity();
      return r;
    }
    const double t = p.log_pdf(x) - lq;
    const double delta = t - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (t - mean);
  }
  r.value = mean;
  r.std_error = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  return r;
}

KlResult kl_divergence(const Density& p, const Density& q, KlMode mode, std::size_t n, const QuadratureGrid* grid,
                       Rng* rng) {
  if (mode == KlMode::Quadrature) {
    if (!grid) throw InputError("kl_divergence: quadrature mode needs a grid");
    return kl_quadrature(p, q, *grid);
  }
  if (!rng) throw InputError("kl_divergence: Monte Carlo mode needs a random stream");
  return kl_monte_carlo(p, q, n, *rng);
}

NormalizedKl normalized_kl(const Density& exact, const Density& estimate, const Density& prior,
                           const QuadratureGrid& grid) {
  const KlResult den = kl_quadrature(exact, prior, grid);
  NormalizedKl out;
  if (den.infinite || den.value < 1e-8) {
    out.undefined = true;
    out.value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const KlResult num = kl_quadrature(exact, estimate, grid);
  out.value = num.infinite ? std::numeric_limits<double>::infinity() : num.value / den.value;
  return out;
}

Posterior1D gamma_posterior_1d(const GammaParams& g) {
  g.validate();
  const boost::math::gamma_distribution<double> dist(g.shape, g.scale);
  return {[dist](double x) { return x <= 0.0 ? 0.0 : boost::math::cdf(dist, x); },
          [dist](double u) {
            if (u <= 0.0) return 0.0;
            if (u >= 1.0) return std::numeric_limits<double>::infinity();
            return boost::math::quantile(dist, u);
          }};
}

Posterior1D mog_posterior_1d(const MoGPosterior::Marginal& m) {
  return {[m](double x) { return m.cdf(x); },
          [m](double u) {
            if (u <= 0.0) return -std::numeric_limits<double>::infinity();
            if (u >= 1.0) return std::numeric_limits<double>::infinity();
            return m.quantile(u);
          }};
}

double ks_uniform(std::vector<double> values) {
  if (values.empty()) throw InputError("ks_uniform: empty sample");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = std::clamp(values[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - u, u - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_1pct(std::size_t n) {
  if (n == 0) throw InputError("ks_critical_1pct: n must be positive");
  const double sn = std::sqrt(static_cast<double>(n));
  return 1.628 / (sn + 0.12 + 0.11 / sn);
}

QuantileReport quantile_check(std::span<const Posterior1D> posteriors, std::span<const double> truths) {
  if (posteriors.size() != truths.size()) throw InputError("quantile_check: posterior and truth counts differ");
  QuantileReport r;
  r.quantiles.resize(truths.size());
  parallel_for(truths.size(), [&](std::size_t i) { r.quantiles[i] = posteriors[i].cdf(truths[i]); });
  r.ks = ks_uniform(r.quantiles);
  r.ks_critical = ks_critical_1pct(truths.size());
  return r;
}

std::vector<double> credible_coverage(std::span<const Posterior1D> posteriors, std::span<const double> truths,
                                      std::span<const double> levels) {
  if (posteriors.size() != truths.size()) throw InputError("credible_coverage: posterior and truth counts differ");
  if (truths.empty()) throw InputError("credible_coverage: empty test set");
  for (double g : levels)
    if (!(g >= 0.0 && g <= 1.0)) throw InputError("credible_coverage: levels must lie in [0, 1]");
  std::vector<std::vector<char>> inside(levels.size(), std::vector<char>(truths.size(), 0));
  parallel_for(truths.size(), [&](std::size_t i) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const double g = levels[l];
      if (g <= 0.0) continue;
      if (g >= 1.0) {
        inside[l][i] = 1;
        continue;
      }
      const double lo = posteriors[i].quantile(0.5 * (1.0 - g));
      const double hi = posteriors[i].quantile(0.5 * (1.0 + g));
      inside[l][i] = truths[i] >= lo && truths[i] <= hi;
    }
  });
  std::vector<double> out(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l)
    out[l] = static_cast<double>(std::count(inside[l].begin(), inside[l].end(), 1)) /
             static_cast<double>(truths.size());
  return out;
}

std::vector<double> default_levels() {
  std::vector<double> v;
  for (int i = 1; i <= 9; ++i) v.push_back(0.1 * i);
  return v;
}

Eigen::MatrixXd mog_total_covariance(const MoGPosterior& q) {
  const Eigen::VectorXd mu = q.mean();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(q.dim(), q.dim());
  for (int k = 0; k < q.components(); ++k) {
    const Eigen::VectorXd m = q.means.row(k).transpose();
    s += q.weights(k) * (q.component_covariance(k) + m * m.transpose());
  }
  return s - mu * mu.transpose();
}

double axis_angle_deg(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return std::acos(std::min(1.0, c)) * 180.0 / std::numbers::pi;
}

namespace {

// eigenvalues descending, vectors as matching columns
std::pair<Eigen::Vector2d, Eigen::Matrix2d> sorted_eigen(const Eigen::Matrix2d& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(s);
  Eigen::Vector2d values(es.eigenvalues()(1), es.eigenvalues()(0));
  Eigen::Matrix2d vectors;
  vectors.col(0) = es.eigenvectors().col(1);
  vectors.col(1) = es.eigenvectors().col(0);
  return {values, vectors};
}

std::pair<Eigen::Vector2d, Eigen::Vector2d> projected_moments(const Eigen::MatrixXd& samples,
                                                              const Eigen::Matrix2d& axes) {
  const Eigen::MatrixXd proj = samples * axes;  // n x 2
  const Eigen::Vector2d mean = proj.colwise().mean().transpose();
  const Eigen::MatrixXd c = proj.rowwise() - mean.transpose();
  const Eigen::Vector2d var = c.colwise().squaredNorm().transpose() / static_cast<double>(samples.rows() - 1);
  return {mean, var};
}

Eigen::Matrix2d sample_covariance(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

}  // namespace

EigenCheck eigen_check(const Eigen::MatrixXd& exact_samples, const MoGPosterior& q, std::size_t n, Rng& rng) {
  if (exact_samples.cols() != 2 || q.dim() != 2) throw InputError("eigen_check: two-dimensional posteriors only");
  if (exact_samples.rows() < 3 || n < 3) throw InputError("eigen_check: too few samples");
  EigenCheck r;
  const auto [est_values, est_vectors] = sorted_eigen(mog_total_covariance(q));
  const auto [exact_values, exact_vectors] = sorted_eigen(sample_covariance(exact_samples));
  r.estimated_values = est_values;
  r.estimated_vectors = est_vectors;
  r.exact_values = exact_values;

  Eigen::MatrixXd drawn(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < drawn.rows(); ++i) drawn.row(i) = q.sample(rng).transpose();
  std::tie(r.exact_proj_mean, r.exact_proj_var) = projected_moments(exact_samples, est_vectors);
  std::tie(r.estimated_proj_mean, r.estimated_proj_var) = projected_moments(drawn, est_vectors);
  r.variance_ratio = r.exact_proj_var.cwiseQuotient(exact_values);

  if (est_values(1) <= 0.0 || est_values(0) / est_values(1) < 1.05) {
    r.undefined = true;
    r.angle_deg = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.angle_deg = axis_angle_deg(est_vectors.col(0), exact_vectors.col(0));
  }
  return r;
}

std::vector<PriorConsistencyRow> prior_consistency(const CountScenario& scenario, std::span<const double> priors,
                                                   std::size_t n_train, std::size_t n_test,
                                                   const std::vector<int>& hidden, const TrainConfig& cfg,
                                                   std::uint64_t seed) {
  std::vector<PriorConsistencyRow> rows;
  for (std::size_t p = 0; p < priors.size(); ++p) {
    const double pi0 = priors[p];
    if (!(pi0 >= 0.0 && pi0 <= 1.0)) throw InputError("prior_consistency: prior outside [0, 1]");
    const CountModelSpec spec = make_count_spec(scenario, {pi0, 1.0 - pi0});
    const auto train = generate_count_dataset(spec, n_train, derive_seed(seed, 2 * p));
    const auto test = generate_count_dataset(spec, n_test, derive_seed(seed, 2 * p + 1));
    Eigen::MatrixXd s(static_cast<Eigen::Index>(train.size()), 2);
    std::vector<int> labels(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      s.row(static_cast<Eigen::Index>(i)) << train[i].summary[0], train[i].summary[1];
      labels[i] = train[i].model_index;
    }
    TrainConfig c = cfg;
    c.seed = derive_seed(cfg.seed, p);
    const ClassifierModel model = fit_classifier(s, labels, hidden, c);
    double acc = 0.0;
    for (const auto& t : test) {
      Eigen::VectorXd v(2);
      v << t.summary[0], t.summary[1];
      acc += model.predict(v)(0);
    }
    rows.push_back({pi0, acc / static_cast<double>(test.size())});
  }
  return rows;
}

std::vector<MethodScore> compare_methods(std::span<const MethodOutput> methods, const Eigen::MatrixXd& reference,
                                         std::span<const int> labels) {
  std::vector<MethodScore> out;
  for (const auto& m : methods) {
    const Eigen::Index n = m.probabilities.rows();
    if (static_cast<std::size_t>(n) != labels.size())
      throw InputError("compare_methods: method '" + m.method + "' covers a different test set");
    if (reference.size() > 0 && (reference.rows() != n || reference.cols() != m.probabilities.cols()))
      throw InputError("compare_methods: reference shape mismatch for '" + m.method + "'");
    MethodScore s{m.method, std::numeric_limits<double>::quiet_NaN(), 0.0, static_cast<std::size_t>(n)};
    if (reference.size() > 0)
      s.mae = (m.probabilities - reference).cwiseAbs().rowwise().mean().mean();
    double ce = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int label = labels[static_cast<std::size_t>(i)];
      if (label < 0 || label >= m.probabilities.cols()) throw InputError("compare_methods: label out of range");
      ce -= std::log(std::max(m.probabilities(i, label), kProbabilityFloor));
    }
    s.cross_entropy = n > 0 ? ce / static_cast<double>(n) : 0.0;
    out.push_back(s);
  }
  return out;
}

void CalibrationReport::validate() const {
  for (double q : quantiles)
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("calibration report: quantile outside [0, 1]");
  for (double c : coverage)
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("calibration report: coverage outside [0, 1]");
  if (levels.size() != coverage.size()) throw DomainError("calibration report: levels and coverage differ in size");
}

namespace {

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json array_of(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(finite_or_null(x));
  return a;
}

std::string column_tsv(const std::string& header, const std::vector<double>& v) {
  std::string out = "index\t" + header + "\n";
  char buf[64];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", i, v[i]);
    out += buf;
  }
  return out;
}

}  // namespace

std::string CalibrationReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["quantiles"] = array_of(quantiles);
  j["ks"] = finite_or_null(ks);
  j["ks_critical"] = finite_or_null(ks_critical);
  j["levels"] = array_of(levels);
  j["coverage"] = array_of(coverage);
  j["normalized_kl"] = array_of(normalized_kl);
  j["eigen_angles"] = array_of(eigen_angles);
  if (!normalized_kl.empty()) j["median_normalized_kl"] = finite_or_null(median_of(normalized_kl));
  if (!eigen_angles.empty()) j["median_eigen_angle"] = finite_or_null(median_of(eigen_angles));
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : methods)
    ms.push_back({{"method", m.method}, {"mae", finite_or_null(m.mae)}, {"cross_entropy", finite_or_null(m.cross_entropy)},
                  {"n", m.n}});
  j["methods"] = ms;
  return j.dump(2) + "\n";
}

void CalibrationReport::write(const std::string& directory) const {
  validate();
  const std::string dir = ensure_dir(directory);
  const std::string stem = dir + "/" + (name.empty() ? std::string("calibration") : name);
  write_text(stem + "_report.json", to_json());
  if (!quantiles.empty()) write_text(stem + "_quantiles.tsv", column_tsv("quantile", quantiles));
  if (!coverage.empty()) {
    std::string t = "level\tcoverage\n";
    char buf[96];
    for (std::size_t i = 0; i < levels.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g\t%.17g\n", levels[i], coverage[i]);
      t += buf;
    }
    write_text(stem + "_coverage.tsv", t);
  }
  if (!normalized_kl.empty()) write_text(stem + "_normalized_kl.tsv", column_tsv("normalized_kl", normalized_kl));
  if (!eigen_angles.empty()) write_text(stem + "_eigen_angles.tsv", column_tsv("angle_deg", eigen_angles));
  if (!methods.empty()) {
    std::string t = "method\tmae\tcross_entropy\tn\n";
    char buf[160];
    for (const auto& m : methods) {
      std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\t%zu\n", m.mae, m.cross_entropy, m.n);
      t += m.method + buf;
    }
    write_text(stem + "_methods.tsv", t);
  }
}

double median_of(std::vector<double> v) {
  std::erase_if(v, [](double x) { return std::isnan(x); });
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace bmc
