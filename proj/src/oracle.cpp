#include "bmc/oracle.hpp"

#include <algorithm>
#include <boost/math/distributions/gamma.hpp>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "bmc/errors.hpp"

namespace bmc {

namespace {

struct CountHistogram {
  std::vector<std::pair<double, double>> bins;  // (value, multiplicity)
  double n = 0.0;
  double sum = 0.0;
  double log_factorials = 0.0;  // sum_i log x_i!
};

CountHistogram histogram(std::span<const std::int64_t> x) {
  std::map<std::int64_t, std::int64_t> counts;
  for (auto v : x) {
    if (v < 0) throw InputError("count data must be non-negative");
    ++counts[v];
  }
  CountHistogram h;
  for (const auto& [value, mult] : counts) {
    const double v = static_cast<double>(value);
    const double m = static_cast<double>(mult);
    h.bins.emplace_back(v, m);
    h.n += m;
    h.sum += m * v;
    h.log_factorials += m * std::lgamma(v + 1.0);
  }
  return h;
}

// sum_i [log Gamma(x_i + r) - log Gamma(r) - log x_i!], the r-only part of the NB log-likelihood
double nb_shape_term(const CountHistogram& h, double r) {
  double acc = 0.0;
  for (const auto& [v, m] : h.bins) acc += m * std::lgamma(v + r);
  return acc - h.n * std::lgamma(r) - h.log_factorials;
}

std::pair<double, double> quantile_box(const GammaParams& prior, double tail) {
  const boost::math::gamma_distribution<double> dist(prior.shape, prior.scale);
  return {boost::math::quantile(dist, tail), boost::math::quantile(dist, 1.0 - tail)};
}

double prior_mass(const GammaParams& prior, double lo, double hi) {
  const boost::math::gamma_distribution<double> dist(prior.shape, prior.scale);
  return boost::math::cdf(dist, hi) - boost::math::cdf(dist, lo);
}

Eigen::VectorXd linspace(double lo, double hi, int n) { return Eigen::VectorXd::LinSpaced(n, lo, hi); }

double log_sum_exp_weighted(const Eigen::MatrixXd& log_values, const Eigen::VectorXd& row_w,
                            const Eigen::VectorXd& col_w) {
  const double peak = log_values.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < log_values.rows(); ++i)
    for (Eigen::Index j = 0; j < log_values.cols(); ++j)
      acc += row_w(i) * col_w(j) * std::exp(log_values(i, j) - peak);
  return peak + std::log(acc);
}

void check_grid_config(const GridConfig& g) {
  if (g.k_nodes < 3 || g.theta_nodes < 3) throw DomainError("GridConfig: need at least 3 nodes per dimension");
  if (!(g.tail > 0.0) || !(g.tail < 0.5)) throw DomainError("GridConfig: tail must lie in (0, 0.5)");
}

// cumulative trapezoid of samples f on spacing h, normalized to end at 1
Eigen::VectorXd cumulative(const Eigen::VectorXd& f, double h) {
  Eigen::VectorXd c(f.size());
  c(0) = 0.0;
  for (Eigen::Index i = 1; i < f.size(); ++i) c(i) = c(i - 1) + 0.5 * h * (f(i - 1) + f(i));
  const double total = c(c.size() - 1);
  if (total > 0.0) {
    c /= total;
    c(c.size() - 1) = 1.0;
  }
  return c;
}

double invert_cdf(const Eigen::VectorXd& cdf, const Eigen::VectorXd& nodes, double u) {
  const auto* begin = cdf.data();
  const auto* end = cdf.data() + cdf.size();
  auto it = std::upper_bound(begin, end, u);
  Eigen::Index j = std::clamp<Eigen::Index>((it - begin) - 1, 0, cdf.size() - 2);
  // skip flat cells so the draw lands in a cell carrying mass
  while (j + 1 < cdf.size() - 1 && cdf(j + 1) <= u) ++j;
  const double lo = cdf(j), hi = cdf(j + 1);
  const double frac = hi > lo ? std::clamp((u - lo) / (hi - lo), 0.0, 1.0) : 0.5;
  return nodes(j) + frac * (nodes(j + 1) - nodes(j));
}

}  // namespace

Eigen::VectorXd trapezoid_weights(int n, double h) {
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, h);
  w(0) *= 0.5;
  w(n - 1) *= 0.5;
  return w;
}

double poisson_log_evidence(std::span<const std::int64_t> x, const GammaParams& prior) {
  prior.validate();
  if (x.empty()) throw InputError("poisson_log_evidence: empty count vector");
  const auto h = histogram(x);
  const double k = prior.shape, theta = prior.scale;
  return std::lgamma(k + h.sum) - std::lgamma(k) - k * std::log(theta) -
         (k + h.sum) * std::log(h.n + 1.0 / theta) - h.log_factorials;
}

GammaParams poisson_posterior(std::span<const std::int64_t> x, const GammaParams& prior) {
  prior.validate();
  const auto h = histogram(x);
  return {prior.shape + h.sum, 1.0 / (h.n + 1.0 / prior.scale)};
}

double nb_log_likelihood(std::span<const std::int64_t> x, double r, double p) {
  if (!(r > 0.0) || !(p > 0.0) || !(p < 1.0)) throw DomainError("nb_log_likelihood: need r > 0 and 0 < p < 1");
  const auto h = histogram(x);
  return nb_shape_term(h, r) + h.n * r * std::log1p(-p) + h.sum * std::log(p);
}

NbEvidence nb_log_evidence(std::span<const std::int64_t> x, const GammaParams& shape_prior,
                           const GammaParams& scale_prior, const GridConfig& grid) {
  shape_prior.validate();
  scale_prior.validate();
  check_grid_config(grid);
  if (x.empty()) throw InputError("nb_log_evidence: empty count vector");
  const auto h = histogram(x);

  const auto [r_lo, r_hi] = quantile_box(shape_prior, grid.tail);
  const auto [t_lo, t_hi] = quantile_box(scale_prior, grid.tail);
  const double p_lo = t_lo / (1.0 + t_lo), p_hi = t_hi / (1.0 + t_hi);
  const Eigen::VectorXd r = linspace(r_lo, r_hi, grid.k_nodes);
  const Eigen::VectorXd p = linspace(p_lo, p_hi, grid.theta_nodes);

  Eigen::VectorXd row(grid.k_nodes);
  for (int i = 0; i < grid.k_nodes; ++i) row(i) = nb_shape_term(h, r(i)) + shape_prior.log_pdf(r(i));
  Eigen::VectorXd col(grid.theta_nodes), log1mp(grid.theta_nodes);
  for (int j = 0; j < grid.theta_nodes; ++j) {
    log1mp(j) = std::log1p(-p(j));
    // f_theta(p / (1 - p)) / (1 - p)^2
    col(j) = scale_prior.log_pdf(p(j) / (1.0 - p(j))) - 2.0 * log1mp(j) + h.sum * std::log(p(j));
  }
  Eigen::MatrixXd log_integrand(grid.k_nodes, grid.theta_nodes);
  for (int i = 0; i < grid.k_nodes; ++i)
    for (int j = 0; j < grid.theta_nodes; ++j) log_integrand(i, j) = row(i) + col(j) + h.n * r(i) * log1mp(j);

  const double log_z = log_sum_exp_weighted(log_integrand, trapezoid_weights(grid.k_nodes, r(1) - r(0)),
                                            trapezoid_weights(grid.theta_nodes, p(1) - p(0)));
  const double covered = prior_mass(shape_prior, r_lo, r_hi) * prior_mass(scale_prior, t_lo, t_hi);
  return {log_z, covered, covered < 0.999};
}

GridPosterior2D nb_grid_posterior(std::span<const std::int64_t> x, const GammaParams& shape_prior,
                                  const GammaParams& scale_prior, const GridConfig& grid) {
  shape_prior.validate();
  scale_prior.validate();
  check_grid_config(grid);
  const auto h = histogram(x);

  const auto [k_lo, k_hi] = quantile_box(shape_prior, grid.tail);
  const auto [t_lo, t_hi] = quantile_box(scale_prior, grid.tail);
  GridPosterior2D g;
  g.k_grid = linspace(k_lo, k_hi, grid.k_nodes);
  g.theta_grid = linspace(t_lo, t_hi, grid.theta_nodes);
  const double hk = g.k_grid(1) - g.k_grid(0);
  const double ht = g.theta_grid(1) - g.theta_grid(0);

  Eigen::VectorXd row(grid.k_nodes);
  for (int i = 0; i < grid.k_nodes; ++i) row(i) = nb_shape_term(h, g.k_grid(i)) + shape_prior.log_pdf(g.k_grid(i));
  Eigen::VectorXd col(grid.theta_nodes), log1mp(grid.theta_nodes);
  for (int j = 0; j < grid.theta_nodes; ++j) {
    const double theta = g.theta_grid(j);
    const double p = theta / (1.0 + theta);
    log1mp(j) = -std::log1p(theta);
    col(j) = scale_prior.log_pdf(theta) + h.sum * std::log(p);
  }
  g.log_density.resize(grid.k_nodes, grid.theta_nodes);
  for (int i = 0; i < grid.k_nodes; ++i)
    for (int j = 0; j < grid.theta_nodes; ++j)
      g.log_density(i, j) = row(i) + col(j) + h.n * g.k_grid(i) * log1mp(j);

  const Eigen::VectorXd wk = trapezoid_weights(grid.k_nodes, hk);
  const Eigen::VectorXd wt = trapezoid_weights(grid.theta_nodes, ht);
  g.log_density.array() -= log_sum_exp_weighted(g.log_density, wk, wt);

  const Eigen::MatrixXd density = g.log_density.array().exp();
  Eigen::VectorXd marginal(grid.k_nodes);
  g.conditional_theta_cdf.resize(grid.k_nodes, grid.theta_nodes);
  for (int i = 0; i < grid.k_nodes; ++i) {
    marginal(i) = density.row(i).dot(wt);
    g.conditional_theta_cdf.row(i) = cumulative(density.row(i).transpose(), ht).transpose();
  }
  g.marginal_k_cdf = cumulative(marginal, hk);
  const double covered = prior_mass(shape_prior, k_lo, k_hi) * prior_mass(scale_prior, t_lo, t_hi);
  g.coverage_warning = covered < 0.999;
  return g;
}

double GridPosterior2D::total_mass() const {
  const Eigen::VectorXd wk = trapezoid_weights(static_cast<int>(k_grid.size()), k_grid(1) - k_grid(0));
  const Eigen::VectorXd wt = trapezoid_weights(static_cast<int>(theta_grid.size()), theta_grid(1) - theta_grid(0));
  return wk.dot(log_density.array().exp().matrix() * wt);
}

Eigen::VectorXd GridPosterior2D::marginal_k() const {
  const Eigen::VectorXd wt = trapezoid_weights(static_cast<int>(theta_grid.size()), theta_grid(1) - theta_grid(0));
  return log_density.array().exp().matrix() * wt;
}

Eigen::VectorXd GridPosterior2D::marginal_theta() const {
  const Eigen::VectorXd wk = trapezoid_weights(static_cast<int>(k_grid.size()), k_grid(1) - k_grid(0));
  return log_density.array().exp().matrix().transpose() * wk;
}

Eigen::Vector2d GridPosterior2D::mean() const {
  const Eigen::VectorXd wk = trapezoid_weights(static_cast<int>(k_grid.size()), k_grid(1) - k_grid(0));
  const Eigen::VectorXd wt = trapezoid_weights(static_cast<int>(theta_grid.size()), theta_grid(1) - theta_grid(0));
  return {marginal_k().cwiseProduct(wk).dot(k_grid), marginal_theta().cwiseProduct(wt).dot(theta_grid)};
}

Eigen::Matrix2d GridPosterior2D::covariance() const {
  const Eigen::VectorXd wk = trapezoid_weights(static_cast<int>(k_grid.size()), k_grid(1) - k_grid(0));
  const Eigen::VectorXd wt = trapezoid_weights(static_cast<int>(theta_grid.size()), theta_grid(1) - theta_grid(0));
  const Eigen::Vector2d mu = mean();
  const Eigen::MatrixXd density = log_density.array().exp();
  Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
  for (Eigen::Index i = 0; i < k_grid.size(); ++i)
    for (Eigen::Index j = 0; j < theta_grid.size(); ++j) {
      const double w = wk(i) * wt(j) * density(i, j);
      const double dk = k_grid(i) - mu(0), dt = theta_grid(j) - mu(1);
      c(0, 0) += w * dk * dk;
      c(0, 1) += w * dk * dt;
      c(1, 1) += w * dt * dt;
    }
  c(1, 0) = c(0, 1);
  return c;
}

double GridPosterior2D::log_pdf(double k, double theta) const {
  const Eigen::Index nk = k_grid.size(), nt = theta_grid.size();
  if (k < k_grid(0) || k > k_grid(nk - 1) || theta < theta_grid(0) || theta > theta_grid(nt - 1)) return -INFINITY;
  const double hk = k_grid(1) - k_grid(0), ht = theta_grid(1) - theta_grid(0);
  const Eigen::Index i = std::min<Eigen::Index>(static_cast<Eigen::Index>((k - k_grid(0)) / hk), nk - 2);
  const Eigen::Index j = std::min<Eigen::Index>(static_cast<Eigen::Index>((theta - theta_grid(0)) / ht), nt - 2);
  const double a = (k - k_grid(i)) / hk, b = (theta - theta_grid(j)) / ht;
  const double v = (1 - a) * (1 - b) * std::exp(log_density(i, j)) + a * (1 - b) * std::exp(log_density(i + 1, j)) +
                   (1 - a) * b * std::exp(log_density(i, j + 1)) + a * b * std::exp(log_density(i + 1, j + 1));
  return std::log(v);
}

void GridPosterior2D::validate() const {
  if (k_grid.size() < 2 || theta_grid.size() < 2) throw InputError("GridPosterior2D: grid too small");
  if (log_density.rows() != k_grid.size() || log_density.cols() != theta_grid.size() ||
      conditional_theta_cdf.rows() != k_grid.size() || conditional_theta_cdf.cols() != theta_grid.size() ||
      marginal_k_cdf.size() != k_grid.size())
    throw InputError("GridPosterior2D: inconsistent table shapes");
  for (Eigen::Index i = 1; i < k_grid.size(); ++i)
    if (!(k_grid(i) > k_grid(i - 1))) throw InputError("GridPosterior2D: k grid not strictly increasing");
  for (Eigen::Index i = 1; i < theta_grid.size(); ++i)
    if (!(theta_grid(i) > theta_grid(i - 1))) throw InputError("GridPosterior2D: theta grid not strictly increasing");
}

std::vector<Eigen::Vector2d> grid_sample(const GridPosterior2D& g, std::size_t n, Rng& rng) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(n);
  const Eigen::Index nk = g.k_grid.size();
  const double hk = g.k_grid(1) - g.k_grid(0);
  for (std::size_t s = 0; s < n; ++s) {
    const double k = invert_cdf(g.marginal_k_cdf, g.k_grid, rng.uniform());
    // conditional table of the nearest node that carries mass
    Eigen::Index i = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::lround((k - g.k_grid(0)) / hk)), 0, nk - 1);
    if (g.conditional_theta_cdf(i, g.theta_grid.size() - 1) <= 0.0) {
      const Eigen::Index lo = std::clamp<Eigen::Index>(static_cast<Eigen::Index>((k - g.k_grid(0)) / hk), 0, nk - 1);
      i = (lo == i) ? std::min(lo + 1, nk - 1) : lo;
    }
    const Eigen::VectorXd cdf = g.conditional_theta_cdf.row(i).transpose();
    const double theta = invert_cdf(cdf, g.theta_grid, rng.uniform());
    out.emplace_back(k, theta);
  }
  return out;
}

namespace {
constexpr char kGridMagic[8] = {'B', 'M', 'C', 'G', 'R', 'I', 'D', '1'};

void write_array(std::ofstream& os, const double* data, std::size_t n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}
void read_array(std::ifstream& is, double* data, std::size_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}
}  // namespace

void save_grid(const GridPosterior2D& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write grid file " + path);
  os.write(kGridMagic, sizeof(kGridMagic));
  const std::int64_t dims[3] = {g.k_grid.size(), g.theta_grid.size(), g.coverage_warning ? 1 : 0};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  write_array(os, g.k_grid.data(), g.k_grid.size());
  write_array(os, g.theta_grid.data(), g.theta_grid.size());
  // matrices stored row-major
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ld = g.log_density;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cc = g.conditional_theta_cdf;
  write_array(os, ld.data(), ld.size());
  write_array(os, g.marginal_k_cdf.data(), g.marginal_k_cdf.size());
  write_array(os, cc.data(), cc.size());
  if (!os) throw IoError("short write to grid file " + path);
}

GridPosterior2D load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read grid file " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kGridMagic, sizeof(magic)) != 0) throw IoError(path + " is not a grid posterior file");
  std::int64_t dims[3];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!is || dims[0] < 2 || dims[1] < 2 || dims[0] > (1 << 20) || dims[1] > (1 << 20))
    throw IoError(path + ": corrupt grid header");
  GridPosterior2D g;
  g.k_grid.resize(dims[0]);
  g.theta_grid.resize(dims[1]);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ld(dims[0], dims[1]), cc(dims[0], dims[1]);
  g.marginal_k_cdf.resize(dims[0]);
  read_array(is, g.k_grid.data(), g.k_grid.size());
  read_array(is, g.theta_grid.data(), g.theta_grid.size());
  read_array(is, ld.data(), ld.size());
  read_array(is, g.marginal_k_cdf.data(), g.marginal_k_cdf.size());
  read_array(is, cc.data(), cc.size());
  if (!is) throw IoError(path + ": truncated grid file");
  g.log_density = ld;
  g.conditional_theta_cdf = cc;
  g.coverage_warning = dims[2] != 0;
  g.validate();
  return g;
}

std::vector<double> posterior_from_log_evidence(std::span<const double> log_evidence, std::span<const double> prior) {
  if (log_evidence.size() != prior.size()) throw InputError("posterior_from_log_evidence: size mismatch");
  std::vector<double> joint(prior.size());
  double peak = -INFINITY;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    joint[i] = prior[i] > 0.0 ? log_evidence[i] + std::log(prior[i]) : -INFINITY;
    peak = std::max(peak, joint[i]);
  }
  if (!std::isfinite(peak)) throw InputError("posterior_from_log_evidence: no model has positive joint mass");
  double total = 0.0;
  for (double& j : joint) {
    j = std::exp(j - peak);
    total += j;
  }
  for (double& j : joint) j /= total;
  return joint;
}

std::vector<double> model_posterior_exact(std::span<const std::int64_t> x, const CountModelSpec& spec,
                                          const GridConfig& grid) {
  spec.validate();
  const double log_ev[2] = {
      spec.model_prior[0] > 0.0 ? poisson_log_evidence(x, spec.poisson_rate_prior) : 0.0,
      spec.model_prior[1] > 0.0 ? nb_log_evidence(x, spec.nb_shape_prior, spec.nb_scale_prior, grid).log_evidence
                                : 0.0};
  return posterior_from_log_evidence(log_ev, spec.model_prior);
}

}  // namespace bmc
