#include "bmc/mdn.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bmc/errors.hpp"

namespace bmc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_sum_exp(const Eigen::VectorXd& v) {
  const double peak = v.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  return peak + std::log((v.array() - peak).exp().sum());
}

DenseLayer init_layer(int in, int out, Rng& rng, double scale = 1.0) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
  for (Eigen::Index c = 0; c < l.W.cols(); ++c)
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) l.W(r, c) = bound * (2.0 * rng.uniform() - 1.0);
  for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b(r) = bound * (2.0 * rng.uniform() - 1.0);
  return l;
}

FeedforwardNet make_trunk(int input_dim, const std::vector<int>& hidden, Rng& rng) {
  if (hidden.empty()) throw DomainError("network needs at least one hidden layer");
  FeedforwardNet net;
  int in = input_dim;
  for (int h : hidden) {
    if (h <= 0 || in <= 0) throw DomainError("layer sizes must be positive");
    net.layers.push_back(init_layer(in, h, rng));
    in = h;
  }
  return net;
}

// Forward pass keeping every activation; acts[0] is the input (in x B).
std::vector<Eigen::MatrixXd> trunk_activations(const FeedforwardNet& net, const Eigen::MatrixXd& inputs_cols) {
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(net.layers.size() + 1);
  acts.push_back(inputs_cols);
  for (const auto& l : net.layers) {
    Eigen::MatrixXd z = l.W * acts.back();
    z.colwise() += l.b;
    acts.push_back(z.array().tanh().matrix());
  }
  return acts;
}

void trunk_backward(const FeedforwardNet& net, const std::vector<Eigen::MatrixXd>& acts, Eigen::MatrixXd d_top,
                    FeedforwardNet& grad) {
  grad.layers.resize(net.layers.size());
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Eigen::MatrixXd dz = d_top.cwiseProduct((1.0 - acts[li + 1].array().square()).matrix());
    grad.layers[li].W = dz * acts[li].transpose();
    grad.layers[li].b = dz.rowwise().sum();
    if (li > 0) d_top = net.layers[li].W.transpose() * dz;
  }
}

Eigen::MatrixXd as_columns(const Eigen::MatrixXd& rows, int expected_dim) {
  if (rows.cols() != expected_dim)
    throw InputError("input dimension " + std::to_string(rows.cols()) + " does not match network input " +
                     std::to_string(expected_dim));
  return rows.transpose();
}

MoGPosterior decode_mog(const MoGHead& head, const Eigen::VectorXd& o) {
  const int K = head.components, d = head.dim, T = d * (d - 1) / 2;
  MoGPosterior q;
  const Eigen::VectorXd logits = o.head(K);
  q.weights = (logits.array() - log_sum_exp(logits)).exp();
  q.means.resize(K, d);
  q.precision_factors.assign(static_cast<std::size_t>(K), Eigen::MatrixXd::Zero(d, d));
  for (int k = 0; k < K; ++k) {
    auto& U = q.precision_factors[static_cast<std::size_t>(k)];
    for (int i = 0; i < d; ++i) {
      q.means(k, i) = o(K + k * d + i);
      U(i, i) = std::exp(o(K + K * d + k * d + i));
    }
    int t = 0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) U(i, j) = o(K + 2 * K * d + k * T + t++);
  }
  return q;
}

template <class Head>
void visit_tensors(Mdn<Head>& net, auto&& f) {
  for (auto& l : net.trunk.layers) {
    f(l.W.data(), l.W.size());
    f(l.b.data(), l.b.size());
  }
  f(net.head.out.W.data(), net.head.out.W.size());
  f(net.head.out.b.data(), net.head.out.b.size());
}

double params_norm(const Eigen::VectorXd& p) { return p.norm(); }

template <class Net, class LossFn>
TrainResult run_training(Net& net, std::size_t n, const TrainConfig& cfg, LossFn&& loss_and_grad) {
  cfg.validate();
  if (n == 0) throw InputError("training set is empty");
  const int batch = cfg.resolved_batch_size(n);
  Eigen::VectorXd params = pack(net);
  Adam adam(params.size(), cfg);
  Rng shuffle = stream(cfg.seed, 0x5348554646ULL);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainResult result;
  Net grad = net;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const double loss = loss_and_grad(net, idx, grad);
      const Eigen::VectorXd g = pack(grad);
      if (!std::isfinite(loss) || !g.allFinite()) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << " batch " << batches << ": loss=" << loss
           << " parameter norm=" << params_norm(params) << " gradient norm=" << g.norm();
        throw DivergenceError(os.str());
      }
      adam.step(params, g);
      unpack(params, net);
      epoch_sum += loss;
      ++batches;
    }
    result.epoch_loss.push_back(epoch_sum / batches);
  }
  return result;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

std::vector<int> FeedforwardNet::sizes() const {
  std::vector<int> s{input_dim()};
  for (const auto& l : layers) s.push_back(static_cast<int>(l.W.rows()));
  return s;
}

void FeedforwardNet::validate() const {
  if (layers.empty()) throw InputError("FeedforwardNet: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].b.size() != layers[i].W.rows()) throw InputError("FeedforwardNet: bias size mismatch");
    if (i > 0 && layers[i].W.cols() != layers[i - 1].W.rows())
      throw InputError("FeedforwardNet: incompatible consecutive layer sizes");
  }
}

Eigen::MatrixXd FeedforwardNet::forward(const Eigen::MatrixXd& inputs) const {
  return trunk_activations(*this, inputs).back();
}

Eigen::MatrixXd MoGPosterior::component_covariance(int k) const {
  const auto& U = precision_factors[static_cast<std::size_t>(k)];
  const Eigen::MatrixXd Uinv = U.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(dim(), dim()));
  return Uinv * Uinv.transpose();
}

Eigen::VectorXd MoGPosterior::mean() const { return means.transpose() * weights; }

Eigen::MatrixXd MoGPosterior::covariance() const {
  const Eigen::VectorXd mu = mean();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim(), dim());
  for (int k = 0; k < components(); ++k) {
    const Eigen::VectorXd m = means.row(k).transpose();
    c += weights(k) * (component_covariance(k) + m * m.transpose());
  }
  return c - mu * mu.transpose();
}

Eigen::VectorXd MoGPosterior::sample(Rng& rng) const {
  const double u = rng.uniform();
  int k = 0;
  double acc = weights(0);
  while (u >= acc && k + 1 < components()) acc += weights(++k);
  Eigen::VectorXd z(dim());
  for (int i = 0; i < dim(); ++i) z(i) = rng.normal();
  const auto& U = precision_factors[static_cast<std::size_t>(k)];
  return means.row(k).transpose() + U.triangularView<Eigen::Upper>().solve(z);
}

MoGPosterior::Marginal MoGPosterior::marginal(int i) const {
  Marginal m{weights, means.col(i), Eigen::VectorXd(components())};
  for (int k = 0; k < components(); ++k) m.stds(k) = std::sqrt(component_covariance(k)(i, i));
  return m;
}

void MoGPosterior::validate() const {
  const int K = components(), d = dim();
  if (K < 1 || means.rows() != K || static_cast<int>(precision_factors.size()) != K)
    throw InputError("MoGPosterior: inconsistent component count");
  if (std::fabs(weights.sum() - 1.0) > 1e-9 || (weights.array() < 0.0).any())
    throw InputError("MoGPosterior: weights must be a probability vector");
  for (const auto& U : precision_factors) {
    if (U.rows() != d || U.cols() != d) throw InputError("MoGPosterior: precision factor has wrong shape");
    for (int i = 0; i < d; ++i) {
      if (!(U(i, i) > 0.0)) throw InputError("MoGPosterior: precision factor diagonal must be positive");
      for (int j = 0; j < i; ++j)
        if (U(i, j) != 0.0) throw InputError("MoGPosterior: precision factor must be upper triangular");
    }
  }
}

double MoGPosterior::Marginal::cdf(double x) const {
  double c = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) c += weights(k) * normal_cdf((x - means(k)) / stds(k));
  return c;
}

double MoGPosterior::Marginal::log_pdf(double x) const {
  Eigen::VectorXd terms(weights.size());
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    const double z = (x - means(k)) / stds(k);
    terms(k) = std::log(weights(k)) - 0.5 * kLog2Pi - std::log(stds(k)) - 0.5 * z * z;
  }
  return log_sum_exp(terms);
}

double MoGPosterior::Marginal::mean() const { return weights.dot(means); }

double MoGPosterior::Marginal::std() const {
  const double mu = mean();
  double second = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) second += weights(k) * (stds(k) * stds(k) + means(k) * means(k));
  return std::sqrt(std::max(second - mu * mu, 0.0));
}

double MoGPosterior::Marginal::quantile(double u) const {
  if (u <= 0.0) return -INFINITY;
  if (u >= 1.0) return INFINITY;
  const double mu = mean(), sd = std();
  double lo = mu - 10.0 * sd, hi = mu + 10.0 * sd;
  while (cdf(lo) > u) lo -= 10.0 * sd;
  while (cdf(hi) < u) hi += 10.0 * sd;
  for (int it = 0; it < 200 && hi - lo > 1e-8; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double mog_log_density(const MoGPosterior& q, const Eigen::VectorXd& theta) {
  if (theta.size() != q.dim()) throw InputError("mog_log_density: dimension mismatch");
  Eigen::VectorXd terms(q.components());
  for (int k = 0; k < q.components(); ++k) {
    const auto& U = q.precision_factors[static_cast<std::size_t>(k)];
    const Eigen::VectorXd z = U.triangularView<Eigen::Upper>() * (theta - q.means.row(k).transpose());
    terms(k) = std::log(q.weights(k)) - 0.5 * q.dim() * kLog2Pi + U.diagonal().array().log().sum() - 0.5 * z.squaredNorm();
  }
  return log_sum_exp(terms);
}

MoGPosterior mog_to_original_scale(const MoGPosterior& q, const ZScaler& scaler) {
  if (scaler.dim() != q.dim()) throw InputError("mog_to_original_scale: dimension mismatch");
  MoGPosterior out = q;
  for (int k = 0; k < q.components(); ++k) {
    out.means.row(k) = (q.means.row(k).transpose().cwiseProduct(scaler.stds) + scaler.means).transpose();
    // precision D^-1 U^T U D^-1 -> factor U D^-1
    out.precision_factors[static_cast<std::size_t>(k)] =
        q.precision_factors[static_cast<std::size_t>(k)] * scaler.stds.cwiseInverse().asDiagonal();
  }
  return out;
}

ClassifierNet make_classifier(int input_dim, const std::vector<int>& hidden, int n_models, std::uint64_t seed) {
  if (n_models < 2) throw DomainError("classifier needs at least two models");
  Rng rng(seed);
  ClassifierNet net;
  net.trunk = make_trunk(input_dim, hidden, rng);
  net.head.out = init_layer(hidden.back(), n_models, rng);
  return net;
}

MogNet make_mog(int input_dim, const std::vector<int>& hidden, int components, int dim, std::uint64_t seed) {
  if (components < 1 || dim < 1) throw DomainError("MoG head needs K >= 1 and d >= 1");
  Rng rng(seed);
  MogNet net;
  net.trunk = make_trunk(input_dim, hidden, rng);
  net.head.components = components;
  net.head.dim = dim;
  net.head.out = init_layer(hidden.back(), MoGHead::output_size(components, dim), rng);
  // mixing logits and precision readouts start near zero: initial mixture ~ N(0, I)
  const Eigen::Index K = components, means_end = K + K * dim;
  net.head.out.W.topRows(K) *= 1e-2;
  net.head.out.b.head(K) *= 1e-2;
  const Eigen::Index rest = net.head.out.W.rows() - means_end;
  net.head.out.W.bottomRows(rest) *= 1e-2;
  net.head.out.b.tail(rest) *= 1e-2;
  return net;
}

Eigen::VectorXd forward_classifier(const ClassifierNet& net, const Eigen::VectorXd& s) {
  if (s.size() != net.trunk.input_dim()) throw InputError("forward_classifier: summary dimension mismatch");
  const Eigen::VectorXd y = net.trunk.forward(s);
  const Eigen::VectorXd logits = net.head.out.W * y + net.head.out.b;
  return (logits.array() - log_sum_exp(logits)).exp();
}

MoGPosterior forward_mog(const MogNet& net, const Eigen::VectorXd& s) {
  if (s.size() != net.trunk.input_dim()) throw InputError("forward_mog: summary dimension mismatch");
  const Eigen::VectorXd y = net.trunk.forward(s);
  const Eigen::VectorXd o = net.head.out.W * y + net.head.out.b;
  if (!o.allFinite()) throw DivergenceError("forward_mog: non-finite network output");
  auto q = decode_mog(net.head, o);
  for (const auto& U : q.precision_factors)
    if (!U.allFinite() || (U.diagonal().array() <= 0.0).any())
      throw DivergenceError("forward_mog: precision factor overflow");
  return q;
}

LossValue classifier_loss(const Eigen::MatrixXd& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw InputError("classifier_loss: size mismatch");
  if (labels.empty()) throw InputError("classifier_loss: empty batch");
  double total = 0.0;
  bool clamped = false;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int m = labels[n];
    if (m < 0 || m >= probs.cols()) throw InputError("classifier_loss: label out of range");
    double q = probs(static_cast<Eigen::Index>(n), m);
    if (q < kProbabilityFloor) {
      q = kProbabilityFloor;
      clamped = true;
    }
    total -= std::log(q);
  }
  return {total / static_cast<double>(labels.size()), clamped};
}

double classifier_loss_and_gradient(const ClassifierNet& net, const Eigen::MatrixXd& inputs, std::span<const int> labels,
                                    ClassifierNet* grad) {
  const auto acts = trunk_activations(net.trunk, as_columns(inputs, net.trunk.input_dim()));
  Eigen::MatrixXd logits = net.head.out.W * acts.back();
  logits.colwise() += net.head.out.b;
  const Eigen::Index B = logits.cols();
  if (static_cast<std::size_t>(B) != labels.size()) throw InputError("classifier batch: label count mismatch");
  Eigen::MatrixXd d_out(logits.rows(), B);
  double loss = 0.0;
  for (Eigen::Index n = 0; n < B; ++n) {
    const Eigen::VectorXd col = logits.col(n);
    const double lse = log_sum_exp(col);
    const Eigen::VectorXd p = (col.array() - lse).exp();
    const int m = labels[static_cast<std::size_t>(n)];
    if (m < 0 || m >= logits.rows()) throw InputError("classifier batch: label out of range");
    loss -= std::max(col(m) - lse, std::log(kProbabilityFloor));
    d_out.col(n) = p;
    d_out(m, n) -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  if (grad) {
    d_out *= inv_b;
    grad->head.out.W = d_out * acts.back().transpose();
    grad->head.out.b = d_out.rowwise().sum();
    trunk_backward(net.trunk, acts, net.head.out.W.transpose() * d_out, grad->trunk);
  }
  return loss * inv_b;
}

double mog_loss_and_gradient(const MogNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                             MogNet* grad) {
  const int K = net.head.components, d = net.head.dim, T = d * (d - 1) / 2;
  if (targets.cols() != d) throw InputError("MoG batch: target dimension mismatch");
  if (targets.rows() != inputs.rows()) throw InputError("MoG batch: row count mismatch");
  const auto acts = trunk_activations(net.trunk, as_columns(inputs, net.trunk.input_dim()));
  Eigen::MatrixXd out = net.head.out.W * acts.back();
  out.colwise() += net.head.out.b;
  const Eigen::Index B = out.cols();
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(out.rows(), B);

  double loss = 0.0;
  Eigen::MatrixXd U(d, d);
  std::vector<Eigen::VectorXd> diffs(static_cast<std::size_t>(K)), zs(static_cast<std::size_t>(K));
  std::vector<Eigen::MatrixXd> Us(static_cast<std::size_t>(K));
  Eigen::VectorXd lp(K);
  for (Eigen::Index n = 0; n < B; ++n) {
    const Eigen::VectorXd o = out.col(n);
    const Eigen::VectorXd logits = o.head(K);
    const Eigen::VectorXd log_alpha = logits.array() - log_sum_exp(logits);
    const Eigen::VectorXd theta = targets.row(n).transpose();
    for (int k = 0; k < K; ++k) {
      U.setZero();
      double log_det = 0.0;
      for (int i = 0; i < d; ++i) {
        const double r = o(K + K * d + k * d + i);
        U(i, i) = std::exp(r);
        log_det += r;
      }
      int t = 0;
      for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) U(i, j) = o(K + 2 * K * d + k * T + t++);
      const auto ks = static_cast<std::size_t>(k);
      diffs[ks] = theta - o.segment(K + k * d, d);
      zs[ks] = U.triangularView<Eigen::Upper>() * diffs[ks];
      Us[ks] = U;
      lp(k) = log_alpha(k) - 0.5 * d * kLog2Pi + log_det - 0.5 * zs[ks].squaredNorm();
    }
    const double lse = log_sum_exp(lp);
    loss -= lse;
    if (!grad) continue;
    const Eigen::VectorXd gamma = (lp.array() - lse).exp();
    const Eigen::VectorXd alpha = log_alpha.array().exp();
    for (int k = 0; k < K; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const double g = gamma(k);
      d_out(k, n) = alpha(k) - g;
      d_out.col(n).segment(K + k * d, d) = -g * (Us[ks].transpose() * zs[ks]);
      for (int i = 0; i < d; ++i)
        d_out(K + K * d + k * d + i, n) = -g * (1.0 - zs[ks](i) * diffs[ks](i) * Us[ks](i, i));
      int t = 0;
      for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) d_out(K + 2 * K * d + k * T + t++, n) = g * zs[ks](i) * diffs[ks](j);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  if (grad) {
    d_out *= inv_b;
    grad->head.components = K;
    grad->head.dim = d;
    grad->head.out.W = d_out * acts.back().transpose();
    grad->head.out.b = d_out.rowwise().sum();
    trunk_backward(net.trunk, acts, net.head.out.W.transpose() * d_out, grad->trunk);
  }
  return loss * inv_b;
}

template <class Head>
Eigen::VectorXd pack(const Mdn<Head>& net) {
  Eigen::Index total = 0;
  auto& mut = const_cast<Mdn<Head>&>(net);
  visit_tensors(mut, [&](double*, Eigen::Index n) { total += n; });
  Eigen::VectorXd flat(total);
  Eigen::Index at = 0;
  visit_tensors(mut, [&](double* p, Eigen::Index n) {
    flat.segment(at, n) = Eigen::Map<const Eigen::VectorXd>(p, n);
    at += n;
  });
  return flat;
}

template <class Head>
void unpack(const Eigen::VectorXd& flat, Mdn<Head>& net) {
  Eigen::Index at = 0;
  visit_tensors(net, [&](double* p, Eigen::Index n) {
    if (at + n > flat.size()) throw InputError("unpack: parameter vector too short");
    Eigen::Map<Eigen::VectorXd>(p, n) = flat.segment(at, n);
    at += n;
  });
  if (at != flat.size()) throw InputError("unpack: parameter vector too long");
}

template Eigen::VectorXd pack(const ClassifierNet&);
template Eigen::VectorXd pack(const MogNet&);
template void unpack(const Eigen::VectorXd&, ClassifierNet&);
template void unpack(const Eigen::VectorXd&, MogNet&);

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size < 0 || epochs < 1 || components < 1)
    throw ConfigError("TrainConfig: learning rate, epochs and components must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
    throw ConfigError("TrainConfig: Adam decay rates must lie in (0, 1)");
}

int TrainConfig::resolved_batch_size(std::size_t n) const {
  if (batch_size > 0) return batch_size;
  return std::max(1, static_cast<int>(n / 100));
}

Adam::Adam(Eigen::Index n, const TrainConfig& cfg)
    : m_(Eigen::VectorXd::Zero(n)),
      v_(Eigen::VectorXd::Zero(n)),
      lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.epsilon) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

TrainResult train_classifier(ClassifierNet& net, const Eigen::MatrixXd& inputs, std::span<const int> labels,
                             const TrainConfig& cfg) {
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) throw InputError("train_classifier: size mismatch");
  return run_training(net, labels.size(), cfg, [&](const ClassifierNet& cur, std::span<const std::size_t> idx, ClassifierNet& g) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), inputs.cols());
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(idx[i]));
      y[i] = labels[idx[i]];
    }
    return classifier_loss_and_gradient(cur, x, y, &g);
  });
}

TrainResult train_mog(MogNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const TrainConfig& cfg) {
  if (inputs.rows() != targets.rows()) throw InputError("train_mog: size mismatch");
  return run_training(net, static_cast<std::size_t>(inputs.rows()), cfg,
                      [&](const MogNet& cur, std::span<const std::size_t> idx, MogNet& g) {
                        Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), inputs.cols());
                        Eigen::MatrixXd t(static_cast<Eigen::Index>(idx.size()), targets.cols());
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          x.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(idx[i]));
                          t.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(idx[i]));
                        }
                        return mog_loss_and_gradient(cur, x, t, &g);
                      });
}

Eigen::VectorXd ClassifierModel::predict(const Eigen::VectorXd& summary) const {
  return forward_classifier(net, input_scaler.apply(summary));
}

MoGPosterior PosteriorModel::predict(const Eigen::VectorXd& summary) const {
  return mog_to_original_scale(forward_mog(net, input_scaler.apply(summary)), param_scaler);
}

ClassifierModel fit_classifier(const Eigen::MatrixXd& summaries, std::span<const int> labels,
                               const std::vector<int>& hidden, const TrainConfig& cfg) {
  int n_models = 2;
  for (int m : labels) n_models = std::max(n_models, m + 1);
  ClassifierModel model;
  model.config = cfg;
  model.input_scaler = ZScaler::fit(summaries);
  model.net = make_classifier(static_cast<int>(summaries.cols()), hidden, n_models, cfg.seed);
  model.loss_trace = train_classifier(model.net, model.input_scaler.apply_rows(summaries), labels, cfg).epoch_loss;
  return model;
}

PosteriorModel fit_posterior(const Eigen::MatrixXd& summaries, const Eigen::MatrixXd& params,
                             const std::vector<int>& hidden, const TrainConfig& cfg) {
  PosteriorModel model;
  model.config = cfg;
  model.input_scaler = ZScaler::fit(summaries);
  model.param_scaler = ZScaler::fit(params);
  model.net = make_mog(static_cast<int>(summaries.cols()), hidden, cfg.components, static_cast<int>(params.cols()), cfg.seed);
  model.loss_trace = train_mog(model.net, model.input_scaler.apply_rows(summaries), model.param_scaler.apply_rows(params), cfg).epoch_loss;
  return model;
}

}  // namespace bmc
