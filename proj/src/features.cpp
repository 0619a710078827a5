#include "bmc/features.hpp"

#include <cmath>

#include "bmc/errors.hpp"

namespace bmc {

std::pair<double, double> count_summary(std::span<const std::int64_t> x) {
  if (x.size() < 2) throw InputError("count_summary: need at least two counts");
  const double n = static_cast<double>(x.size());
  double sum = 0.0;
  for (auto v : x) sum += static_cast<double>(v);
  const double mean = sum / n;
  double ss = 0.0;
  for (auto v : x) {
    const double d = static_cast<double>(v) - mean;
    ss += d * d;
  }
  return {mean, ss / (n - 1.0)};
}

ZScaler ZScaler::fit(const Eigen::MatrixXd& columns) {
  if (columns.rows() < 2) throw InputError("ZScaler::fit: need at least two rows");
  ZScaler z;
  z.means = columns.colwise().mean().transpose();
  const Eigen::MatrixXd centered = columns.rowwise() - z.means.transpose();
  z.stds = (centered.array().square().colwise().sum() / static_cast<double>(columns.rows())).sqrt().transpose();
  for (Eigen::Index i = 0; i < z.stds.size(); ++i)
    if (!(z.stds(i) > 1e-12 * std::max(1.0, std::fabs(z.means(i))))) z.stds(i) = 1.0;
  return z;
}

ZScaler ZScaler::identity(int dim) { return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)}; }

Eigen::VectorXd ZScaler::apply(const Eigen::VectorXd& v) const {
  if (v.size() != means.size()) throw InputError("ZScaler::apply: dimension mismatch");
  return (v - means).cwiseQuotient(stds);
}

Eigen::VectorXd ZScaler::invert(const Eigen::VectorXd& z) const {
  if (z.size() != means.size()) throw InputError("ZScaler::invert: dimension mismatch");
  return z.cwiseProduct(stds) + means;
}

Eigen::MatrixXd ZScaler::apply_rows(const Eigen::MatrixXd& m) const {
  if (m.cols() != means.size()) throw InputError("ZScaler::apply_rows: dimension mismatch");
  return (m.rowwise() - means.transpose()).array().rowwise() / stds.transpose().array();
}

ProtocolBasis build_protocol_basis(const std::string& name, const Eigen::MatrixXd& corpus, int n_components) {
  if (corpus.rows() < n_components) throw InputError("build_pca_basis: corpus has fewer rows than components");
  ProtocolBasis out;
  out.name = name;
  out.mean = corpus.colwise().mean().transpose();
  const Eigen::MatrixXd centered = corpus.rowwise() - out.mean.transpose();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(centered.rows(), centered.rows());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(centered);
  gram = gram.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd values = eig.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  const double total = std::max(values.sum(), 0.0);
  const double floor = 1e-10 * std::max(values(0), 0.0);

  out.basis = Eigen::MatrixXd::Zero(corpus.cols(), n_components);
  out.explained = Eigen::VectorXd::Zero(n_components);
  int rank = 0;
  for (int i = 0; i < n_components; ++i) {
    if (!(values(i) > floor) || values(i) <= 0.0) break;
    out.basis.col(i) = centered.transpose() * vectors.col(i) / std::sqrt(values(i));
    out.explained(i) = total > 0.0 ? values(i) / total : 0.0;
    ++rank;
  }
  if (rank > 0) {
    // re-orthonormalize against roundoff; the span and ordering are preserved
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(out.basis.leftCols(rank));
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(corpus.cols(), rank);
    for (int i = 0; i < rank; ++i)
      if (q.col(i).dot(out.basis.col(i)) < 0.0) q.col(i) = -q.col(i);
    out.basis.leftCols(rank) = q;
  }
  out.reduced_rank = rank < n_components;
  return out;
}

PcaBasis build_pca_basis(const std::vector<std::string>& names, const std::vector<Eigen::MatrixXd>& corpora,
                         int n_components) {
  if (names.size() != corpora.size()) throw InputError("build_pca_basis: names and corpora differ in length");
  PcaBasis basis;
  for (std::size_t i = 0; i < corpora.size(); ++i)
    basis.protocols.push_back(build_protocol_basis(names[i], corpora[i], n_components));
  return basis;
}

Eigen::VectorXd least_squares_coefficients(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y) {
  if (basis.rows() != y.size()) throw InputError("least_squares_coefficients: dimension mismatch");
  return basis.colPivHouseholderQr().solve(y);
}

Eigen::VectorXd project_traces(const TraceSet& traces, const PcaBasis& basis) {
  if (traces.protocols.size() != basis.protocols.size())
    throw InputError("project_traces: trace set has " + std::to_string(traces.protocols.size()) +
                     " protocols, basis has " + std::to_string(basis.protocols.size()));
  const int k = basis.n_components();
  Eigen::VectorXd out(basis.summary_size());
  for (std::size_t i = 0; i < traces.protocols.size(); ++i) {
    const auto& pb = basis.protocols[i];
    const auto& values = traces.protocols[i].values;
    if (static_cast<Eigen::Index>(values.size()) != pb.basis.rows())
      throw InputError("project_traces: protocol '" + pb.name + "' trace length " + std::to_string(values.size()) +
                       " does not match basis rows " + std::to_string(pb.basis.rows()));
    const Eigen::Map<const Eigen::VectorXd> y(values.data(), static_cast<Eigen::Index>(values.size()));
    out.segment(static_cast<Eigen::Index>(i) * k, k) = least_squares_coefficients(pb.basis, y - pb.mean);
  }
  return out;
}

}  // namespace bmc
