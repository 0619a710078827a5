#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bmc/channels.hpp"

namespace bmc {

/// Sample mean and Bessel-corrected sample variance.
std::pair<double, double> count_summary(std::span<const std::int64_t> x);

/// Per-column z-transformation. Columns with zero spread keep std = 1 and are
/// only centered.
struct ZScaler {
  Eigen::VectorXd means;
  Eigen::VectorXd stds;

  /// rows = samples, columns = features
  static ZScaler fit(const Eigen::MatrixXd& columns);
  static ZScaler identity(int dim);

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  Eigen::VectorXd invert(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& m) const;
  int dim() const { return static_cast<int>(means.size()); }
};

struct ProtocolBasis {
  std::string name;
  Eigen::VectorXd mean;           // corpus mean trace
  Eigen::MatrixXd basis;          // trace length x n_components, orthonormal columns
  Eigen::VectorXd explained;      // variance fraction per component
  bool reduced_rank = false;
};

struct PcaBasis {
  std::vector<ProtocolBasis> protocols;
  int n_components() const { return protocols.empty() ? 0 : static_cast<int>(protocols.front().basis.cols()); }
  int summary_size() const { return n_components() * static_cast<int>(protocols.size()); }
};

/// Top principal directions of one mean-centered corpus (rows = traces),
/// computed from the eigendecomposition of the Gram matrix.
ProtocolBasis build_protocol_basis(const std::string& name, const Eigen::MatrixXd& corpus, int n_components = 5);

/// corpora[i] holds all traces of protocol i, one per row.
PcaBasis build_pca_basis(const std::vector<std::string>& names, const std::vector<Eigen::MatrixXd>& corpora,
                         int n_components = 5);

/// Least-squares coefficients of y on the columns of `basis` via column-pivoted QR.
Eigen::VectorXd least_squares_coefficients(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y);

/// Per protocol: least-squares fit of the centered concatenated sweeps onto the
/// basis; n_protocols * n_components entries.
Eigen::VectorXd project_traces(const TraceSet& traces, const PcaBasis& basis);

}  // namespace bmc
