#include <doctest.h>

#include <cmath>

#include "bmc/errors.hpp"
#include "bmc/features.hpp"
#include "bmc/random.hpp"

using namespace bmc;

TEST_CASE("count summary") {
  const std::vector<std::int64_t> a{0, 0, 0, 0};
  auto [m, v] = count_summary(a);
  CHECK(m == 0.0);
  CHECK(v == 0.0);
  const std::vector<std::int64_t> b{1, 2, 3, 4};
  std::tie(m, v) = count_summary(b);
  CHECK(m == 2.5);
  CHECK(v == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
  const std::vector<std::int64_t> c{7, 7, 7};
  std::tie(m, v) = count_summary(c);
  CHECK(m == 7.0);
  CHECK(v == 0.0);
  const std::vector<std::int64_t> one{3};
  CHECK_THROWS_AS(count_summary(one), InputError);
}

TEST_CASE("z scaler") {
  Eigen::MatrixXd x(4, 3);
  x << 1, 5, 2, 2, 5, 4, 3, 5, 6, 4, 5, 8;
  const auto z = ZScaler::fit(x);
  CHECK(z.means(0) == doctest::Approx(2.5));
  CHECK(z.stds(0) == doctest::Approx(std::sqrt(1.25)));
  CHECK(z.stds(1) == 1.0);  // constant column is only centered
  const Eigen::MatrixXd s = z.apply_rows(x);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(s.col(c).mean()) < 1e-14);
  CHECK((s.col(1).array() == 0.0).all());
  const Eigen::VectorXd row = x.row(2).transpose();
  CHECK((z.invert(z.apply(row)) - row).norm() < 1e-14);
  CHECK_THROWS_AS(z.apply(Eigen::VectorXd::Zero(2)), InputError);
  CHECK_THROWS_AS(ZScaler::fit(Eigen::MatrixXd::Ones(1, 3)), InputError);
}

TEST_CASE("pca recovers a rank-one corpus") {
  const int len = 40;
  Eigen::VectorXd dir = Eigen::VectorXd::LinSpaced(len, -1.0, 2.0);
  dir.normalize();
  Eigen::VectorXd mean = Eigen::VectorXd::Constant(len, 3.0);
  Eigen::MatrixXd corpus(30, len);
  Rng rng(5);
  for (int r = 0; r < corpus.rows(); ++r) corpus.row(r) = (mean + rng.normal() * dir).transpose();
  const auto b = build_protocol_basis("p", corpus, 3);
  CHECK(std::abs(std::abs(b.basis.col(0).dot(dir)) - 1.0) < 1e-10);
  CHECK(b.explained(0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(b.reduced_rank);
  CHECK(b.basis.col(1).norm() == 0.0);
}

TEST_CASE("pca basis is orthonormal and ordered by variance") {
  const int len = 60, n = 200;
  Eigen::MatrixXd corpus(n, len);
  Rng rng(9);
  const double scales[] = {5.0, 3.0, 2.0, 1.0, 0.5, 0.1};
  Eigen::MatrixXd dirs = Eigen::MatrixXd::Zero(len, 6);
  for (int k = 0; k < 6; ++k)
    for (int t = 0; t < len; ++t) dirs(t, k) = std::sin((k + 1) * M_PI * (t + 0.5) / len);
  for (int r = 0; r < n; ++r) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(len);
    for (int k = 0; k < 6; ++k) row += scales[k] * rng.normal() * dirs.col(k);
    corpus.row(r) = row.transpose();
  }
  const auto b = build_protocol_basis("p", corpus, 5);
  CHECK_FALSE(b.reduced_rank);
  const Eigen::MatrixXd gram = b.basis.transpose() * b.basis;
  CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 1; k < 5; ++k) CHECK(b.explained(k) <= b.explained(k - 1));
  CHECK(b.explained.sum() < 1.0);
  // the explained fractions match the Gram eigenvalues computed independently
  const Eigen::MatrixXd centered = corpus.rowwise() - corpus.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered);
  const Eigen::VectorXd ev = eig.eigenvalues().reverse();
  for (int k = 0; k < 5; ++k) CHECK(b.explained(k) == doctest::Approx(ev(k) / ev.sum()).epsilon(1e-8));
  CHECK_THROWS_AS(build_protocol_basis("p", corpus.topRows(3), 5), InputError);
}

TEST_CASE("least squares on an orthonormal basis") {
  Rng rng(2);
  Eigen::MatrixXd a(50, 4);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() * Eigen::MatrixXd::Identity(50, 4);
  Eigen::VectorXd c(4);
  c << 1.5, -2.0, 0.25, 3.0;
  CHECK((least_squares_coefficients(q, q * c) - c).norm() < 1e-12);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) y(i) = rng.normal();
  CHECK((least_squares_coefficients(q, y) - q.transpose() * y).norm() < 1e-12);
  // linear in the target
  Eigen::VectorXd y2(50);
  for (int i = 0; i < 50; ++i) y2(i) = rng.normal();
  const Eigen::VectorXd lhs = least_squares_coefficients(q, 2.0 * y - 0.5 * y2);
  const Eigen::VectorXd rhs = 2.0 * least_squares_coefficients(q, y) - 0.5 * least_squares_coefficients(q, y2);
  CHECK((lhs - rhs).norm() < 1e-12);
  CHECK_THROWS_AS(least_squares_coefficients(q, Eigen::VectorXd::Zero(3)), InputError);
}

TEST_CASE("trace projection") {
  const auto protocols = build_protocols();
  std::vector<Eigen::MatrixXd> corpora(protocols.size());
  std::vector<std::string> names;
  std::vector<TraceSet> sets;
  Rng rng(11);
  for (int r = 0; r < 12; ++r) {
    const int m = r % 2;
    sets.push_back(simulate_all(channel_from_free(m, sample_channel_prior(m, rng)), protocols));
  }
  for (std::size_t i = 0; i < protocols.size(); ++i) {
    names.push_back(protocols[i].name);
    const auto len = static_cast<Eigen::Index>(sets[0].protocols[i].values.size());
    corpora[i].resize(static_cast<Eigen::Index>(sets.size()), len);
    for (std::size_t r = 0; r < sets.size(); ++r)
      corpora[i].row(static_cast<Eigen::Index>(r)) =
          Eigen::Map<const Eigen::VectorXd>(sets[r].protocols[i].values.data(), len).transpose();
  }
  const auto basis = build_pca_basis(names, corpora, 5);
  CHECK(basis.summary_size() == 25);

  const Eigen::VectorXd s = project_traces(sets[0], basis);
  REQUIRE(s.size() == 25);
  for (std::size_t i = 0; i < protocols.size(); ++i) {
    const auto& pb = basis.protocols[i];
    const Eigen::Map<const Eigen::VectorXd> y(sets[0].protocols[i].values.data(), pb.mean.size());
    const Eigen::VectorXd expect = pb.basis.transpose() * (y - pb.mean);
    CHECK((s.segment(static_cast<Eigen::Index>(i) * 5, 5) - expect).norm() < 1e-8 * (1.0 + expect.norm()));
  }

  // affine: an affine combination of traces maps to the same combination of summaries
  TraceSet mix = sets[1];
  for (std::size_t i = 0; i < mix.protocols.size(); ++i)
    for (std::size_t j = 0; j < mix.protocols[i].values.size(); ++j)
      mix.protocols[i].values[j] = 0.3 * sets[1].protocols[i].values[j] + 0.7 * sets[2].protocols[i].values[j];
  const Eigen::VectorXd lhs = project_traces(mix, basis);
  const Eigen::VectorXd rhs = 0.3 * project_traces(sets[1], basis) + 0.7 * project_traces(sets[2], basis);
  CHECK((lhs - rhs).norm() < 1e-8 * (1.0 + rhs.norm()));

  TraceSet short_set = sets[0];
  short_set.protocols.pop_back();
  CHECK_THROWS_AS(project_traces(short_set, basis), InputError);
  TraceSet bad_len = sets[0];
  bad_len.protocols[0].values.pop_back();
  CHECK_THROWS_AS(project_traces(bad_len, basis), InputError);
}
