#include "repaintlab/metrics/frechet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "repaintlab/error.hpp"

namespace repaintlab::metrics {

namespace {

constexpr double kSymmetryTol = 1e-8;

void check_symmetric(const Eigen::MatrixXd& m, const char* which) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale)
    throw DataError(std::string("frechet_distance: covariance ") + which + " is not symmetric");
}

}  // namespace

GaussianStats gaussian_stats(const nd::NdArray<double>& features) {
  if (features.rank() != 2) throw ShapeError("gaussian_stats", "rank", "features must be [N, D]");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw DataError("gaussian_stats: need at least 2 samples, got " + std::to_string(n));
  nd::require_finite(features, "gaussian_stats");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double* f = features.data();
  std::sort(order.begin(), order.end(), [f, d](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(f + a * d, f + (a + 1) * d, f + b * d, f + (b + 1) * d);
  });
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f[order[r] * d + c];

  GaussianStats s;
  s.n = n;
  // Shifting by the first canonical row keeps identical rows at an exact zero spread.
  const Eigen::RowVectorXd pivot = x.row(0);
  x.rowwise() -= pivot;
  Eigen::RowVectorXd shift = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) shift(c) += x(r, c);
  shift /= static_cast<double>(n);
  s.mu = (pivot + shift).transpose();
  x.rowwise() -= shift;
  s.sigma = (x.transpose() * x) / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose()).eval();
  return s;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw Error("psd_sqrt: eigendecomposition failed");
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim() || a.sigma.rows() != a.mu.size() || b.sigma.rows() != b.mu.size() ||
      a.sigma.cols() != a.sigma.rows() || b.sigma.cols() != b.sigma.rows())
    throw DataError("frechet_distance: dimensions differ (" + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()) + ")");
  check_symmetric(a.sigma, "a");
  check_symmetric(b.sigma, "b");
  const Eigen::MatrixXd root_a = psd_sqrt(a.sigma);
  Eigen::MatrixXd inner = root_a * b.sigma * root_a;
  inner = 0.5 * (inner + inner.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw Error("frechet_distance: eigendecomposition failed");
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d2 = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
  if (d2 < -1e-6) throw Error("frechet_distance: negative distance " + std::to_string(d2));
  return std::max(d2, 0.0);
}

}  // namespace repaintlab::metrics
