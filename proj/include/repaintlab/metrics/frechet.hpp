#pragma once

#include <cstddef>

#include <Eigen/Core>

#include "repaintlab/ndcore/ndarray.hpp"

namespace repaintlab::metrics {

/// Sample moments of a feature set.
struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // n - 1 normalization
  std::size_t n = 0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mu.size()); }
};

/// Moments of features [N, D]. Rows are accumulated in a canonical
/// (lexicographic) order, so any permutation of the rows gives bit-identical
/// stats. Needs N >= 2.
GaussianStats gaussian_stats(const nd::NdArray<double>& features);

/// Squared Fréchet distance between two Gaussians:
/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
/// Matrix square roots use a symmetric eigendecomposition with negative
/// eigenvalues clipped to zero; a result in [-1e-6, 0) is reported as 0.
/// Throws DataError for mismatched dimensions or a non-symmetric covariance.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// Symmetric PSD square root through eigendecomposition.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

}  // namespace repaintlab::metrics
