#include "kronsum/sampling.hpp"

#include <string>

#include "kronsum/errors.hpp"

namespace kronsum {

Mat standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat z(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) z(i, j) = normal(rng);
  return z;
}

Mat gaussian_factor(const Mat& sigma) {
  if (sigma.rows() != sigma.cols()) throw ShapeError("gaussian_factor: sigma must be square");
  if (!sigma.allFinite()) throw DataError("gaussian_factor: non-finite covariance");
  const Mat sym = (sigma + sigma.transpose()) / 2.0;
  Eigen::LLT<Mat> llt(sym);
  if (llt.info() == Eigen::Success) return llt.matrixL();

  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  const Vec& lambda = eig.eigenvalues();
  const double top = std::max(lambda.cwiseAbs().maxCoeff(), 0.0);
  const double tol = 1e-10 * std::max(top, 1e-300) * static_cast<double>(sym.rows());
  if (lambda.minCoeff() < -tol)
    throw DataError("gaussian_sample: covariance is indefinite (min eigenvalue " +
                    std::to_string(lambda.minCoeff()) + ")");
  return eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Mat gaussian_sample(const Mat& factor, const Vec& mean, Index n, Rng& rng) {
  if (mean.size() != factor.rows())
    throw ShapeError("gaussian_sample: mean length " + std::to_string(mean.size()) +
                     " != dimension " + std::to_string(factor.rows()));
  if (n < 0) throw ArgumentError("gaussian_sample: negative sample count");
  const Mat z = standard_normal(n, factor.cols(), rng);
  Mat x = z * factor.transpose();
  x.rowwise() += mean.transpose();
  return x;
}

Mat gaussian_sample(const Mat& sigma, const Vec& mean, Index n, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_sample(gaussian_factor(sigma), mean, n, rng);
}

}  // namespace kronsum
