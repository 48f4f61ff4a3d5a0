#pragma once

#include <Eigen/Dense>

#include <random>

#include "kronsum/dims.hpp"

namespace testutil {

using kronsum::Index;
using kronsum::Mat;
using kronsum::Vec;

inline Mat random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline Mat random_symmetric(Index d, std::mt19937_64& rng) {
  const Mat g = random_matrix(d, d, rng);
  return (g + g.transpose()) / 2.0;
}

// Well-conditioned random SPD matrix.
inline Mat random_spd(Index d, std::mt19937_64& rng, double ridge = 0.5) {
  const Mat g = random_matrix(d, d, rng);
  return g * g.transpose() / static_cast<double>(d) + ridge * Mat::Identity(d, d);
}

// Entry-by-entry Kronecker product, independent of Eigen's module.
inline Mat brute_kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      for (Index k = 0; k < b.rows(); ++k)
        for (Index l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

inline Vec vec(const Mat& m) {
  Vec v(m.size());
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) v(i + j * m.rows()) = m(i, j);
  return v;
}

inline double rel_err(const Mat& a, const Mat& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

}  // namespace testutil
