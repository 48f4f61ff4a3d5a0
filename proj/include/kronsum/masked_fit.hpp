#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "kronsum/kron_core.hpp"

namespace kronsum {

struct AlsOptions {
  double tol = 1e-8;   // relative objective change
  int max_iter = 500;  // full t/s sweeps
};

template <typename Scalar>
struct MaskedFitResult {
  MatrixX<Scalar> t;  // p^2 x r
  MatrixX<Scalar> s;  // q^2 x r
  // objective_trace[0] is the SVD initialization; one entry per sweep after.
  std::vector<Scalar> objective_trace;
  bool converged = false;
};

namespace detail {

// Minimizes sum over unmasked (m, n) of (data(m, n) - target.row(m) . other.row(n))^2
// row by row. Rows without masked cells share one factorization of `other`.
template <typename Scalar>
void solve_masked_rows(MatrixX<Scalar>& target, const MatrixX<Scalar>& other,
                       const MatrixX<Scalar>& data, const MaskMatrix& masked) {
  std::vector<Index> full_rows;
  for (Index m = 0; m < data.rows(); ++m) {
    if (!masked.row(m).any()) {
      full_rows.push_back(m);
      continue;
    }
    std::vector<Index> kept;
    for (Index n = 0; n < data.cols(); ++n)
      if (!masked(m, n)) kept.push_back(n);
    if (kept.empty()) {
      target.row(m).setZero();
      continue;
    }
    const MatrixX<Scalar> design = other(kept, Eigen::all);
    const VectorX<Scalar> rhs = data(m, kept).transpose();
    target.row(m) = Eigen::CompleteOrthogonalDecomposition<MatrixX<Scalar>>(design)
                        .solve(rhs)
                        .transpose();
  }
  if (!full_rows.empty()) {
    Eigen::CompleteOrthogonalDecomposition<MatrixX<Scalar>> cod(other);
    const MatrixX<Scalar> rhs = data(full_rows, Eigen::all).transpose();
    target(full_rows, Eigen::all) = cod.solve(rhs).transpose();
  }
}

template <typename Scalar>
Scalar masked_objective(const MatrixX<Scalar>& b, const MaskMatrix& masked,
                        const MatrixX<Scalar>& t, const MatrixX<Scalar>& s) {
  const MatrixX<Scalar> resid = b - t * s.transpose();
  return (masked.select(Scalar(0), resid.array())).square().sum();
}

}  // namespace detail

// Weighted rank-r approximation t s^T of b that ignores masked cells, by
// alternating least squares over the rows of t and s, starting from the
// unweighted truncated SVD.
template <typename Scalar>
MaskedFitResult<Scalar> masked_rank_r_fit(const RearrangedMatrix<Scalar>& b, const MaskMatrix& masked,
                                          Index r, const AlsOptions& opts = {}) {
  const MatrixX<Scalar>& data = b.entries;
  const Index bound = std::min(data.rows(), data.cols());
  if (r < 1 || r > bound)
    throw ArgumentError("masked_rank_r_fit: rank " + std::to_string(r) + " outside [1, " +
                        std::to_string(bound) + "]");
  if (masked.rows() != data.rows() || masked.cols() != data.cols())
    throw ShapeError("masked_rank_r_fit: mask shape does not match rearranged matrix");
  if (!data.allFinite()) throw DataError("masked_rank_r_fit: non-finite entries in input");
  if (opts.max_iter < 0 || !(opts.tol >= 0))
    throw ArgumentError("masked_rank_r_fit: tol must be >= 0 and max_iter >= 0");

  Eigen::BDCSVD<MatrixX<Scalar>> svd(data, Eigen::ComputeThinU | Eigen::ComputeThinV);
  MaskedFitResult<Scalar> out;
  out.t = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
  out.s = svd.matrixV().leftCols(r);

  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar floor = Scalar(100) * eps * data.norm();
  const Scalar abs_floor = floor * floor;

  Scalar obj = detail::masked_objective(data, masked, out.t, out.s);
  out.objective_trace.push_back(obj);
  if (obj <= abs_floor || !masked.any()) {
    out.converged = true;
    return out;
  }

  const MatrixX<Scalar> data_t = data.transpose();
  const MaskMatrix masked_t = masked.transpose();
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const MatrixX<Scalar> prev_t = out.t, prev_s = out.s;
    detail::solve_masked_rows(out.t, out.s, data, masked);
    detail::solve_masked_rows(out.s, out.t, data_t, masked_t);
    const Scalar next = detail::masked_objective(data, masked, out.t, out.s);
    if (next > obj) {
      // rounding at the fixed point; keep the better iterate
      out.t = prev_t;
      out.s = prev_s;
      out.converged = true;
      break;
    }
    out.objective_trace.push_back(next);
    const Scalar change = (obj - next) / obj;
    obj = next;
    if (obj <= abs_floor || change < Scalar(opts.tol)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

template <typename Scalar>
MaskedFitResult<Scalar> masked_rank_r_fit(const RearrangedMatrix<Scalar>& b, const DontCareMask& mask,
                                          Index r, const AlsOptions& opts = {}) {
  return masked_rank_r_fit(b, mask.cells(), r, opts);
}

}  // namespace kronsum
