#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kronsum/dims.hpp"
#include "kronsum/errors.hpp"

namespace kronsum {

// p^2 x q^2 rearrangement of a pq x pq matrix. Row (j*p + i) holds block
// (i, j); column (l*q + k) holds in-block entry (k, l). Under this map
// T (x) S becomes vec(T) vec(S)^T.
template <typename Scalar>
struct RearrangedMatrix {
  MatrixX<Scalar> entries;
  StDims dims;
};

// true marks a cell excluded from a least-squares objective.
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Cells of the rearranged matrix that hold diagonal entries of the original
// matrix: rows (i, i) crossed with columns (k, k).
struct DontCareMask {
  std::vector<Index> rows;
  std::vector<Index> cols;
  StDims dims;

  MaskMatrix cells() const {
    MaskMatrix m = MaskMatrix::Constant(dims.p * dims.p, dims.q * dims.q, false);
    for (Index r : rows)
      for (Index c : cols) m(r, c) = true;
    return m;
  }
  Index size() const { return static_cast<Index>(rows.size() * cols.size()); }
};

// One Kronecker term temporal (x) spatial. The scale lives in the temporal
// factor; ||spatial||_F = 1 after normalize_factor_pair.
template <typename Scalar>
struct KronFactorPair {
  MatrixX<Scalar> temporal;  // p x p
  MatrixX<Scalar> spatial;   // q x q
};

// Index maps standing in for permutation matrices: (P v)[m] = v[map[m]].
struct KronPermutations {
  // vec(T (x) S) = P_R (vec(S) (x) vec(T))
  std::vector<Index> rearrange;
  // K vec(M) = vec(M^T) for a p x q matrix M
  std::vector<Index> commutation;
};

template <typename Derived>
typename Derived::Scalar relative_asymmetry(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = m.norm();
  if (norm == Scalar(0)) return Scalar(0);
  return (m - m.transpose()).norm() / norm;
}

template <typename Derived>
RearrangedMatrix<typename Derived::Scalar> rearrange(const Eigen::MatrixBase<Derived>& sigma,
                                                     const StDims& dims) {
  using Scalar = typename Derived::Scalar;
  const Index p = dims.p, q = dims.q;
  if (sigma.rows() != p * q || sigma.cols() != p * q)
    throw ShapeError("rearrange: expected " + std::to_string(p * q) + "x" +
                     std::to_string(p * q) + " matrix, got " + std::to_string(sigma.rows()) +
                     "x" + std::to_string(sigma.cols()));
  RearrangedMatrix<Scalar> b{MatrixX<Scalar>(p * p, q * q), dims};
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < p; ++i)
      for (Index l = 0; l < q; ++l)
        for (Index k = 0; k < q; ++k)
          b.entries(j * p + i, l * q + k) = sigma(i * q + k, j * q + l);
  return b;
}

template <typename Scalar>
MatrixX<Scalar> unrearrange(const RearrangedMatrix<Scalar>& b) {
  const Index p = b.dims.p, q = b.dims.q;
  if (b.entries.rows() != p * p || b.entries.cols() != q * q)
    throw ShapeError("unrearrange: expected " + std::to_string(p * p) + "x" +
                     std::to_string(q * q) + " matrix, got " +
                     std::to_string(b.entries.rows()) + "x" + std::to_string(b.entries.cols()));
  MatrixX<Scalar> sigma(p * q, p * q);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < p; ++i)
      for (Index l = 0; l < q; ++l)
        for (Index k = 0; k < q; ++k)
          sigma(i * q + k, j * q + l) = b.entries(j * p + i, l * q + k);
  return sigma;
}

inline DontCareMask dontcare_mask(const StDims& dims) {
  DontCareMask mask;
  mask.dims = dims;
  for (Index i = 0; i < dims.p; ++i) mask.rows.push_back(i * dims.p + i);
  for (Index k = 0; k < dims.q; ++k) mask.cols.push_back(k * dims.q + k);
  return mask;
}

inline KronPermutations commutation_and_rearrangement_perms(const StDims& dims) {
  const Index p = dims.p, q = dims.q, d = p * q;
  KronPermutations perms;
  perms.rearrange.resize(static_cast<size_t>(d * d));
  for (Index j = 0; j < p; ++j)
    for (Index l = 0; l < q; ++l)
      for (Index i = 0; i < p; ++i)
        for (Index k = 0; k < q; ++k) {
          const Index m = (i * q + k) + (j * q + l) * d;
          perms.rearrange[static_cast<size_t>(m)] = (k + l * q) * p * p + (i + j * p);
        }
  perms.commutation.resize(static_cast<size_t>(d));
  for (Index a = 0; a < p; ++a)
    for (Index b = 0; b < q; ++b)
      perms.commutation[static_cast<size_t>(b + a * q)] = a + b * p;
  return perms;
}

// Commutation map for an arbitrary rows x cols matrix.
inline std::vector<Index> commutation_perm(Index rows, Index cols) {
  std::vector<Index> perm(static_cast<size_t>(rows * cols));
  for (Index a = 0; a < rows; ++a)
    for (Index b = 0; b < cols; ++b) perm[static_cast<size_t>(b + a * cols)] = a + b * rows;
  return perm;
}

// Gathers rows: out.row(m) = x.row(map[m]).
template <typename Derived>
MatrixX<typename Derived::Scalar> apply_perm(const std::vector<Index>& map,
                                             const Eigen::MatrixBase<Derived>& x) {
  if (static_cast<Index>(map.size()) != x.rows())
    throw ShapeError("apply_perm: permutation length does not match rows");
  MatrixX<typename Derived::Scalar> out(x.rows(), x.cols());
  for (Index m = 0; m < x.rows(); ++m) out.row(m) = x.row(map[static_cast<size_t>(m)]);
  return out;
}

// Fixes the scale/sign ambiguity of temporal (x) spatial: unit-Frobenius
// spatial factor whose largest-magnitude entry is positive. Each factor is
// projected onto its dominant symmetry class (symmetric or antisymmetric;
// the product of two antisymmetric factors is itself symmetric). A warning is
// appended when the discarded part exceeds 1e-6 relative.
template <typename Scalar>
void normalize_factor_pair(KronFactorPair<Scalar>& pair, std::vector<std::string>* warnings) {
  auto project = [&](MatrixX<Scalar>& m, const char* name) {
    const MatrixX<Scalar> sym = (m + m.transpose()) / Scalar(2);
    const MatrixX<Scalar> anti = (m - m.transpose()) / Scalar(2);
    const Scalar norm = m.norm();
    const bool keep_sym = sym.norm() >= anti.norm();
    const Scalar dropped = keep_sym ? anti.norm() : sym.norm();
    if (warnings && norm > Scalar(0) && dropped > Scalar(1e-6) * norm)
      warnings->push_back(std::string(name) + " factor asymmetry " +
                          std::to_string(static_cast<double>(dropped / norm)) +
                          " exceeds 1e-6 relative; symmetrized");
    m = keep_sym ? sym : anti;
  };
  project(pair.temporal, "temporal");
  project(pair.spatial, "spatial");

  const Scalar snorm = pair.spatial.norm();
  if (snorm == Scalar(0)) {
    pair.temporal.setZero();
    return;
  }
  Index r = 0, c = 0;
  pair.spatial.cwiseAbs().maxCoeff(&r, &c);
  const Scalar scale = pair.spatial(r, c) < Scalar(0) ? -snorm : snorm;
  pair.spatial /= scale;
  pair.temporal *= scale;
}

// Builds a factor pair from one column of t (length p^2) and s (length q^2).
template <typename DerivedT, typename DerivedS>
KronFactorPair<typename DerivedT::Scalar> factor_pair_from_columns(
    const Eigen::MatrixBase<DerivedT>& t_col, const Eigen::MatrixBase<DerivedS>& s_col,
    const StDims& dims, std::vector<std::string>* warnings) {
  using Scalar = typename DerivedT::Scalar;
  const VectorX<Scalar> t = t_col;
  const VectorX<Scalar> s = s_col;
  if (t.size() != dims.p * dims.p || s.size() != dims.q * dims.q)
    throw ShapeError("factor_pair_from_columns: column lengths do not match dims");
  KronFactorPair<Scalar> pair;
  pair.temporal = Eigen::Map<const MatrixX<Scalar>>(t.data(), dims.p, dims.p);
  pair.spatial = Eigen::Map<const MatrixX<Scalar>>(s.data(), dims.q, dims.q);
  normalize_factor_pair(pair, warnings);
  return pair;
}

// Sum of temporal_i (x) spatial_i plus diag(diag_load).
template <typename Scalar>
MatrixX<Scalar> kron_sum_assemble(std::span<const KronFactorPair<Scalar>> factors,
                                  const std::optional<VectorX<Scalar>>& diag_load,
                                  const StDims& dims) {
  const Index d = dims.dim();
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(d, d);
  for (const auto& f : factors) {
    if (f.temporal.rows() != dims.p || f.temporal.cols() != dims.p || f.spatial.rows() != dims.q ||
        f.spatial.cols() != dims.q)
      throw ShapeError("kron_sum_assemble: factor shape inconsistent with dims (p=" +
                       std::to_string(dims.p) + ", q=" + std::to_string(dims.q) + ")");
    out += Eigen::kroneckerProduct(f.temporal, f.spatial).eval();
  }
  if (diag_load) {
    if (diag_load->size() != d)
      throw ShapeError("kron_sum_assemble: diag_load length " + std::to_string(diag_load->size()) +
                       " != " + std::to_string(d));
    out.diagonal() += *diag_load;
  }
  return out;
}

// Replicates a q-vector over p frames: the diagonal of I_p (x) diag(u).
template <typename Derived>
VectorX<typename Derived::Scalar> replicated_diag_load(const Eigen::MatrixBase<Derived>& u,
                                                       Index p) {
  return u.derived().replicate(p, 1);
}

// Eigenvalue clipping at `floor`; the Frobenius-nearest PSD matrix for floor 0.
template <typename Derived>
MatrixX<typename Derived::Scalar> psd_project(const Eigen::MatrixBase<Derived>& m,
                                              typename Derived::Scalar floor = 0) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw ShapeError("psd_project: matrix must be square");
  if (floor < Scalar(0)) throw ArgumentError("psd_project: floor must be >= 0");
  if (relative_asymmetry(m) > Scalar(1e-10))
    throw DataError("psd_project: input is not symmetric (relative asymmetry " +
                    std::to_string(static_cast<double>(relative_asymmetry(m))) + ")");
  const MatrixX<Scalar> sym = (m + m.transpose()) / Scalar(2);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(sym);
  if (eig.eigenvalues().minCoeff() >= floor) return sym;
  const VectorX<Scalar> clipped = eig.eigenvalues().cwiseMax(floor);
  MatrixX<Scalar> out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return (out + out.transpose()) / Scalar(2);
}

}  // namespace kronsum
