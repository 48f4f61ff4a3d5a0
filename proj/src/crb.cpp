#include "kronsum/crb.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <unsupported/Eigen/KroneckerProduct>

#include "kronsum/errors.hpp"
#include "kronsum/kron_core.hpp"

namespace kronsum {

namespace {

void require_pd(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) throw ShapeError(std::string(what) + " must be square");
  if (relative_asymmetry(m) > 1e-10) throw DataError(std::string(what) + " is not symmetric");
  Eigen::LLT<Mat> llt((m + m.transpose()) / 2.0);
  if (llt.info() != Eigen::Success)
    throw ConditioningError(std::string(what) + " is not positive definite",
                            Eigen::SelfAdjointEigenSolver<Mat>(m, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .minCoeff());
}

void check_size(Index d, const CrbOptions& opts) {
  if (d > opts.max_dim && !opts.allow_large)
    throw ArgumentError("CRB dimension pq=" + std::to_string(d) + " exceeds " +
                        std::to_string(opts.max_dim) + "; pass --allow-large to override");
}

// theta with vec(m) = basis * theta; basis must have full column rank.
Vec structure_coords(const Mat& m, const std::optional<Mat>& basis, const char* name) {
  const Vec v = Eigen::Map<const Vec>(m.data(), m.size());
  if (!basis) return v;
  if (basis->rows() != v.size())
    throw ShapeError(std::string(name) + " structure basis has " + std::to_string(basis->rows()) +
                     " rows, expected " + std::to_string(v.size()));
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(*basis);
  if (cod.rank() != basis->cols())
    throw ArgumentError(std::string(name) + " structure basis is rank deficient");
  const Vec theta = cod.solve(v);
  if ((*basis * theta - v).norm() > 1e-8 * std::max(v.norm(), 1e-300))
    throw ArgumentError(std::string("vec(") + name + ") is not in the range of its structure basis");
  return theta;
}

// Columns of the derivative of vec(T (x) S) with respect to [theta_T; theta_S].
Mat kron_derivative(const CrbInput& in, Vec* null_direction) {
  const StDims dims(in.temporal.rows(), in.spatial.rows());
  const Vec theta_t = structure_coords(in.temporal, in.struct_T, "T");
  const Vec theta_s = structure_coords(in.spatial, in.struct_S, "S");
  const Index mt = theta_t.size(), ms = theta_s.size();

  // Gamma_0 = [theta_S (x) I_mT, I_mS (x) theta_T]
  Mat gamma(ms * mt, mt + ms);
  gamma.leftCols(mt) = Eigen::kroneckerProduct(theta_s, Mat::Identity(mt, mt));
  gamma.rightCols(ms) = Eigen::kroneckerProduct(Mat::Identity(ms, ms), theta_t);

  Mat lifted;
  if (in.struct_T || in.struct_S) {
    const Mat pt = in.struct_T.value_or(Mat::Identity(mt, mt));
    const Mat ps = in.struct_S.value_or(Mat::Identity(ms, ms));
    lifted = Eigen::kroneckerProduct(ps, pt).eval() * gamma;
  } else {
    lifted = std::move(gamma);
  }
  if (null_direction) {
    null_direction->resize(mt + ms);
    null_direction->head(mt) = theta_t;
    null_direction->tail(ms) = -theta_s;
  }
  return apply_perm(commutation_and_rearrangement_perms(dims).rearrange, lifted);
}

// (Sigma^{-T} (x) Sigma^{-1}) x, column by column, via vec(Sigma^{-1} X Sigma^{-1}).
Mat apply_inverse_kron(const Mat& sigma_inv, const Mat& x) {
  const Index d = sigma_inv.rows();
  Mat out(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const Eigen::Map<const Mat> m(x.col(c).data(), d, d);
    const Mat y = sigma_inv * m * sigma_inv;
    out.col(c) = Eigen::Map<const Vec>(y.data(), y.size());
  }
  return out;
}

// Symmetric part of each column read as a d x d matrix.
Mat symmetrize_columns(const Mat& x, Index d) {
  Mat out(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const Eigen::Map<const Mat> m(x.col(c).data(), d, d);
    const Mat y = (m + m.transpose()) / 2.0;
    out.col(c) = Eigen::Map<const Vec>(y.data(), y.size());
  }
  return out;
}

// Pseudoinverse of a symmetric PSD matrix with the known null direction
// projected out and eigenvalues below dim * lambda_max * eps discarded.
Mat pinv_projected(const Mat& m, const Vec& null_direction) {
  Mat proj = Mat::Identity(m.rows(), m.cols());
  if (null_direction.squaredNorm() > 0.0)
    proj -= null_direction * null_direction.transpose() / null_direction.squaredNorm();
  Mat sym = proj * m * proj;
  sym = (sym + sym.transpose()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  const Vec& lambda = eig.eigenvalues();
  const double cutoff = static_cast<double>(m.rows()) * lambda.cwiseAbs().maxCoeff() *
                        std::numeric_limits<double>::epsilon();
  Vec inv = Vec::Zero(lambda.size());
  for (Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) > cutoff) inv(i) = 1.0 / lambda(i);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

Mat sigma_inverse(const Mat& sigma) {
  Eigen::LLT<Mat> llt(sigma);
  Mat inv = llt.solve(Mat::Identity(sigma.rows(), sigma.cols()));
  return (inv + inv.transpose()) / 2.0;
}

}  // namespace

Mat kron_fim_middle(const CrbInput& input) {
  require_pd(input.temporal, "temporal factor");
  require_pd(input.spatial, "spatial factor");
  const Mat deriv = kron_derivative(input, nullptr);
  const Mat sigma = Eigen::kroneckerProduct(input.temporal, input.spatial);
  const Mat m = deriv.transpose() * apply_inverse_kron(sigma_inverse(sigma), deriv);
  return (m + m.transpose()) / 2.0;
}

Mat fisher_crb_sigma(const CrbInput& input, const CrbOptions& opts) {
  require_pd(input.temporal, "temporal factor");
  require_pd(input.spatial, "spatial factor");
  const Index d = input.temporal.rows() * input.spatial.rows();
  check_size(d, opts);

  Vec null_direction;
  Mat deriv = kron_derivative(input, &null_direction);
  if (input.convention == CrbConvention::real_gaussian) deriv = symmetrize_columns(deriv, d);
  const Mat sigma = Eigen::kroneckerProduct(input.temporal, input.spatial);
  Mat middle = deriv.transpose() * apply_inverse_kron(sigma_inverse(sigma), deriv);
  middle = (middle + middle.transpose()) / 2.0;

  Mat f = deriv * pinv_projected(middle, null_direction) * deriv.transpose();
  if (input.convention == CrbConvention::real_gaussian) f *= 2.0;
  return (f + f.transpose()) / 2.0;
}

Mat crb_unstructured(const Mat& sigma, CrbConvention convention, const CrbOptions& opts) {
  require_pd(sigma, "covariance");
  const Index d = sigma.rows();
  check_size(d, opts);
  const Mat sym = (sigma + sigma.transpose()) / 2.0;
  Mat f = Eigen::kroneckerProduct(sym, sym);
  if (convention == CrbConvention::real_gaussian) f += apply_perm(commutation_perm(d, d), f);
  return f;
}

Mat predictor_jacobian(const Mat& sigma, const PredictionTask& task) {
  task.validate();
  const Index d = task.dims.dim();
  if (sigma.rows() != d || sigma.cols() != d)
    throw ShapeError("predictor_jacobian: covariance size does not match task dims");
  const Mat sx = sigma(task.x_idx, task.x_idx);
  Eigen::LLT<Mat> llt((sx + sx.transpose()) / 2.0);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("predictor_jacobian: Sigma_x is not positive definite",
                            Eigen::SelfAdjointEigenSolver<Mat>(sx, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .minCoeff());
  const Mat sx_inv = llt.solve(Mat::Identity(sx.rows(), sx.cols()));
  const Mat a = sigma(task.y_idx, task.x_idx) * sx_inv;

  const Index ny = static_cast<Index>(task.y_idx.size());
  const Index nx = static_cast<Index>(task.x_idx.size());
  Mat jac = Mat::Zero(ny * nx, d * d);
  // Sigma_yx cells: dA_ij / d[Sigma_yx]_kl = [Sigma_x^{-1}]_lj when k = i.
  for (Index k = 0; k < ny; ++k)
    for (Index l = 0; l < nx; ++l) {
      const Index col = task.y_idx[static_cast<size_t>(k)] + task.x_idx[static_cast<size_t>(l)] * d;
      for (Index j = 0; j < nx; ++j) jac(k + j * ny, col) = sx_inv(l, j);
    }
  // Sigma_x cells: dA_ij / d[Sigma_x]_kl = -[Sigma_x^{-1}]_lj A_ik.
  for (Index k = 0; k < nx; ++k)
    for (Index l = 0; l < nx; ++l) {
      const Index col = task.x_idx[static_cast<size_t>(k)] + task.x_idx[static_cast<size_t>(l)] * d;
      for (Index j = 0; j < nx; ++j)
        for (Index i = 0; i < ny; ++i) jac(i + j * ny, col) = -sx_inv(l, j) * a(i, k);
    }
  return jac;
}

Mat crb_predictor_coeffs(const Mat& f_sigma, const Mat& jacobian) {
  if (f_sigma.rows() != f_sigma.cols() || jacobian.cols() != f_sigma.rows())
    throw ShapeError("crb_predictor_coeffs: Jacobian has " + std::to_string(jacobian.cols()) +
                     " columns, F_sigma is " + std::to_string(f_sigma.rows()) + "x" +
                     std::to_string(f_sigma.cols()));
  const Mat f = jacobian * f_sigma * jacobian.transpose();
  return (f + f.transpose()) / 2.0;
}

Mat asymptotic_error_cov(const Mat& f_a, const Mat& sigma_x, double n) {
  const Index nx = sigma_x.rows();
  if (sigma_x.cols() != nx || nx == 0 || f_a.rows() != f_a.cols() || f_a.rows() % nx != 0)
    throw ShapeError("asymptotic_error_cov: F_a is not indexed by (|y| x |x|) coefficient pairs");
  if (!(n > 0.0)) throw ArgumentError("asymptotic_error_cov: sample count must be positive");
  const Index ny = f_a.rows() / nx;
  Mat cov = Mat::Zero(ny, ny);
  for (Index i = 0; i < ny; ++i)
    for (Index j = 0; j < ny; ++j) {
      double acc = 0.0;
      for (Index k = 0; k < nx; ++k)
        for (Index l = 0; l < nx; ++l) acc += f_a(i + k * ny, j + l * ny) * sigma_x(k, l);
      cov(i, j) = acc / n;
    }
  return (cov + cov.transpose()) / 2.0;
}

std::vector<RmsePoint> predicted_rmse_curve(const Mat& f_a, const Mat& sigma_x, const Mat& cond_cov,
                                            std::span<const double> n_grid, RmseNormalization norm) {
  const double per = norm == RmseNormalization::per_variable
                         ? static_cast<double>(cond_cov.rows())
                         : 1.0;
  const double floor = cond_cov.trace();
  // tr Cov[e](n) = tr Cov[e](1) / n
  const double excess = asymptotic_error_cov(f_a, sigma_x, 1.0).trace();
  std::vector<RmsePoint> curve;
  for (double n : n_grid) {
    if (!(n > 0.0)) throw ArgumentError("predicted_rmse_curve: sample counts must be positive");
    curve.push_back({n, std::sqrt((excess / n + floor) / per)});
  }
  return curve;
}

CrbReport crb_report(const Mat& sigma, const std::optional<CrbInput>& kron, const PredictionTask& task,
                     std::span<const double> n_grid, CrbConvention convention,
                     RmseNormalization norm, std::optional<double> n_samples,
                     const CrbOptions& opts) {
  CrbReport report;
  if (kron) {
    CrbInput in = *kron;
    in.convention = convention;
    report.f_sigma = fisher_crb_sigma(in, opts);
  } else {
    report.f_sigma = crb_unstructured(sigma, convention, opts);
  }
  const Mat jac = predictor_jacobian(sigma, task);
  report.f_a = crb_predictor_coeffs(report.f_sigma, jac);
  const Mat sx = sigma(task.x_idx, task.x_idx);
  report.err_cov = asymptotic_error_cov(report.f_a, sx, n_samples.value_or(1.0));
  report.cond_cov = fit_predictor(sigma, Vec::Zero(sigma.rows()), task, 0.0).cond_cov;
  report.rmse_curve = predicted_rmse_curve(report.f_a, sx, report.cond_cov, n_grid, norm);
  return report;
}

}  // namespace kronsum
