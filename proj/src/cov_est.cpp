#include "kronsum/cov_est.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "kronsum/errors.hpp"

namespace kronsum {

namespace {

void check_rank(Index r, const StDims& dims, const char* who) {
  if (r < 1 || r > dims.max_rank())
    throw ArgumentError(std::string(who) + ": rank " + std::to_string(r) +
                        " outside [1, min(p^2, q^2) = " + std::to_string(dims.max_rank()) + "]");
}

void check_square(const SampleCovariance& sc, const char* who) {
  if (sc.matrix.rows() != sc.dims.dim() || sc.matrix.cols() != sc.dims.dim())
    throw ShapeError(std::string(who) + ": covariance is " + std::to_string(sc.matrix.rows()) +
                     "x" + std::to_string(sc.matrix.cols()) + ", dims require " +
                     std::to_string(sc.dims.dim()));
}

}  // namespace

Mat KronSumModel::kron_part() const {
  return kron_sum_assemble<double>(factors, std::nullopt, dims);
}

Mat KronSumModel::assemble() const {
  Mat out = kron_sum_assemble<double>(factors, diag_load, dims);
  if (scale) out = scale->asDiagonal() * out * scale->asDiagonal();
  return (out + out.transpose()) / 2.0;
}

Mat sliding_window_samples(const FrameSeries& series, const StDims& dims) {
  if (series.width() != dims.q)
    throw ShapeError("sliding_window_samples: series has " + std::to_string(series.width()) +
                     " features per frame, dims expect q=" + std::to_string(dims.q));
  const Index length = series.length();
  if (length < dims.p)
    throw DataError("sliding_window_samples: series of " + std::to_string(length) +
                    " frames is shorter than the window p=" + std::to_string(dims.p));
  const Index n = length - dims.p + 1;
  Mat samples(n, dims.dim());
  for (Index m = 0; m < n; ++m)
    for (Index f = 0; f < dims.p; ++f)
      samples.block(m, f * dims.q, 1, dims.q) = series.frames.row(m + f);
  return samples;
}

SampleCovariance sample_covariance(const Mat& samples, const StDims& dims) {
  if (samples.cols() != dims.dim())
    throw ShapeError("sample_covariance: samples have " + std::to_string(samples.cols()) +
                     " columns, dims require " + std::to_string(dims.dim()));
  if (samples.rows() < 1) throw DataError("sample_covariance: need at least one sample");
  SampleCovariance sc;
  sc.dims = dims;
  sc.n_samples = samples.rows();
  sc.mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - sc.mean.transpose();
  const Mat m = (centered.transpose() * centered) / static_cast<double>(samples.rows());
  sc.matrix = (m + m.transpose()) / 2.0;
  return sc;
}

SampleCovariance sample_covariance(const Mat& samples) {
  return sample_covariance(samples, StDims(1, std::max<Index>(samples.cols(), 1)));
}

Correlation to_correlation(const Mat& matrix) {
  if (matrix.rows() != matrix.cols()) throw ShapeError("to_correlation: matrix must be square");
  const Vec diag = matrix.diagonal();
  const double top = diag.size() ? diag.maxCoeff() : 0.0;
  const double eps = std::numeric_limits<double>::epsilon() * std::max(top, 0.0);
  for (Index d = 0; d < diag.size(); ++d)
    if (!(diag(d) > eps)) throw DegenerateVariableError(d, diag(d));
  Correlation out;
  out.scale = diag.cwiseSqrt();
  const Vec inv = out.scale.cwiseInverse();
  out.matrix = inv.asDiagonal() * matrix * inv.asDiagonal();
  out.matrix = (out.matrix + out.matrix.transpose()) / 2.0;
  out.matrix.diagonal().setOnes();
  return out;
}

Correlation to_correlation(const SampleCovariance& sc) { return to_correlation(sc.matrix); }

KronSumModel estimate_kron_ls(const SampleCovariance& sc, Index r) {
  check_square(sc, "estimate_kron_ls");
  check_rank(r, sc.dims, "estimate_kron_ls");
  if (!sc.matrix.allFinite()) throw DataError("estimate_kron_ls: non-finite covariance");
  const auto b = rearrange(sc.matrix, sc.dims);
  Eigen::BDCSVD<Mat> svd(b.entries, Eigen::ComputeThinU | Eigen::ComputeThinV);

  KronSumModel model;
  model.dims = sc.dims;
  for (Index i = 0; i < r; ++i)
    model.factors.push_back(factor_pair_from_columns(
        svd.matrixU().col(i) * svd.singularValues()(i), svd.matrixV().col(i), sc.dims,
        &model.warnings));
  return model;
}

KronSumModel estimate_kron_dl(const SampleCovariance& sc, Index r, const DlOptions& opts) {
  check_square(sc, "estimate_kron_dl");
  check_rank(r, sc.dims, "estimate_kron_dl");
  if (opts.extra_diag < 0.0) throw ArgumentError("estimate_kron_dl: extra_diag must be >= 0");

  KronSumModel model;
  model.dims = sc.dims;
  Mat working;
  if (opts.use_correlation) {
    Correlation corr = to_correlation(sc);
    working = std::move(corr.matrix);
    model.scale = std::move(corr.scale);
    model.fit_domain = FitDomain::correlation;
  } else {
    working = sc.matrix;
  }

  const auto b = rearrange(working, sc.dims);
  const auto fit = masked_rank_r_fit(b, dontcare_mask(sc.dims), r, opts.als);
  for (Index i = 0; i < r; ++i)
    model.factors.push_back(
        factor_pair_from_columns(fit.t.col(i), fit.s.col(i), sc.dims, &model.warnings));
  model.objective_trace = fit.objective_trace;
  if (!fit.converged)
    model.warnings.push_back("masked fit stopped at max_iter without meeting tol");

  const Vec fitted_diag = model.kron_part().diagonal();
  Vec load(sc.dims.dim());
  for (Index d = 0; d < load.size(); ++d)
    load(d) = std::max(0.0, working(d, d) - fitted_diag(d)) + opts.extra_diag;
  model.diag_load = std::move(load);
  return model;
}

Mat regularized_scm(const SampleCovariance& sc, double lambda) {
  if (lambda < 0.0) throw ArgumentError("regularized_scm: lambda must be >= 0");
  Mat out = sc.matrix;
  const double d = static_cast<double>(sc.matrix.rows());
  out.diagonal().array() += lambda * sc.matrix.trace() / d;
  return out;
}

KronSpectrum kron_spectrum(const SampleCovariance& sc, Index k) {
  check_square(sc, "kron_spectrum");
  if (k < 1 || k > sc.dims.max_rank())
    throw ArgumentError("kron_spectrum: count " + std::to_string(k) +
                        " outside [1, min(p^2, q^2) = " + std::to_string(sc.dims.max_rank()) + "]");
  const Vec sv = Eigen::BDCSVD<Mat>(rearrange(sc.matrix, sc.dims).entries).singularValues();
  KronSpectrum out;
  out.rms_energies.assign(static_cast<size_t>(k), 0.0);
  if (sv.size() == 0 || sv(0) == 0.0) return out;
  for (Index i = 0; i < k; ++i) out.rms_energies[static_cast<size_t>(i)] = sv(i) / sv(0);
  const double total = sv.squaredNorm();
  const double tail = sv.tail(sv.size() - 1).squaredNorm();
  out.pct_rmse_first = 100.0 * std::sqrt(tail / total);
  return out;
}

}  // namespace kronsum
